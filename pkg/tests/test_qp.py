import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetero_alloc.qp import QpProblem, QpSettings, kkt_ok, kkt_residuals, solve_qp


def random_qp(rng, n=None, m=None):
    n = n or int(rng.integers(1, 13))
    m = m if m is not None else int(rng.integers(0, 21))
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.1 * np.eye(n)
    c = rng.normal(size=n) * 3
    G = rng.normal(size=(m, n))
    z0 = rng.normal(size=n)
    d = G @ z0 + rng.uniform(0, 1, size=m)
    return QpProblem(Q, c, G, d)


def dual_oracle(p: QpProblem, max_iter=1_000_000, tol=1e-12):
    """Accelerated projected gradient on the dual, with adaptive restart.

    max_{lam >= 0}  -1/2 (c + G'lam)' Q^-1 (c + G'lam) - d'lam
    """
    Qi = np.linalg.inv(p.Q)
    if p.m == 0:
        z = -Qi @ p.c
        return p.objective(z), z
    H = p.G @ Qi @ p.G.T
    b = p.G @ Qi @ p.c + p.d
    L = np.linalg.eigvalsh(H)[-1]
    lam = np.zeros(p.m)
    y, t = lam.copy(), 1.0
    for _ in range(max_iter):
        grad = H @ y + b
        nxt = np.maximum(y - grad / L, 0.0)
        if np.max(np.abs(nxt - lam)) <= tol:
            lam = nxt
            break
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        if (y - nxt) @ (nxt - lam) > 0:   # restart when momentum points uphill
            t_new, y = 1.0, nxt
        else:
            y = nxt + ((t - 1) / t_new) * (nxt - lam)
        lam, t = nxt, t_new
    w = p.c + p.G.T @ lam
    dual = -0.5 * w @ Qi @ w - p.d @ lam
    return dual, -Qi @ w


def test_one_dimensional_bound():
    p = QpProblem([[2.0]], [0.0], [[-1.0]], [-1.0])
    s = solve_qp(p)
    assert s.ok
    assert s.z == pytest.approx([1.0], abs=1e-12)
    assert s.multipliers == pytest.approx([2.0], abs=1e-12)


def test_single_active_constraint():
    # min u^2 + delta^2  s.t.  -2u + delta >= 5
    p = QpProblem(2 * np.eye(2), np.zeros(2), [[2.0, -1.0]], [-5.0])
    s = solve_qp(p)
    assert s.z == pytest.approx([-2.0, 1.0], abs=1e-12)
    assert s.multipliers == pytest.approx([2.0], abs=1e-12)
    assert s.active == (0,)


def test_unconstrained():
    p = QpProblem(np.eye(3), -np.ones(3), np.zeros((0, 3)), np.zeros(0))
    s = solve_qp(p)
    np.testing.assert_allclose(s.z, np.ones(3), atol=1e-12)


def test_infeasible_reports_certificate():
    p = QpProblem(np.eye(1), [0.0], [[1.0], [-1.0]], [-1.0, -1.0])   # z <= -1 and z >= 1
    s = solve_qp(p)
    assert s.status == "infeasible"
    assert s.certificate is not None and s.certificate > 0


def test_unbounded_direction():
    p = QpProblem(np.zeros((2, 2)), [1.0, 0.0], [[0.0, 1.0]], [1.0])
    assert solve_qp(p).status == "unbounded"


def test_rejects_asymmetric_and_bad_shapes():
    with pytest.raises(ValueError):
        QpProblem([[1.0, 1.0], [0.0, 1.0]], [0, 0], np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), [0, 0], np.ones((2, 2)), [1.0])


def test_max_iter_status():
    rng = np.random.default_rng(3)
    p = random_qp(rng, n=8, m=20)
    assert solve_qp(p).iterations > 1
    assert solve_qp(p, settings=QpSettings(max_iter=1)).status == "max-iter"


def test_matches_dual_gradient_oracle_on_random_problems():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(200):
        p = random_qp(rng)
        s = solve_qp(p)
        assert s.ok
        ref, _ = dual_oracle(p)
        worst = max(worst, abs(s.objective - ref) / max(1.0, abs(ref)))
    assert worst <= 1e-6


qp_seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


@settings(max_examples=100, deadline=None)
@given(qp_seeds)
def test_kkt_residuals_small(seed):
    p = random_qp(np.random.default_rng(seed))
    s = solve_qp(p)
    assert s.ok
    r = kkt_residuals(p, s.z, s.multipliers)
    scale = max(1.0, float(np.max(np.abs(p.c))), float(np.max(np.abs(p.d), initial=0.0)))
    assert r["stationarity"] <= 1e-8 * scale
    assert r["primal"] <= 1e-8 * scale
    assert r["dual"] <= 1e-10
    assert r["complementarity"] <= 1e-8 * scale


@settings(max_examples=60, deadline=None)
@given(qp_seeds)
def test_nonbinding_constraint_leaves_solution(seed):
    rng = np.random.default_rng(seed)
    p = random_qp(rng)
    s = solve_qp(p)
    row = rng.normal(size=p.n)
    extra = QpProblem(p.Q, p.c, np.vstack([p.G, row]), np.append(p.d, row @ s.z + 1.0))
    np.testing.assert_allclose(solve_qp(extra).z, s.z, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(qp_seeds, st.floats(min_value=0.01, max_value=100.0))
def test_scaling_invariance(seed, scale):
    p = random_qp(np.random.default_rng(seed))
    s = solve_qp(p)
    scaled = solve_qp(QpProblem(scale * p.Q, scale * p.c, p.G, p.d))
    np.testing.assert_allclose(scaled.z, s.z, atol=1e-8 * max(1.0, np.max(np.abs(s.z))))


@settings(max_examples=60, deadline=None)
@given(qp_seeds)
def test_warm_start_from_previous_solution(seed):
    rng = np.random.default_rng(seed)
    p = random_qp(rng)
    first = solve_qp(p)
    nudged = QpProblem(p.Q, p.c + 1e-3 * rng.normal(size=p.n), p.G, p.d)
    cold = solve_qp(nudged)
    warm = solve_qp(nudged, warm_start=first)
    assert warm.ok and kkt_ok(nudged, warm)
    np.testing.assert_allclose(warm.z, cold.z, atol=1e-8 * max(1.0, np.max(np.abs(cold.z))))

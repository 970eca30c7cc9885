import time

import numpy as np
import pytest

from hetero_alloc import executor as executor_mod
from hetero_alloc.model import HeterogeneityModel, Hyperedge
from hetero_alloc.qp import kkt_residuals
from hetero_alloc.scenario import bundled_scenario
from hetero_alloc.sim import run_centralized, run_twin

TEAM_T = [[1, 1, 0], [0, 0, 1]]
TEAM_A = [
    [1, 0, 0, 0],
    [1, 1, 0, 0],
    [1, 1, 0, 0],
    [0, 1, 1, 1],
    [0, 0, 1, 1],
    [0, 0, 0, 1],
]
TEAM_CAPS = [
    [Hyperedge((0, 1)), Hyperedge((2,))],
    [Hyperedge((2,)), Hyperedge((3,))],
    [Hyperedge((3, 4, 5))],
]


@pytest.fixture
def sample_team():
    return HeterogeneityModel(TEAM_T, TEAM_A, TEAM_CAPS)


def random_model(rng, n_f=None, n_r=None, n_c=None, n_t=None, max_req=1):
    n_f = n_f or int(rng.integers(1, 9))
    n_r = n_r or int(rng.integers(1, 6))
    n_c = n_c or int(rng.integers(1, 4))
    n_t = n_t or int(rng.integers(1, 3))
    A = rng.integers(0, 2, size=(n_f, n_r))
    caps = []
    for _ in range(n_c):
        edges = []
        for _ in range(int(rng.integers(0, 4))):
            size = int(rng.integers(1, min(3, n_f) + 1))
            feats = rng.choice(n_f, size=size, replace=False)
            edges.append(Hyperedge(tuple(int(f) for f in feats), float(rng.choice([0.5, 1.0, 2.0]))))
        caps.append(edges)
    T = rng.integers(0, max_req + 1, size=(n_t, n_c))
    return HeterogeneityModel(T, A, caps)


class _KktLog:
    """Wraps the executor's QP solver and records the worst residual of every optimal solve."""

    def __init__(self):
        self.count = 0
        self.worst = 0.0
        self.failed = 0

    def wrap(self, solve):
        def inner(problem, warm_start=None, *a, **kw):
            sol = solve(problem, warm_start, *a, **kw)
            self.count += 1
            if sol.ok:
                r = kkt_residuals(problem, sol.z, sol.multipliers)
                self.worst = max(self.worst, max(r.values()))
            else:
                self.failed += 1
            return sol
        return inner


@pytest.fixture(scope="session")
def experiment_run():
    """Centralized run of the bundled experiment, with every execution QP solve checked."""
    sc = bundled_scenario("experiment")
    kkt = _KktLog()
    mp = pytest.MonkeyPatch()
    mp.setattr(executor_mod, "solve_qp", kkt.wrap(executor_mod.solve_qp))
    t0 = time.perf_counter()
    try:
        trace = run_centralized(sc)
    finally:
        mp.undo()
    return {"scenario": sc, "trace": trace, "kkt": kkt, "wall": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def experiment_twin():
    sc = bundled_scenario("experiment")
    return sc, run_twin(sc, latency=100)


@pytest.fixture(scope="session")
def experiment_twin_clean():
    sc = bundled_scenario("experiment").without_disturbances()
    return sc, run_twin(sc, latency=100)


def fd_grad(fun, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        g.flat[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def rel_close(a, b, rtol=1e-5, floor=1e-6):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(b), initial=0.0)), floor)
    return float(np.max(np.abs(a - b), initial=0.0)) <= rtol * scale

"""Convergence diagnostics.

* a Lyapunov trace, the sum over tasks of gamma(h_m)^2,
* a monotone-cost convergence check for goto-type scenarios,
* the quadratic-form matrices of the S-procedure certificate, and an
  eigenvalue grid probe for the multipliers,
* the bound on the input gap caused by a stale allocation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import nnls

from .executor import build_priority_constraints


# ---------------------------------------------------------------------------
# Lyapunov trace

def task_contexts(tasks, x, t, alpha):
    return [task.context(x, t, np.flatnonzero(np.asarray(alpha)[m])) for m, task in enumerate(tasks)]


def task_totals(tasks, x, t, alpha, contexts=None) -> np.ndarray:
    """h_m for every task: the sum of the contributions of the robots assigned to m."""
    alpha = np.asarray(alpha)
    if contexts is None:
        contexts = task_contexts(tasks, x, t, alpha)
    return np.array([task.total(x, t, np.flatnonzero(alpha[m]), contexts[m])
                     for m, task in enumerate(tasks)], dtype=float)


def lyapunov_value(tasks, gamma, x, t, alpha, contexts=None) -> float:
    """sum_m gamma(h_m)^2 with h_m summed over the robots ``alpha`` assigns to m."""
    if len(tasks) == 0:
        return 0.0
    g = np.asarray(gamma(task_totals(tasks, x, t, alpha, contexts)), dtype=float)
    return float(g @ g)


# ---------------------------------------------------------------------------
# cost-decrease convergence check

@dataclass
class ConvergenceReport:
    hypotheses_met: bool
    passed: bool | None
    reason: str = ""
    first_violation: int | None = None
    settled_step: int | None = None
    alpha_constant_from: int | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def convergence_hypotheses(scenario) -> tuple[bool, str]:
    """Driftless robots, static uncoupled tasks, every specialization entry positive."""
    if any(t.coordinated or t.time_varying for t in scenario.tasks):
        return False, "hypotheses not met: coupled or time-varying task"
    if np.any(scenario.model.specialization_matrix <= 0):
        return False, "hypotheses not met: some specialization is zero"
    if scenario.events or scenario.fields:
        return False, "hypotheses not met: disturbances present"
    return True, ""


def check_prop1_convergence(objective, u, alpha, delta=None, hypotheses=(True, ""),
                            u_tol: float = 1e-3, tail: float = 0.25) -> ConvergenceReport:
    """Strict decrease of the allocation cost until the inputs settle, then a constant tail.

    ``objective`` has one entry per step; ``u`` is (steps, robots, inputs);
    ``alpha`` is (steps, tasks, robots); ``delta`` is (steps, robots, tasks)
    and only its allocated entries are checked at the final step.
    """
    ok, why = hypotheses
    if not ok:
        return ConvergenceReport(False, None, why or "hypotheses not met")
    J = np.asarray(objective, dtype=float)
    U = np.abs(np.asarray(u, dtype=float)).reshape(len(J), -1)
    umax = U.max(axis=1) if U.size else np.zeros(len(J))
    settled = np.flatnonzero(umax < u_tol)
    k_star = int(settled[0]) if settled.size else len(J)
    for k in range(min(k_star, len(J) - 1)):
        if not J[k + 1] < J[k]:
            return ConvergenceReport(True, False, f"cost did not decrease at step {k}",
                                     first_violation=k, settled_step=k_star)
    if k_star >= len(J):
        return ConvergenceReport(True, False, "inputs never dropped below tolerance",
                                 settled_step=None)
    A = np.asarray(alpha)
    if delta is not None:
        # only allocated pairs can reach zero slack; the others keep the barrier of a task never approached
        D = np.abs(np.asarray(delta, dtype=float))
        if D.size and A.size:
            held = D[-1][A[-1].T == 1]
            if held.size and held.max() >= u_tol:
                return ConvergenceReport(True, False, "terminal slack above tolerance", settled_step=k_star)
    start = int(math.floor(len(A) * (1 - tail)))
    first_const = len(A) - 1
    while first_const > 0 and np.array_equal(A[first_const - 1], A[-1]):
        first_const -= 1
    if first_const > start:
        return ConvergenceReport(True, False, f"allocation still changing at step {first_const - 1}",
                                 first_violation=first_const - 1, settled_step=k_star,
                                 alpha_constant_from=first_const)
    return ConvergenceReport(True, True, "converged", settled_step=k_star,
                             alpha_constant_from=first_const)


# ---------------------------------------------------------------------------
# S-procedure matrices

@dataclass
class LmiInstance:
    B0: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    c: float
    blocks: dict           # name -> slice into phi
    slack_bar: np.ndarray  # block-diagonal stacked priority slack coefficients
    alloc_bar: np.ndarray
    rhs_bar: np.ndarray
    A_alpha: np.ndarray
    b_alpha: np.ndarray
    A_delta: np.ndarray
    b_delta: np.ndarray


def _sym(M):
    return 0.5 * (M + M.T)


def build_B_matrices(tasks, dynamics, gamma, x, t, alpha, n_max=None, kappa: float = 1e6,
                     delta_max: float = 1e3, c: float = 0.1) -> LmiInstance:
    """Quadratic-form matrices over phi = [gamma(h), u, delta, alpha_bar, 1].

    ``u``, ``delta`` and ``alpha_bar`` are stacked robot by robot. Time
    derivatives of time-varying tasks are not part of these matrices.
    """
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=int)
    n_t, n_r = alpha.shape
    n_u = dynamics.n_u
    n_x = x.shape[1]
    ctxs = task_contexts(tasks, x, t, alpha)
    sizes = [("gamma", n_t), ("u", n_u * n_r), ("delta", n_t * n_r), ("alpha", n_t * n_r), ("one", 1)]
    blocks, off = {}, 0
    for name, s in sizes:
        blocks[name] = slice(off, off + s)
        off += s
    N = off

    # Jacobians of the task totals with respect to every robot's state
    dh = np.zeros((n_t, n_r, n_x))
    for m, task in enumerate(tasks):
        for i in range(n_r):
            if alpha[m, i]:
                dh[m, i] = task.grad(i, x, t, ctxs[m])
    h = task_totals(tasks, x, t, alpha, ctxs)
    dgam = np.array([(float(gamma(hm + 1e-6)) - float(gamma(hm - 1e-6))) / 2e-6 for hm in h])
    Lg = np.zeros((n_t, n_r, n_u))     # Lg[m, i] = dh_m/dx_i g_i
    Lf = np.zeros((n_t, n_r))          # Lf[m, i] = dh_m/dx_i f_i
    for i in range(n_r):
        gi = dynamics.g(x[i])
        fi = dynamics.f(x[i])
        for m in range(n_t):
            Lg[m, i] = dh[m, i] @ gi
            Lf[m, i] = dh[m, i] @ fi
    Dg = dgam[:, None] * Lg.reshape(n_t, n_r * n_u)
    Df = dgam * Lf.sum(axis=1)

    G_, U_, D_, A_, O_ = (blocks[k] for k in ("gamma", "u", "delta", "alpha", "one"))

    B0 = np.zeros((N, N))
    B0[G_, G_] = c * np.eye(n_t)
    B0[G_, U_] = Dg
    B0[U_, G_] = Dg.T
    B0[G_, O_] = Df[:, None]
    B0[O_, G_] = Df[None, :]

    # -sum_{i,m} delta_im (Lf_im + Lg_im u_i + gamma_m + delta_im)
    B1 = np.zeros((N, N))
    for i in range(n_r):
        di = slice(D_.start + i * n_t, D_.start + (i + 1) * n_t)
        ui = slice(U_.start + i * n_u, U_.start + (i + 1) * n_u)
        B1[G_, di] = -0.5 * np.eye(n_t)
        B1[di, G_] = -0.5 * np.eye(n_t)
        B1[ui, di] = -0.5 * Lg[:, i, :].T
        B1[di, ui] = -0.5 * Lg[:, i, :]
        B1[di, O_] = -0.5 * Lf[:, i][:, None]
        B1[O_, di] = -0.5 * Lf[:, i][None, :]
    B1[D_, D_] = -np.eye(n_t * n_r)

    pc = build_priority_constraints(n_t, kappa, delta_max) if n_t > 1 else None
    if pc is not None:
        S = pc.slack_coef / kappa
        P = pc.alloc_coef / kappa
        R = pc.rhs / kappa
    else:
        S = np.zeros((0, n_t))
        P = np.zeros((0, n_t))
        R = np.zeros(0)
    Sb = np.kron(np.eye(n_r), S)
    Pb = np.kron(np.eye(n_r), P)
    Rb = np.kron(np.ones(n_r), R)
    # (P a)'(S d + P a - R) <= 0 holds whenever S d + P a <= R and P a >= 0
    B2 = np.zeros((N, N))
    B2[D_, A_] = 0.5 * Sb.T @ Pb
    B2[A_, D_] = 0.5 * Pb.T @ Sb
    B2[A_, A_] = Pb.T @ Pb
    B2[A_, O_] = -0.5 * (Pb.T @ Rb)[:, None]
    B2[O_, A_] = -0.5 * (Pb.T @ Rb)[None, :]

    # box rows with non-negative coefficients: (A z)'(A z - b) <= 0
    A_d = np.eye(n_t * n_r)
    b_d = np.full(n_t * n_r, delta_max)
    rows, rhs = [], []
    for i in range(n_r):
        r = np.zeros(n_t * n_r)
        r[i * n_t:(i + 1) * n_t] = 1.0
        rows.append(r)
        rhs.append(1.0)
    nm = np.full(n_t, n_r) if n_max is None else np.asarray(n_max)
    for m in range(n_t):
        r = np.zeros(n_t * n_r)
        r[m::n_t] = 1.0
        rows.append(r)
        rhs.append(float(nm[m]))
    rows.extend(np.eye(n_t * n_r))
    rhs.extend([1.0] * (n_t * n_r))
    A_a = np.array(rows)
    b_a = np.array(rhs)
    B3 = np.zeros((N, N))
    B3[D_, D_] = A_d.T @ A_d
    B3[A_, A_] = A_a.T @ A_a
    B3[D_, O_] = -0.5 * (A_d.T @ b_d)[:, None]
    B3[O_, D_] = -0.5 * (A_d.T @ b_d)[None, :]
    B3[A_, O_] = -0.5 * (A_a.T @ b_a)[:, None]
    B3[O_, A_] = -0.5 * (A_a.T @ b_a)[None, :]

    return LmiInstance(_sym(B0), _sym(B1), _sym(B2), _sym(B3), c, blocks, Sb, Pb, Rb, A_a, b_a, A_d, b_d)


def assemble_phi(gamma_h, u, delta, alpha) -> np.ndarray:
    """phi = [gamma(h), u, delta, alpha_bar, 1]; alpha is [task, robot]."""
    alpha = np.asarray(alpha, dtype=float)
    return np.concatenate([np.ravel(gamma_h), np.ravel(u), np.ravel(delta), alpha.T.reshape(-1), [1.0]])


@dataclass
class LmiProbeResult:
    feasible: bool
    tau: tuple | None
    best_min_eig: float
    best_tau: tuple
    obstruction: str = ""     # non-empty when no tau > 0 can work, whatever the grid

    def to_dict(self):
        note = self.obstruction or "grid search; a miss is not a proof of infeasibility"
        return {"feasible": self.feasible, "tau": self.tau, "best_min_eig": self.best_min_eig,
                "best_tau": self.best_tau, "note": note}


def lmi_obstruction(inst: LmiInstance, tol: float = 1e-10) -> str:
    """Reason no tau >= 0 can make the combination positive semidefinite, or "".

    On a diagonal block where B1, B2 and B3 all vanish the combination equals
    -B0 for every tau, so a negative eigenvalue there settles the question.
    If that block is identically zero, its off-diagonal rows must vanish too,
    which needs sum_j tau_j B_j[rows] = B0[rows] exactly (checked by
    non-negative least squares).
    """
    Bs = (inst.B1, inst.B2, inst.B3)
    for name, sl in inst.blocks.items():
        if sl.stop == sl.start or any(np.max(np.abs(B[sl, sl])) > tol for B in Bs):
            continue
        diag = -inst.B0[sl, sl]
        if np.linalg.eigvalsh(_sym(diag))[0] < -tol:
            return f"block {name!r}: -B0 has a negative eigenvalue there and no multiplied matrix touches it"
        if np.max(np.abs(diag)) <= tol:
            cols = np.column_stack([B[sl].ravel() for B in Bs])
            _, resid = nnls(cols, inst.B0[sl].ravel())
            if resid > tol * max(1.0, float(np.max(np.abs(inst.B0)))):
                return f"block {name!r}: zero diagonal block with off-diagonal coupling no tau cancels"
    return ""


def tau_grid(n: int = 20, lo: float = 1e-3, hi: float = 1e3):
    vals = np.logspace(math.log10(lo), math.log10(hi), n)
    return itertools.product(vals, vals, vals)


def probe_lmi(inst: LmiInstance, grid=None, tol: float = 1e-8) -> LmiProbeResult:
    """Search tau > 0 with tau1 B1 + tau2 B2 + tau3 B3 - B0 positive semidefinite."""
    grid = tau_grid() if grid is None else grid
    why = lmi_obstruction(inst)
    best = (-math.inf, None)
    for tau in grid:
        M = tau[0] * inst.B1 + tau[1] * inst.B2 + tau[2] * inst.B3 - inst.B0
        lam = float(np.linalg.eigvalsh(_sym(M))[0])
        if lam > best[0]:
            best = (lam, tuple(float(v) for v in tau))
        if lam >= -tol:
            return LmiProbeResult(True, tuple(float(v) for v in tau), lam, tuple(float(v) for v in tau))
    return LmiProbeResult(False, None, best[0], best[1], why)


# ---------------------------------------------------------------------------
# stale-allocation bound

MAX_MINORS = 2_000_000


def _count_minors(r, c):
    return sum(math.comb(r, s) * math.comb(c, s) for s in range(1, min(r, c) + 1))


def max_abs_minor(M, max_cols: int = 12, max_minors: int = MAX_MINORS) -> float:
    """Largest |det| over all square submatrices of ``M`` (exhaustive)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    r, c = M.shape
    if c > max_cols or _count_minors(r, c) > max_minors:
        raise ValueError(f"matrix {r}x{c} too large for exhaustive minor enumeration")
    best = 0.0
    for s in range(1, min(r, c) + 1):
        for rows in itertools.combinations(range(r), s):
            sub_r = M[list(rows)]
            for cols in itertools.combinations(range(c), s):
                v = abs(np.linalg.det(sub_r[:, list(cols)])) if s > 1 else abs(sub_r[0, cols[0]])
                if v > best:
                    best = v
    return float(best)


def _bareiss_det(rows):
    """Exact determinant of a square list-of-lists of Fractions."""
    a = [list(r) for r in rows]
    n = len(a)
    sign = 1
    prev = Fraction(1)
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return Fraction(0)
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def max_abs_minor_exact(M, max_cols: int = 12, max_minors: int = MAX_MINORS) -> Fraction:
    """Same quantity as :func:`max_abs_minor`, enumerated columns-first in exact arithmetic."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    r, c = M.shape
    if c > max_cols or _count_minors(r, c) > max_minors:
        raise ValueError(f"matrix {r}x{c} too large for exhaustive minor enumeration")
    F = [[Fraction(float(v)) for v in row] for row in M]
    best = Fraction(0)
    for s in range(min(r, c), 0, -1):
        for cols in itertools.combinations(range(c - 1, -1, -1), s):
            for rows in itertools.combinations(range(r - 1, -1, -1), s):
                v = abs(_bareiss_det([[F[i][j] for j in cols] for i in rows]))
                if v > best:
                    best = v
    return best


@dataclass(frozen=True)
class BoundParameters:
    L_qp: float
    L_miqp: float
    L_x: float
    latency: int
    dt: float
    m: float = 1.0

    def __post_init__(self):
        for name in ("L_qp", "L_miqp", "L_x", "dt", "m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.latency < 0:
            raise ValueError("latency must be non-negative")


def staleness_bound(params: BoundParameters, M_k, M_kn, n_tasks: int, n_robots: int) -> float:
    """Bound on |u - u_hat|_inf when the allocation is ``latency`` steps old.

    ``M_k`` and ``M_kn`` are the augmented constraint matrices [A | b] of the
    allocation problem at the snapshot step and at the current step.
    """
    d_k = max_abs_minor(M_k)
    d_kn = max_abs_minor(M_kn)
    miqp = params.L_qp * n_tasks ** 2 * n_robots ** 3 * params.m * (d_k + d_kn)
    timing = params.L_qp * params.L_miqp * params.L_x * params.latency * params.dt
    return float(miqp + timing)


def constraint_matrix(problem) -> np.ndarray:
    """Augmented [A | b] of the joint mixed-integer problem at the problem's state."""
    from .allocator import joint_qp
    qp, _ = joint_qp(problem, with_alpha=True)
    return np.hstack([qp.G, qp.d[:, None]])

"""Dense primal active-set solver for small convex quadratic programs.

Solves::

    minimize    0.5 z'Qz + c'z
    subject to  G z <= d

with Q symmetric positive semidefinite. A feasible start comes from the warm
start when it is feasible, otherwise from a phase-1 linear program solved by
the same active-set loop. Directions of zero curvature are followed as rays
until a constraint blocks them, so LPs and singular Q are handled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max-iter"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class QpSettings:
    """Tolerances for :func:`solve_qp`. All in the row-normalized scale."""

    feas_tol: float = 1e-9       # primal feasibility of a start point / final point
    dual_tol: float = 1e-11      # multipliers above -dual_tol count as non-negative
    step_tol: float = 1e-13      # a direction shorter than this is treated as zero
    rank_tol: float = 1e-10      # relative singular-value cutoff for the working set
    curv_tol: float = 1e-12      # relative eigenvalue cutoff for zero curvature
    phase1_tol: float = 1e-8     # phase-1 optimum above this means infeasible
    kkt_tol: float = 1e-8        # reported by ``QpSolution.kkt_ok``
    max_iter: int | None = None  # default 10 * (n + m)**2


DEFAULT_SETTINGS = QpSettings()


@dataclass(frozen=True)
class QpProblem:
    Q: np.ndarray
    c: np.ndarray
    G: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        if Q.shape != (n, n):
            raise ValueError(f"Q has shape {Q.shape}, expected {(n, n)}")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(Q), initial=0.0)):
            raise ValueError("Q must be symmetric")
        G = np.asarray(self.G, dtype=float)
        if G.size == 0:
            G = np.zeros((0, n))
        G = G.reshape(-1, n)
        d = np.asarray(self.d, dtype=float).reshape(-1)
        if d.size != G.shape[0]:
            raise ValueError(f"G has {G.shape[0]} rows but d has {d.size} entries")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.d.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.Q @ z + self.c @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    status: str
    multipliers: np.ndarray
    active: tuple = ()
    iterations: int = 0
    certificate: float | None = None   # phase-1 optimum when infeasible
    kkt: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(problem: QpProblem, z, lam) -> dict:
    """Stationarity, primal, dual and complementarity residuals (absolute, original scale)."""
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    grad = problem.Q @ z + problem.c + problem.G.T @ lam
    slack = problem.G @ z - problem.d
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)),
        "primal": float(np.max(slack, initial=0.0)),
        "dual": float(max(0.0, -np.min(lam, initial=0.0))),
        "complementarity": float(abs(lam @ slack)) if lam.size else 0.0,
    }


def _independent_subset(rows: np.ndarray, idx, rank_tol):
    """Greedy linearly independent subset of ``rows[idx]`` (in index order)."""
    keep = []
    basis = np.zeros((0, rows.shape[1]))
    for j in idx:
        cand = np.vstack([basis, rows[j]])
        s = np.linalg.svd(cand, compute_uv=False)
        if s[-1] > rank_tol * max(1.0, s[0]):
            keep.append(j)
            basis = cand
    return keep


def _full_row_rank(rows: np.ndarray, rank_tol) -> bool:
    if not rows.shape[0]:
        return True
    sv = np.linalg.svd(rows, compute_uv=False)
    return sv.size == rows.shape[0] and sv[-1] > rank_tol * max(1.0, sv[0])


class _ActiveSet:
    """Primal active-set iterations on a row-normalized problem with a feasible start."""

    def __init__(self, Q, c, G, d, settings: QpSettings, max_iter: int):
        self.Q, self.c, self.G, self.d = Q, c, G, d
        self.s = settings
        self.max_iter = max_iter
        self.qscale = max(1.0, float(np.max(np.abs(Q), initial=0.0)))

    def _null_space(self, W):
        n = self.c.size
        if not W:
            return np.eye(n)
        A = self.G[W]
        _, sv, Vt = np.linalg.svd(A)
        r = int(np.sum(sv > self.s.rank_tol * max(1.0, sv[0])))
        return Vt[r:].T

    def _direction(self, z, W):
        """Return (p, is_ray). ``p`` is zero when z is stationary on the face."""
        g = self.Q @ z + self.c
        Z = self._null_space(W)
        if Z.shape[1] == 0:
            return np.zeros_like(z), False
        gr = Z.T @ g
        Hr = Z.T @ self.Q @ Z
        w, U = np.linalg.eigh(Hr)
        pos = w > self.s.curv_tol * self.qscale
        if not np.all(pos):
            Un = U[:, ~pos]
            gn = Un @ (Un.T @ gr)
            if np.linalg.norm(gn) > self.s.step_tol * max(1.0, np.linalg.norm(g)):
                return -Z @ gn, True
        Up = U[:, pos]
        pr = -Up @ ((Up.T @ gr) / w[pos])
        return Z @ pr, False

    def _multipliers(self, z, W):
        if not W:
            return np.zeros(0)
        g = self.Q @ z + self.c
        lam, *_ = np.linalg.lstsq(self.G[W].T, -g, rcond=None)
        return lam

    def run(self, z, W):
        it = 0
        bland = False
        on_face = False   # set after an unblocked Newton step: z is the face minimizer
        W = list(W)
        while it < self.max_iter:
            it += 1
            if on_face:
                p, ray = np.zeros_like(z), False
            else:
                p, ray = self._direction(z, W)
            pnorm = np.linalg.norm(p)
            if on_face or (pnorm <= self.s.step_tol * max(1.0, np.linalg.norm(z)) and not ray):
                on_face = False
                lam = self._multipliers(z, W)
                if lam.size == 0 or np.min(lam) >= -self.s.dual_tol:
                    return z, W, lam, OPTIMAL, it
                if bland:
                    neg = [k for k in range(len(W)) if lam[k] < -self.s.dual_tol]
                    drop = min(neg, key=lambda k: W[k])
                else:
                    drop = int(np.argmin(lam))
                W.pop(drop)
                continue
            # ratio test
            Gp = self.G @ p
            slack = self.d - self.G @ z
            step = np.inf if ray else 1.0
            block = -1
            inW = np.zeros(self.d.size, dtype=bool)
            inW[W] = True
            cand = np.flatnonzero((~inW) & (Gp > self.s.step_tol * pnorm))
            if cand.size:
                ratios = np.maximum(slack[cand], 0.0) / Gp[cand]
                rmin = ratios.min()
                if rmin < step or (ray and np.isfinite(rmin)):
                    tied = cand[ratios <= rmin + 1e-14 * max(1.0, abs(rmin))]
                    block = int(tied.min())
                    step = float(rmin)
            if not np.isfinite(step):
                return z, W, np.zeros(len(W)), UNBOUNDED, it
            z = z + step * p
            if block >= 0:
                W.append(block)
                bland = step <= self.s.step_tol
            else:
                on_face = not ray
        return z, W, self._multipliers(z, W), MAX_ITER, it


def _polish(Q, c, G, d, z, W, s: QpSettings):
    """One least-squares KKT correction on the final active face."""
    n = c.size
    k = len(W)
    A = G[W] if k else np.zeros((0, n))
    K = np.block([[Q, A.T], [A, np.zeros((k, k))]])
    lam0, *_ = np.linalg.lstsq(A.T, -(Q @ z + c), rcond=None) if k else (np.zeros(0),)
    r = np.concatenate([-(Q @ z + c + A.T @ lam0), d[W] - A @ z])
    corr, *_ = np.linalg.lstsq(K, r, rcond=None)
    z_new = z + corr[:n]
    lam_new = lam0 + corr[n:]
    ok_primal = np.all(G @ z_new - d <= s.feas_tol) if d.size else True

    def resid(zz, ll):
        return np.max(np.abs(Q @ zz + c + A.T @ ll), initial=0.0) + np.max(np.abs(A @ zz - d[W]), initial=0.0)

    # the correction must not trade stationarity for a wrong-signed multiplier
    ok_dual = np.min(lam_new, initial=0.0) >= min(-s.dual_tol, np.min(lam0, initial=0.0))
    if ok_primal and ok_dual and resid(z_new, lam_new) <= resid(z, lam0):
        return z_new, lam_new
    return z, lam0


def _try_face(problem, G, d, live, norms, W, s: QpSettings):
    """Solve the equality QP on face ``W`` and accept it only if it satisfies KKT."""
    Q, c = problem.Q, problem.c
    n, k = c.size, len(W)
    A = G[W]
    K = np.block([[Q, A.T], [A, np.zeros((k, k))]])
    rhs = np.concatenate([-c, d[W]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    z, lam = sol[:n], sol[n:]
    if k and np.min(lam) < -s.dual_tol:
        return None
    if d.size and np.max(G @ z - d) > s.feas_tol:
        return None
    if np.max(np.abs(K @ sol - rhs)) > s.kkt_tol * max(1.0, np.max(np.abs(rhs))):
        return None
    lam = np.maximum(lam, 0.0)
    lam_full = np.zeros(problem.m)
    if k:
        lam_full[live[W]] = lam / norms[live[W]]
    out = QpSolution(z=z, objective=problem.objective(z), status=OPTIMAL, multipliers=lam_full,
                     active=tuple(sorted(int(live[j]) for j in W)), iterations=0)
    out.kkt = kkt_residuals(problem, z, lam_full)
    return out


def solve_qp(problem: QpProblem, warm_start=None, settings: QpSettings = DEFAULT_SETTINGS) -> QpSolution:
    """Solve a convex QP with inequality constraints.

    Parameters
    ----------
    problem : QpProblem
    warm_start : array or QpSolution, optional
        Initial guess. A point is used directly when feasible, otherwise as
        the phase-1 start. A previous solution of a nearby problem also
        contributes its active set: if that face satisfies the optimality
        conditions here, it is returned without iterating.
    settings : QpSettings
    """
    guess = None
    if isinstance(warm_start, QpSolution):
        guess, warm_start = warm_start.active, (warm_start.z if warm_start.status == OPTIMAL else None)
    n, m = problem.n, problem.m
    max_iter = settings.max_iter or 10 * (n + m) ** 2 + 10
    Q, c = problem.Q, problem.c
    norms = np.linalg.norm(problem.G, axis=1) if m else np.zeros(0)
    zero_rows = norms <= 1e-300
    if np.any(problem.d[zero_rows] < -settings.feas_tol):
        bad = float(-np.min(problem.d[zero_rows]))
        return QpSolution(np.zeros(n), np.nan, INFEASIBLE, np.zeros(m), certificate=bad)
    live = np.flatnonzero(~zero_rows)
    G = problem.G[live] / norms[live, None]
    d = problem.d[live] / norms[live]
    if guess is not None and len(guess) <= n:
        pos = {int(r): j for j, r in enumerate(live)}
        W = [pos[r] for r in guess if r in pos]
        if len(W) == len(guess) and _full_row_rank(G[W], settings.rank_tol):
            hot = _try_face(problem, G, d, live, norms, W, settings)
            if hot is not None:
                return hot

    z0 = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).reshape(n).copy()
    total_it = 0
    viol = G @ z0 - d if d.size else np.zeros(0)
    if viol.size and np.max(viol) > settings.feas_tol:
        # phase 1: min t  s.t.  G z - t <= d,  -t <= 0
        t0 = float(np.max(viol))
        G1 = np.vstack([np.hstack([G, -np.ones((d.size, 1))]),
                        np.hstack([np.zeros((1, n)), -np.ones((1, 1))])])
        n1 = np.linalg.norm(G1, axis=1)
        G1n = G1 / n1[:, None]
        d1 = np.concatenate([d, [0.0]]) / n1
        c1 = np.zeros(n + 1)
        c1[-1] = 1.0
        y0 = np.concatenate([z0, [t0]])
        W0 = _independent_subset(G1n, np.flatnonzero(G1n @ y0 - d1 >= -settings.feas_tol), settings.rank_tol)
        p1 = _ActiveSet(np.zeros((n + 1, n + 1)), c1, G1n, d1, settings, 10 * (n + 1 + d.size + 1) ** 2 + 10)
        y, W1, _, st1, it1 = p1.run(y0, W0)
        total_it += it1
        if st1 == MAX_ITER:
            return QpSolution(y[:n], np.nan, MAX_ITER, np.zeros(m), iterations=total_it)
        if y[-1] > settings.phase1_tol:
            return QpSolution(y[:n], np.nan, INFEASIBLE, np.zeros(m), iterations=total_it,
                              certificate=float(y[-1]))
        z0 = y[:n]
        viol = G @ z0 - d
    W0 = _independent_subset(G, np.flatnonzero(viol >= -settings.feas_tol), settings.rank_tol) if d.size else []
    solver = _ActiveSet(Q, c, G, d, settings, max_iter)
    z, W, lam, status, it = solver.run(z0, W0)
    total_it += it
    if status == OPTIMAL:
        z, lam = _polish(Q, c, G, d, z, W, settings)
        lam = np.maximum(lam, 0.0) if np.min(lam, initial=0.0) >= -settings.dual_tol else lam
    lam_full = np.zeros(m)
    if W:
        lam_full[live[W]] = lam / norms[live[W]]
    sol = QpSolution(z=z, objective=problem.objective(z), status=status, multipliers=lam_full,
                     active=tuple(sorted(int(live[j]) for j in W)), iterations=total_it)
    sol.kkt = kkt_residuals(problem, z, lam_full)
    return sol


def kkt_ok(problem: QpProblem, sol: QpSolution, tol: float | None = None) -> bool:
    tol = DEFAULT_SETTINGS.kkt_tol if tol is None else tol
    r = kkt_residuals(problem, sol.z, sol.multipliers)
    return all(v <= tol for v in r.values())

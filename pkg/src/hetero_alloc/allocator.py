"""Centralized minimum-energy task allocation.

The allocation problem couples binary priorities ``alpha[m, i]`` (robot i works
on task m) with every robot's input and slack variables::

    minimize    sum_i  C |P_i alpha_i|^2 + |u_i|^2 + l |delta_i|^2_{S_i}
    subject to  barrier rows for every (task, robot)
                slack ordering rows driven by alpha
                each robot on at most one task
                F alpha_m >= T_m                     (capability coverage)
                n_min_m <= sum_i alpha[m, i] <= n_max_m
                0 <= delta <= delta_max,  alpha binary

where ``P_i`` projects onto the tasks robot ``i`` is *not* specialized for.

Once alpha is fixed the continuous part separates per robot, and because each
robot column is one-hot, the total cost is an exact linear function of alpha
built from per-robot option costs. The default solver therefore runs
branch-and-bound on that binary linear program (``relaxation="hull"``). The
literal mixed-integer QP with alpha relaxed to [0, 1] is also available
(``relaxation="bigm"``) and :func:`brute_force_allocation` enumerates every
alpha as an independent oracle.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .executor import ExecutionInput, ExecutionOutput, build_priority_constraints, execute_step
from .model import HeterogeneityModel, projector
from .qp import QpProblem, solve_qp
from .tasks import Linear, lie_terms


class InfeasibleAllocation(RuntimeError):
    """No binary allocation meets the capability and cardinality rows."""

    def __init__(self, message: str, task: int | None = None):
        super().__init__(message)
        self.task = task


@dataclass
class AllocationProblem:
    model: HeterogeneityModel
    tasks: Sequence
    dynamics: object
    x: np.ndarray
    t: float = 0.0
    C: float = 1e6
    l: float = 1e-6
    kappa: float = 1e6
    delta_max: float = 1e3
    gamma: object = field(default_factory=lambda: Linear(5.0))
    n_min: np.ndarray | None = None
    n_max: np.ndarray | None = None
    spec: np.ndarray | None = None        # [task, robot]; defaults to the structural one
    reference: np.ndarray | None = None   # alpha that defines coverage participants
    contexts: list | None = None

    def __post_init__(self):
        n_t, n_r = len(self.tasks), self.model.n_robots
        if self.model.n_tasks != n_t:
            raise ValueError(f"model has {self.model.n_tasks} task rows but {n_t} tasks were given")
        self.x = np.asarray(self.x, dtype=float).reshape(n_r, -1)
        if self.C < 0 or self.l < 0:
            raise ValueError("C and l must be non-negative")
        self.n_min = np.zeros(n_t, dtype=int) if self.n_min is None else np.asarray(self.n_min, dtype=int)
        self.n_max = np.full(n_t, n_r, dtype=int) if self.n_max is None else np.asarray(self.n_max, dtype=int)
        if np.any(self.n_min < 0) or np.any(self.n_min > self.n_max) or np.any(self.n_max > n_r):
            raise ValueError("need 0 <= n_min <= n_max <= n_robots")
        self.spec = (self.model.specialization_matrix.astype(float) if self.spec is None
                     else np.asarray(self.spec, dtype=float).reshape(n_t, n_r))
        if self.reference is None:
            self.reference = (self.spec > 0).astype(int)
        self.reference = np.asarray(self.reference, dtype=int).reshape(n_t, n_r)
        if self.contexts is None:
            self.contexts = [task.context(self.x, self.t, np.flatnonzero(self.reference[m]))
                             for m, task in enumerate(self.tasks)]

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_robots(self) -> int:
        return self.model.n_robots

    def execution_input(self, i: int, column) -> ExecutionInput:
        return ExecutionInput(robot=i, x=self.x, t=self.t, alpha=column, spec=self.spec[:, i],
                              tasks=self.tasks, dynamics=self.dynamics, gamma=self.gamma, l=self.l,
                              kappa=self.kappa, delta_max=self.delta_max, contexts=self.contexts)

    def projector(self, i: int) -> np.ndarray:
        return projector(self.spec[:, i])


@dataclass
class AllocationSolution:
    alpha: np.ndarray          # [task, robot], int
    u: np.ndarray              # [robot, input]
    delta: np.ndarray          # [robot, task]
    objective: float
    nodes: int = 0
    wall_time: float = 0.0
    optimal: bool = True
    outputs: list | None = None    # per-robot ExecutionOutput for the chosen columns

    @property
    def assignment(self) -> dict:
        return {m: [int(i) for i in np.flatnonzero(self.alpha[m])] for m in range(self.alpha.shape[0])}

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.astype(int).tolist(), "objective": self.objective,
                "nodes": self.nodes, "optimal": self.optimal, "wall_time": self.wall_time,
                "assignment": {str(k): v for k, v in self.assignment.items()}}


# ---------------------------------------------------------------------------
# per-robot option costs

@dataclass
class OptionTable:
    """cost[o, i]: option o = 0 idle, o = m + 1 task m. Infeasible options cost inf."""

    cost: np.ndarray
    outputs: list     # outputs[o][i] -> ExecutionOutput


def option_table(problem: AllocationProblem, warm: dict | None = None) -> OptionTable:
    n_t, n_r = problem.n_tasks, problem.n_robots
    cost = np.empty((n_t + 1, n_r))
    outs: list = [[None] * n_r for _ in range(n_t + 1)]
    for i in range(n_r):
        proj = problem.projector(i)
        for o in range(n_t + 1):
            col = np.zeros(n_t)
            if o:
                col[o - 1] = 1.0
            ws = None if warm is None else warm.get((o, i))
            out = execute_step(problem.execution_input(i, col), ws)
            if warm is not None and out.solution is not None and out.solution.ok:
                warm[(o, i)] = out.solution
            outs[o][i] = out
            penalty = problem.C * float(proj[o - 1]) if o else 0.0
            cost[o, i] = out.objective + penalty if out.feasible else np.inf
    return OptionTable(cost, outs)


# ---------------------------------------------------------------------------
# allocation rows shared by every formulation

def _alloc_rows(problem: AllocationProblem):
    """Rows over the flattened alpha (task-major) for the combinatorial constraints.

    Returns (G, d, labels) with ``G @ alpha <= d``; labels name the task each row
    belongs to (None for per-robot rows).
    """
    n_t, n_r = problem.n_tasks, problem.n_robots
    F = problem.model.capability_matrix
    T = problem.model.requirements
    N = n_t * n_r
    rows, rhs, labels = [], [], []
    for i in range(n_r):
        r = np.zeros(N)
        r[[m * n_r + i for m in range(n_t)]] = 1.0
        rows.append(r)
        rhs.append(1.0)
        labels.append(None)
    for m in range(n_t):
        for k in range(F.shape[0]):
            if T[m, k] > 0:
                r = np.zeros(N)
                r[m * n_r:(m + 1) * n_r] = -F[k]
                rows.append(r)
                rhs.append(-float(T[m, k]))
                labels.append((m, "capability", k))
        r = np.zeros(N)
        r[m * n_r:(m + 1) * n_r] = 1.0
        rows.append(r)
        rhs.append(float(problem.n_max[m]))
        labels.append((m, "n_max", None))
        if problem.n_min[m] > 0:
            rows.append(-r)
            rhs.append(-float(problem.n_min[m]))
            labels.append((m, "n_min", None))
    return np.array(rows).reshape(-1, N), np.array(rhs), labels


def _alpha_feasible(problem, alpha, tol=1e-7) -> bool:
    G, d, _ = _alloc_rows(problem)
    return bool(np.all(G @ alpha.reshape(-1) <= d + tol))


def _diagnose(problem: AllocationProblem) -> InfeasibleAllocation:
    """Find a task whose rows cannot be met even with every robot available."""
    F = problem.model.capability_matrix
    T = problem.model.requirements
    n_r = problem.n_robots
    for m in range(problem.n_tasks):
        for k in range(F.shape[0]):
            if T[m, k] > 0 and F[k].sum() < T[m, k] - 1e-9:
                return InfeasibleAllocation(
                    f"task {m}: capability {k} needs {T[m, k]:g} but the whole team offers "
                    f"{F[k].sum():g}", task=m)
        if problem.n_min[m] > n_r:
            return InfeasibleAllocation(f"task {m}: n_min exceeds the team size", task=m)
        best = np.sort(F, axis=1)[:, ::-1][:, :problem.n_max[m]].sum(axis=1) if problem.n_max[m] else np.zeros(F.shape[0])
        for k in range(F.shape[0]):
            if T[m, k] > 0 and best[k] < T[m, k] - 1e-9:
                return InfeasibleAllocation(
                    f"task {m}: capability {k} needs {T[m, k]:g} within n_max={problem.n_max[m]}", task=m)
    return InfeasibleAllocation("capability and cardinality rows cannot be met jointly "
                                "(robots are over-subscribed across tasks)", task=None)


# ---------------------------------------------------------------------------
# branch and bound

def _branch_and_bound(Q, c, G, d, bin_vars, lb_row, ub_row, incumbent=None,
                      combinatorial_bound=None, time_limit=None, int_tol=1e-6):
    """Minimize 0.5 z'Qz + c'z over G z <= d with ``z[bin_vars]`` binary.

    Binary variables must have bound rows ``lb_row[j]`` (-z_j <= 0) and
    ``ub_row[j]`` (z_j <= 1); branching rewrites their right-hand sides.
    ``incumbent`` is an optional (z, value) pair. Returns (z, value, nodes, complete).
    """
    t0 = time.perf_counter()
    best_z, best_v = (None, math.inf) if incumbent is None else incumbent
    nodes = 0
    complete = True
    counter = itertools.count()
    root = (-math.inf, next(counter), {}, None)
    stack = [root]        # depth-first until an incumbent exists
    heap: list = []       # best-bound afterwards

    def prune_level():
        if not math.isfinite(best_v):
            return math.inf
        return best_v - 1e-9 * max(1.0, abs(best_v))

    while stack or heap:
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            complete = False
            break
        if best_z is None:
            bound, _, fix, warm = stack.pop()
        else:
            for item in stack:
                heapq.heappush(heap, item)
            stack.clear()
            bound, _, fix, warm = heapq.heappop(heap)
        if bound >= prune_level():
            continue
        if combinatorial_bound is not None and combinatorial_bound(fix) >= prune_level():
            continue
        dd = d.copy()
        for j, v in fix.items():
            if v == 0:
                dd[ub_row[j]] = 0.0
            else:
                dd[lb_row[j]] = -1.0
        nodes += 1
        sol = solve_qp(QpProblem(Q, c, G, dd), warm)
        if not sol.ok:
            continue
        val = sol.objective
        if val >= prune_level():
            continue
        z = sol.z
        frac = np.abs(z[bin_vars] - np.round(z[bin_vars]))
        if np.all(frac <= int_tol):
            zr = z.copy()
            zr[bin_vars] = np.round(zr[bin_vars])
            best_z, best_v = zr, val
            continue
        score = frac.copy()
        score[[k for k, j in enumerate(bin_vars) if j in fix]] = -1.0
        pick = int(np.argmax(score))   # first maximal index: ties go to the lowest index
        j = bin_vars[pick]
        near = int(round(z[j]))
        kids = []
        for v in (1 - near, near):      # near child popped first
            f2 = dict(fix)
            f2[j] = v
            kids.append((val, next(counter), f2, z))
        if best_z is None:
            stack.extend(kids)
        else:
            for kid in kids:
                heapq.heappush(heap, kid)
    return best_z, best_v, nodes, complete


def _solve_hull(problem: AllocationProblem, table: OptionTable, incumbent_alpha, time_limit):
    n_t, n_r = problem.n_tasks, problem.n_robots
    N = n_t * n_r
    cost = table.cost
    base_idle = cost[0]
    if np.any(~np.isfinite(base_idle)):
        # idle infeasible cannot happen with a finite delta_max, but keep the LP well posed
        base_idle = np.where(np.isfinite(base_idle), base_idle, 0.0)
    c = np.zeros(N)
    G_a, d_a, _ = _alloc_rows(problem)
    rows, rhs = [G_a], [d_a]
    forbid = []
    for m in range(n_t):
        for i in range(n_r):
            j = m * n_r + i
            if np.isfinite(cost[m + 1, i]):
                c[j] = cost[m + 1, i] - base_idle[i]
            else:
                forbid.append(j)
    lb_row = {}
    ub_row = {}
    box = np.zeros((2 * N, N))
    box[:N] = -np.eye(N)
    box[N:] = np.eye(N)
    off = G_a.shape[0]
    for j in range(N):
        lb_row[j] = off + j
        ub_row[j] = off + N + j
    rows.append(box)
    rhs.append(np.concatenate([np.zeros(N), np.ones(N)]))
    G = np.vstack(rows)
    d = np.concatenate(rhs)
    for j in forbid:
        d[ub_row[j]] = 0.0
    const = float(np.sum(base_idle))

    # scale the objective so the LP works with O(1) numbers
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    cs = c / scale

    inc = None
    if incumbent_alpha is not None:
        a = np.asarray(incumbent_alpha, dtype=float).reshape(-1)
        if _alpha_feasible(problem, a) and all(a[j] == 0 for j in forbid):
            inc = (a.copy(), float(cs @ a))

    def comb_bound(fix):
        tot = 0.0
        for i in range(n_r):
            ones = [m for m in range(n_t) if fix.get(m * n_r + i) == 1]
            if ones:
                tot += c[ones[0] * n_r + i]
                continue
            opts = [0.0] + [c[m * n_r + i] for m in range(n_t)
                            if fix.get(m * n_r + i) != 0 and (m * n_r + i) not in forbid]
            tot += min(opts)
        return tot / scale

    z, v, nodes, complete = _branch_and_bound(
        np.zeros((N, N)), cs, G, d, list(range(N)), lb_row, ub_row, inc, comb_bound, time_limit)
    if z is None:
        raise _diagnose(problem)
    alpha = np.round(z).astype(int).reshape(n_t, n_r)
    return alpha, nodes, complete


def _continuous_rows(problem: AllocationProblem):
    """Barrier data per (task, robot): (rhs, input row)."""
    n_t, n_r = problem.n_tasks, problem.n_robots
    b = np.zeros((n_t, n_r))
    Lg = np.zeros((n_t, n_r, problem.dynamics.n_u))
    for m, task in enumerate(problem.tasks):
        ctx = problem.contexts[m]
        for i in range(n_r):
            drift, lg = lie_terms(task, problem.dynamics, problem.x, problem.t, i, ctx)
            h = task.value(i, problem.x, problem.t, ctx)
            b[m, i] = drift + float(problem.gamma(h))
            Lg[m, i] = lg
    return b, Lg


def joint_qp(problem: AllocationProblem, alpha=None, with_alpha: bool = False, rows=None):
    """The ensemble QP over z = (u, delta[, alpha]).

    With ``with_alpha`` False alpha is fixed to the given matrix; otherwise alpha
    becomes a block of [0, 1] variables (priority rows as big-M rows).
    Returns (QpProblem, layout dict).
    """
    n_t, n_r, n_u = problem.n_tasks, problem.n_robots, problem.dynamics.n_u
    nU, nD = n_r * n_u, n_r * n_t
    nA = n_t * n_r if with_alpha else 0
    n = nU + nD + nA
    iu = lambda i: slice(i * n_u, (i + 1) * n_u)
    idl = lambda i, m: nU + i * n_t + m
    ia = lambda m, i: nU + nD + m * n_r + i
    b, Lg = _continuous_rows(problem) if rows is None else rows
    Q = np.zeros((n, n))
    Q[:nU, :nU] = 2.0 * np.eye(nU)
    for i in range(n_r):
        for m in range(n_t):
            Q[idl(i, m), idl(i, m)] = 2.0 * problem.l * problem.spec[m, i]
    const = 0.0
    if with_alpha:
        for i in range(n_r):
            proj = problem.projector(i)
            for m in range(n_t):
                Q[ia(m, i), ia(m, i)] = 2.0 * problem.C * proj[m]
    else:
        alpha = np.asarray(alpha, dtype=float).reshape(n_t, n_r)
        for i in range(n_r):
            const += problem.C * float(problem.projector(i) @ alpha[:, i] ** 2)
    G, d = [], []
    for i in range(n_r):
        for m in range(n_t):
            r = np.zeros(n)
            r[iu(i)] = -Lg[m, i]
            r[idl(i, m)] = -1.0
            G.append(r)
            d.append(b[m, i])
    pairs = [(m, k) for m in range(n_t) for k in range(n_t) if m != k]
    for i in range(n_r):
        for (m, k) in pairs:
            # kappa*d_m - d_k + kappa*dmax*a_m <= kappa*dmax, divided by kappa
            r = np.zeros(n)
            r[idl(i, m)] = 1.0
            r[idl(i, k)] = -1.0 / problem.kappa
            rhs = problem.delta_max
            if with_alpha:
                r[ia(m, i)] = problem.delta_max
            else:
                rhs -= problem.delta_max * alpha[m, i]
            G.append(r)
            d.append(rhs)
    for i in range(n_r):
        for m in range(n_t):
            r = np.zeros(n)
            r[idl(i, m)] = -1.0
            G.append(r)
            d.append(0.0)
            r = np.zeros(n)
            r[idl(i, m)] = 1.0
            G.append(r)
            d.append(problem.delta_max)
    lb_row, ub_row = {}, {}
    if with_alpha:
        Ga, da, _ = _alloc_rows(problem)
        for r_a, rhs in zip(Ga, da):
            r = np.zeros(n)
            r[nU + nD:] = r_a
            G.append(r)
            d.append(rhs)
        for m in range(n_t):
            for i in range(n_r):
                j = ia(m, i)
                r = np.zeros(n)
                r[j] = -1.0
                lb_row[j] = len(G)
                G.append(r)
                d.append(0.0)
                r = np.zeros(n)
                r[j] = 1.0
                ub_row[j] = len(G)
                G.append(r)
                d.append(1.0)
    layout = {"n_u": n_u, "u": slice(0, nU), "delta": slice(nU, nU + nD),
              "alpha": slice(nU + nD, n), "const": const, "lb_row": lb_row, "ub_row": ub_row}
    return QpProblem(Q, np.zeros(n), np.array(G).reshape(-1, n), np.array(d)), layout


def _solve_bigm(problem: AllocationProblem, time_limit):
    qp, lay = joint_qp(problem, with_alpha=True)
    bins = list(range(lay["alpha"].start, lay["alpha"].stop))
    z, v, nodes, complete = _branch_and_bound(qp.Q, qp.c, qp.G, qp.d, bins, lay["lb_row"],
                                              lay["ub_row"], None, None, time_limit)
    if z is None:
        raise _diagnose(problem)
    alpha = np.round(z[lay["alpha"]]).astype(int).reshape(problem.n_tasks, problem.n_robots)
    return alpha, nodes, complete


def solve_allocation(problem: AllocationProblem, incumbent=None, relaxation: str = "hull",
                     time_limit: float | None = None, warm: dict | None = None) -> AllocationSolution:
    """Globally optimal allocation by branch-and-bound.

    Parameters
    ----------
    incumbent : array (n_tasks, n_robots), optional
        Starting allocation (usually the previous one); used only if feasible.
    relaxation : {"hull", "bigm"}
        "hull" branches on the exact linear reformulation; "bigm" on the joint
        QP with alpha relaxed to [0, 1].
    warm : dict, optional
        Warm starts for the per-robot QPs keyed by (option, robot); updated
        in place with this call's solutions.
    """
    t0 = time.perf_counter()
    table = option_table(problem, warm)
    if relaxation == "hull":
        alpha, nodes, complete = _solve_hull(problem, table, incumbent, time_limit)
    elif relaxation == "bigm":
        alpha, nodes, complete = _solve_bigm(problem, time_limit)
    else:
        raise ValueError(f"unknown relaxation {relaxation!r}")
    outs = []
    obj = 0.0
    for i in range(problem.n_robots):
        col = alpha[:, i]
        o = int(np.argmax(col)) + 1 if col.any() else 0
        outs.append(table.outputs[o][i])
        obj += table.cost[o, i]
    u = np.array([o.u for o in outs])
    delta = np.array([o.delta for o in outs])
    return AllocationSolution(alpha, u, delta, float(obj), nodes, time.perf_counter() - t0,
                              complete, outs)


def brute_force_allocation(problem: AllocationProblem, limit: int = 100_000) -> AllocationSolution:
    """Enumerate every alpha and solve the joint continuous QP for each."""
    t0 = time.perf_counter()
    n_t, n_r = problem.n_tasks, problem.n_robots
    count = (n_t + 1) ** n_r
    if count > limit:
        raise ValueError(f"instance too large for enumeration ({count} > {limit})")
    G_a, d_a, _ = _alloc_rows(problem)
    rows = _continuous_rows(problem)
    best = None
    checked = 0
    for choice in itertools.product(range(n_t + 1), repeat=n_r):
        alpha = np.zeros((n_t, n_r), dtype=int)
        for i, o in enumerate(choice):
            if o:
                alpha[o - 1, i] = 1
        if np.any(G_a @ alpha.reshape(-1) > d_a + 1e-9):
            continue
        qp, lay = joint_qp(problem, alpha, rows=rows)
        sol = solve_qp(qp)
        checked += 1
        if not sol.ok:
            continue
        val = sol.objective + lay["const"]
        if best is None or val < best[0] - 1e-12 * max(1.0, abs(val)):
            best = (val, alpha, sol.z, lay)
    if best is None:
        raise _diagnose(problem)
    val, alpha, z, lay = best
    n_u = lay["n_u"]
    u = z[lay["u"]].reshape(n_r, n_u)
    delta = z[lay["delta"]].reshape(n_r, n_t)
    return AllocationSolution(alpha, u, delta, float(val), checked, time.perf_counter() - t0, True)


def allocation_objective(problem: AllocationProblem, alpha) -> float:
    """Cost of a fixed alpha via the per-robot QPs (inf if any is infeasible)."""
    alpha = np.asarray(alpha, dtype=int).reshape(problem.n_tasks, problem.n_robots)
    tot = 0.0
    for i in range(problem.n_robots):
        out = execute_step(problem.execution_input(i, alpha[:, i]))
        if not out.feasible:
            return math.inf
        tot += out.objective + problem.C * float(problem.projector(i) @ alpha[:, i])
    return tot


__all__ = [
    "AllocationProblem",
    "AllocationSolution",
    "InfeasibleAllocation",
    "OptionTable",
    "option_table",
    "solve_allocation",
    "brute_force_allocation",
    "joint_qp",
    "allocation_objective",
    "build_priority_constraints",
]

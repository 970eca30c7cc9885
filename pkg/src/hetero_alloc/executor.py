"""Per-robot execution QP.

Given a robot's priority column (which task, if any, it is allocated to), find
the minimum-energy input that keeps every task's barrier constraint satisfied
up to a per-task slack, with the slack of the allocated task forced to be much
smaller than all others::

    minimize    |u|^2 + l * sum_m s_m delta_m^2
    subject to  dh_m/dx (f + g u) + dh_m/dt + gamma(h_m) >= -delta_m   for every task m
                kappa*delta_m - delta_n + kappa*delta_max*alpha_m <= kappa*delta_max
                0 <= delta <= delta_max
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qp import QpProblem, QpSolution, solve_qp, kkt_residuals
from .tasks import Linear, lie_terms


@dataclass(frozen=True)
class PriorityConstraints:
    """Ordered-pair slack ordering rows: ``slack_coef @ delta + alloc_coef @ alpha <= rhs``."""

    slack_coef: np.ndarray
    alloc_coef: np.ndarray
    rhs: np.ndarray
    pairs: tuple
    kappa: float
    delta_max: float

    def satisfied(self, delta, alpha, tol: float = 1e-9) -> bool:
        delta = np.asarray(delta, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        if not self.pairs:
            return True
        lhs = self.slack_coef @ delta + self.alloc_coef @ alpha
        return bool(np.all(lhs <= self.rhs + tol * np.maximum(1.0, np.abs(self.rhs))))


def build_priority_constraints(n_tasks: int, kappa: float = 1e6, delta_max: float = 1e3) -> PriorityConstraints:
    """One row per ordered task pair (m, n), m != n.

    With alpha_m = 1 the rows give delta_m <= delta_n / kappa for every other n;
    with alpha_m = 0 they only give delta_m <= delta_max + delta_n / kappa.
    """
    if n_tasks < 1:
        raise ValueError("need at least one task")
    if not (kappa > 0 and delta_max > 0):
        raise ValueError("kappa and delta_max must be positive")
    pairs = tuple((m, n) for m in range(n_tasks) for n in range(n_tasks) if m != n)
    S = np.zeros((len(pairs), n_tasks))
    P = np.zeros((len(pairs), n_tasks))
    for r, (m, n) in enumerate(pairs):
        S[r, m] = kappa
        S[r, n] = -1.0
        P[r, m] = kappa * delta_max
    rhs = np.full(len(pairs), kappa * delta_max)
    return PriorityConstraints(S, P, rhs, pairs, float(kappa), float(delta_max))


@dataclass
class ExecutionInput:
    robot: int
    x: np.ndarray
    t: float
    alpha: np.ndarray              # length n_tasks, binary, sum <= 1
    spec: np.ndarray               # specialization diagonal for this robot
    tasks: Sequence
    dynamics: object
    gamma: object = Linear(5.0)
    l: float = 1e-6
    kappa: float = 1e6
    delta_max: float = 1e3
    contexts: Sequence | None = None

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).reshape(-1)
        if a.size != len(self.tasks):
            raise ValueError("alpha column length must equal the number of tasks")
        if not np.all((a == 0) | (a == 1)) or a.sum() > 1:
            raise ValueError("alpha column must be binary with at most one 1")
        self.alpha = a
        self.spec = np.asarray(self.spec, dtype=float).reshape(-1)


@dataclass
class ExecutionOutput:
    u: np.ndarray
    delta: np.ndarray
    objective: float
    feasible: bool
    qp: QpProblem | None = None
    solution: QpSolution | None = None

    @property
    def kkt(self) -> dict:
        if self.qp is None or self.solution is None:
            return {}
        return kkt_residuals(self.qp, self.solution.z, self.solution.multipliers)


def execution_qp(inp: ExecutionInput) -> QpProblem:
    """Assemble the robot's QP over z = (u, delta)."""
    n_t = len(inp.tasks)
    n_u = inp.dynamics.n_u
    n = n_u + n_t
    Q = np.zeros((n, n))
    Q[:n_u, :n_u] = 2.0 * np.eye(n_u)
    Q[n_u:, n_u:] = 2.0 * inp.l * np.diag(inp.spec)
    rows, rhs = [], []
    ctxs = inp.contexts if inp.contexts is not None else [None] * n_t
    for m, task in enumerate(inp.tasks):
        drift, lg = lie_terms(task, inp.dynamics, inp.x, inp.t, inp.robot, ctxs[m])
        h = task.value(inp.robot, inp.x, inp.t, ctxs[m])
        row = np.zeros(n)
        row[:n_u] = -lg
        row[n_u + m] = -1.0
        rows.append(row)
        rhs.append(drift + float(inp.gamma(h)))
    if n_t > 1:
        pc = build_priority_constraints(n_t, inp.kappa, inp.delta_max)
        # rows divided by kappa to keep them well scaled
        block = np.zeros((len(pc.pairs), n))
        block[:, n_u:] = pc.slack_coef / inp.kappa
        rows.extend(block)
        rhs.extend((pc.rhs - pc.alloc_coef @ inp.alpha) / inp.kappa)
    box = np.zeros((2 * n_t, n))
    box[:n_t, n_u:] = -np.eye(n_t)
    box[n_t:, n_u:] = np.eye(n_t)
    rows.extend(box)
    rhs.extend([0.0] * n_t + [inp.delta_max] * n_t)
    return QpProblem(Q, np.zeros(n), np.array(rows), np.array(rhs))


def execute_step(inp: ExecutionInput, warm_start=None) -> ExecutionOutput:
    """Solve the robot's execution QP; infeasibility yields u = 0, delta = delta_max."""
    prob = execution_qp(inp)
    sol = solve_qp(prob, warm_start)
    n_u = inp.dynamics.n_u
    if not sol.ok:
        n_t = len(inp.tasks)
        return ExecutionOutput(np.zeros(n_u), np.full(n_t, inp.delta_max), np.inf, False, prob, sol)
    u = sol.z[:n_u].copy()
    delta = sol.z[n_u:].copy()
    obj = float(u @ u + inp.l * np.sum(inp.spec * delta ** 2))
    return ExecutionOutput(u, delta, obj, True, prob, sol)

"""Simulation driver.

Two execution architectures share one world model:

* centralized: every step solves the allocation problem and applies the
  inputs it returns;
* mixed: a slow allocator snapshots the world every ``latency`` steps and its
  result is published ``latency`` steps later (zero-order hold), while each
  robot solves its own execution QP every step with the last published column.

Everything runs on a virtual clock, so a run is a pure function of the
scenario: identical inputs give bit-identical traces.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .allocator import AllocationProblem, InfeasibleAllocation, solve_allocation
from .analysis import lyapunov_value, task_contexts
from .executor import ExecutionInput, execute_step
from .model import HeterogeneityModel, projector
from .resilience import ProgressLedger, apply_events, progress_deficit, simulate_nominal, update_specialization
from .trace import RunTrace

log = logging.getLogger(__name__)


class SimulationAborted(RuntimeError):
    """The allocator found no feasible allocation during a run."""

    def __init__(self, step: int, t: float, cause: InfeasibleAllocation):
        super().__init__(f"step {step} (t={t:.3f}s): {cause}")
        self.step = step
        self.t = t
        self.cause = cause
        self.task = cause.task


# ---------------------------------------------------------------------------
# world physics

def _mobility(fields, cls: str, p) -> float:
    f = 1.0
    for fd in fields:
        if fd.mode == "trap" and fd.inside(p):
            f *= fd.factor(cls)
    return f


def apply_disturbed_dynamics(xi, ui, dt: float, dynamics, fields=(), cls: str = "wheeled", domain=None):
    """One Euler step of the true dynamics.

    Trap disks scale the input by the class's mobility factor while the robot
    is inside them. Barrier disks with a factor below 1 push an endpoint that
    lands inside back onto the rim. The domain, when given, clamps positions.
    """
    xi = np.asarray(xi, dtype=float)
    nxt = dynamics.step(xi, ui, dt, _mobility(fields, cls, xi))
    for fd in fields:
        if fd.mode != "barrier" or fd.factor(cls) >= 1.0 or not fd.inside(nxt):
            continue
        c = np.asarray(fd.center, dtype=float)
        v = nxt[:2] - c
        norm = float(np.hypot(v[0], v[1]))
        if norm == 0.0:
            nxt[:2] = xi[:2]
        else:
            nxt[:2] = c + v * (fd.radius / norm)
    if domain is not None:
        nxt = domain.clamp(nxt)
    return nxt


# ---------------------------------------------------------------------------
# world state and the two solvers every architecture needs

@dataclass
class WorldState:
    x: np.ndarray
    t: float
    model: HeterogeneityModel
    spec: np.ndarray                  # [task, robot]
    applied: set = field(default_factory=set)
    version: int = 0


def _problem(sc, world: WorldState, x, t, reference) -> AllocationProblem:
    a = sc.allocator
    return AllocationProblem(model=world.model, tasks=sc.tasks, dynamics=sc.dynamics, x=x, t=t,
                             C=a.C, l=a.l, kappa=a.kappa, delta_max=a.delta_max, gamma=sc.gamma,
                             n_min=a.n_min, n_max=a.n_max, spec=world.spec, reference=reference)


@dataclass
class _Decision:
    alpha: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    objective: float      # cost of applying alpha: energy + slack + specialization penalty
    contexts: list
    nodes: int = 0


class _Allocator:
    """Allocation solve followed by the execution inputs of the chosen columns.

    Coverage partitions are built from a reference allocation. When the
    optimum differs from its reference, the solve is repeated with the
    optimum as the new reference until the allocation reproduces itself.
    Should the rounds cycle, the candidate with the lowest cost under its own
    partition wins.
    """

    max_rounds = 4

    def __init__(self, sc):
        self.sc = sc
        self.warm: dict = {}

    def decide(self, world, x, t, reference, step) -> _Decision:
        candidates = []
        ref = reference
        nodes = 0
        for _ in range(self.max_rounds):
            prob = _problem(self.sc, world, x, t, ref)
            try:
                sol = solve_allocation(prob, incumbent=ref, warm=self.warm)
            except InfeasibleAllocation as exc:
                raise SimulationAborted(step, t, exc) from exc
            nodes += sol.nodes
            if np.array_equal(sol.alpha, prob.reference):
                return _Decision(sol.alpha, sol.u, sol.delta, sol.objective, prob.contexts, nodes)
            if any(np.array_equal(sol.alpha, c) for c in candidates):
                break
            candidates.append(sol.alpha)
            ref = sol.alpha
        best = None
        for alpha in candidates:
            ctxs = task_contexts(self.sc.tasks, x, t, alpha)
            u, delta, obj = execute_allocation(self.sc, world, x, t, alpha, ctxs)
            if best is None or obj < best.objective:
                best = _Decision(alpha, u, delta, obj, ctxs, nodes)
        return best


def execute_allocation(sc, world, x, t, alpha, contexts, warm: dict | None = None):
    """Every robot's execution QP for a fixed allocation. Returns (u, delta, cost)."""
    a = sc.allocator
    n_r, n_t = sc.n_robots, len(sc.tasks)
    u = np.zeros((n_r, sc.dynamics.n_u))
    delta = np.zeros((n_r, n_t))
    cost = 0.0
    for i in range(n_r):
        col = alpha[:, i]
        inp = ExecutionInput(robot=i, x=x, t=t, alpha=col, spec=world.spec[:, i], tasks=sc.tasks,
                             dynamics=sc.dynamics, gamma=sc.gamma, l=a.l, kappa=a.kappa,
                             delta_max=a.delta_max, contexts=contexts)
        key = (i, tuple(int(v) for v in col))
        out = execute_step(inp, None if warm is None else warm.get(key))
        if warm is not None and out.feasible:
            warm[key] = out.solution
        u[i], delta[i] = out.u, out.delta
        cost += out.objective + a.C * float(projector(world.spec[:, i]) @ col)
    return u, delta, cost


# ---------------------------------------------------------------------------
# per-step bookkeeping shared by both architectures

class _Recorder:
    def __init__(self, sc, steps, twin=False):
        n_r, n_t, n_x, n_u = sc.n_robots, len(sc.tasks), sc.dynamics.n_x, sc.dynamics.n_u
        self.t = np.zeros(steps)
        self.x = np.zeros((steps, n_r, n_x))
        self.u = np.zeros((steps, n_r, n_u))
        self.uhat = np.zeros((steps, n_r, n_u)) if twin else None
        self.delta = np.zeros((steps, n_r, n_t))
        self.alpha = np.zeros((steps, n_t, n_r), dtype=int)
        self.V = np.zeros(steps)
        self.spec = np.zeros((steps, n_t, n_r))
        self.obj = np.zeros(steps)
        self.events: list = []

    def trace(self, meta) -> RunTrace:
        return RunTrace(self.t, self.x, self.u, self.delta, self.alpha, self.V, self.spec, self.obj,
                        self.uhat, self.events, meta)


class _World:
    """Owns the true state: events, specialization decay and integration."""

    def __init__(self, sc):
        self.sc = sc
        n_t = len(sc.tasks)
        model = sc.model
        self.state = WorldState(sc.x0.copy(), 0.0, model,
                                model.specialization_matrix.astype(float) if n_t else np.zeros((0, sc.n_robots)))
        self.x_prev = None
        self.u_prev = None
        self.alpha_prev = None
        self.trapped: set = set()

    def advance_clock(self, k, t, rec: _Recorder):
        """Endogenous events due by ``t``, then the exogenous decay for the previous step."""
        sc, st = self.sc, self.state
        st.t = t
        if sc.events and len(sc.tasks):
            before = len(st.applied)
            st.model, st.spec = apply_events(st.model, st.spec, sc.events, t, st.applied, rec.events)
            st.version += len(st.applied) - before
        if self.alpha_prev is None or not len(sc.tasks):
            return
        a = sc.allocator
        ctxs = task_contexts(sc.tasks, st.x, t, self.alpha_prev)
        ledger = ProgressLedger(self.x_prev, self.u_prev, sc.sim.dt, a.beta)
        deficits = np.zeros_like(st.spec)
        for m, i in zip(*np.nonzero(self.alpha_prev)):
            x_sim = simulate_nominal(ledger, i, sc.dynamics, clamp=sc.domain.clamp)
            deficits[m, i] = progress_deficit(sc.tasks[m], i, st.x, x_sim, t, ctxs[m])
        new = update_specialization(st.spec, self.alpha_prev, deficits, a.beta)
        for m, i in zip(*np.nonzero((new == 0) & (st.spec > 0))):
            rec.events.append({"t": t, "type": "specialization_depleted", "robot": int(i), "task": int(m)})
        st.spec = new

    def integrate(self, k, u, alpha, rec: _Recorder):
        sc, st = self.sc, self.state
        nxt = np.empty_like(st.x)
        for i in range(sc.n_robots):
            raw = apply_disturbed_dynamics(st.x[i], u[i], sc.sim.dt, sc.dynamics, sc.fields, sc.classes[i])
            nxt[i] = sc.domain.clamp(raw)
            if not np.array_equal(nxt[i], raw):
                rec.events.append({"t": st.t, "type": "clamp", "robot": i})
            stuck = _mobility(sc.fields, sc.classes[i], nxt[i]) == 0.0
            if stuck and i not in self.trapped:
                rec.events.append({"t": st.t + sc.sim.dt, "type": "field_entry", "robot": i})
                self.trapped.add(i)
            elif not stuck:
                self.trapped.discard(i)
        self.x_prev, self.u_prev, self.alpha_prev = st.x, np.array(u, dtype=float), alpha
        st.x = nxt

    def record(self, k, rec: _Recorder, alpha, u, delta, objective, contexts, uhat=None):
        sc, st = self.sc, self.state
        rec.t[k] = st.t
        rec.x[k] = st.x
        rec.u[k] = u
        rec.delta[k] = delta
        rec.alpha[k] = alpha
        rec.spec[k] = st.spec
        rec.obj[k] = objective
        rec.V[k] = lyapunov_value(sc.tasks, sc.gamma, st.x, st.t, alpha, contexts) if len(sc.tasks) else 0.0
        if uhat is not None:
            rec.uhat[k] = uhat
        if k and not np.array_equal(alpha, rec.alpha[k - 1]):
            rec.events.append({"t": st.t, "type": "allocation", "alpha": alpha.tolist()})


def _idle(sc):
    return (np.zeros((0, sc.n_robots), dtype=int), np.zeros((sc.n_robots, sc.dynamics.n_u)),
            np.zeros((sc.n_robots, 0)))


def _meta(sc, mode, **extra):
    return {"scenario": sc.name, "source": sc.source, "mode": mode, "dt": sc.sim.dt,
            "steps": sc.sim.steps, "seed": sc.sim.seed, **extra}


# ---------------------------------------------------------------------------
# architectures

def run_centralized(scenario, steps: int | None = None) -> RunTrace:
    """Solve the allocation problem at every step and apply its inputs."""
    sc = scenario
    K = sc.sim.steps if steps is None else int(steps)
    world, rec = _World(sc), _Recorder(sc, K)
    alloc = _Allocator(sc)
    for k in range(K):
        t = k * sc.sim.dt
        world.advance_clock(k, t, rec)
        if len(sc.tasks):
            dec = alloc.decide(world.state, world.state.x, t, world.alpha_prev, k)
            alpha, u, delta, obj, ctxs = dec.alpha, dec.u, dec.delta, dec.objective, dec.contexts
        else:
            (alpha, u, delta), obj, ctxs = _idle(sc), 0.0, []
        world.record(k, rec, alpha, u, delta, obj, ctxs)
        world.integrate(k, u, alpha, rec)
    tr = rec.trace(_meta(sc, "centralized"))
    tr.meta["milestones"] = check_milestones(tr, sc)
    return tr


def run_mixed(scenario, latency: int | None = None, instant: bool | None = None, twin: bool = False,
              steps: int | None = None) -> RunTrace:
    """Slow allocator behind a zero-order hold, fast per-robot executors.

    The allocator snapshots the world every ``latency`` steps; the result is
    published ``latency`` steps later (immediately when ``instant``). The
    first allocation is computed synchronously so robots start with a column.
    With ``twin`` each step also records the inputs a centralized solve at the
    same state would apply (``uhat``).
    """
    sc = scenario
    n = sc.sim.latency if latency is None else int(latency)
    if n < 1:
        raise ValueError("latency must be at least one step")
    instant = sc.sim.instant if instant is None else bool(instant)
    K = sc.sim.steps if steps is None else int(steps)
    world, rec = _World(sc), _Recorder(sc, K, twin)
    slow, fresh = _Allocator(sc), _Allocator(sc)
    exec_warm: dict = {}
    published = None
    pending: list = []
    for k in range(K):
        t = k * sc.sim.dt
        world.advance_clock(k, t, rec)
        st = world.state
        if not len(sc.tasks):
            alpha, u, delta = _idle(sc)
            world.record(k, rec, alpha, u, delta, 0.0, [], u if twin else None)
            world.integrate(k, u, alpha, rec)
            continue
        while pending and pending[0][0] <= k:
            _, t_snap, a_new = pending.pop(0)
            published = a_new
            rec.events.append({"t": t, "type": "publish", "snapshot_t": t_snap})
        dec = None
        if k % n == 0:
            snap = slow.decide(st, st.x.copy(), t, published, k)
            if k == 0 or instant:
                published, dec = snap.alpha, snap
                rec.events.append({"t": t, "type": "publish", "snapshot_t": t})
            else:
                pending.append((k + n, t, snap.alpha))
        if dec is not None and np.array_equal(dec.alpha, published):
            u, delta, obj, ctxs = dec.u, dec.delta, dec.objective, dec.contexts
        else:
            ctxs = task_contexts(sc.tasks, st.x, t, published)
            u, delta, obj = execute_allocation(sc, st, st.x, t, published, ctxs, exec_warm)
        uhat = None
        if twin:
            if dec is not None:
                uhat = dec.u
            else:
                uhat = fresh.decide(st, st.x, t, published, k).u
        world.record(k, rec, published, u, delta, obj, ctxs, uhat)
        world.integrate(k, u, published, rec)
    tr = rec.trace(_meta(sc, "mixed", latency=n, instant=instant, twin=twin))
    tr.meta["milestones"] = check_milestones(tr, sc)
    return tr


def run_twin(scenario, latency: int | None = None, steps: int | None = None) -> RunTrace:
    """Mixed run with the centralized reference inputs recorded alongside."""
    return run_mixed(scenario, latency=latency, twin=True, steps=steps)


def compare(scenario, latency: int | None = None, steps: int | None = None):
    """(trace, per-step max |u - uhat|) for a twin run."""
    tr = run_twin(scenario, latency, steps)
    return tr, tr.input_gap()


def run_scenario(scenario, mode: str | None = None, **kw) -> RunTrace:
    mode = mode or scenario.sim.mode
    if mode == "centralized":
        return run_centralized(scenario, **{k: v for k, v in kw.items() if k == "steps"})
    if mode == "mixed":
        return run_mixed(scenario, **kw)
    raise ValueError(f"unknown mode {mode!r}")


def run_experiment_scenario(path=None) -> RunTrace:
    """The bundled 80 s five-robot run (or a scenario file with the same layout)."""
    from .scenario import bundled_scenario, load_scenario
    sc = load_scenario(path) if path is not None else bundled_scenario("experiment")
    return run_scenario(sc)


# ---------------------------------------------------------------------------
# milestones

def _assignment_matches(alpha, want: dict) -> bool:
    for m, robots in want.items():
        if sorted(int(i) for i in np.flatnonzero(alpha[int(m)])) != sorted(int(r) for r in robots):
            return False
    return True


def _goal_met(sc, x, t, alpha, tol) -> bool:
    ctxs = task_contexts(sc.tasks, x, t, alpha)
    for m, task in enumerate(sc.tasks):
        for i in np.flatnonzero(alpha[m]):
            if task.value(int(i), x, t, ctxs[m]) < -tol:
                return False
    return True


def check_milestones(trace: RunTrace, scenario) -> list:
    """Evaluate the scenario's milestones in order against a trace.

    A milestone is reached at the first step (not before the previous
    milestone) where the listed assignment holds and, if ``goal_tol`` is set,
    every assigned robot's task value is at least ``-goal_tol``. The search
    starts no earlier than ``not_before`` when given. With a time ``t`` the
    milestone must be reached within ``t +- tol`` (default tol 2 s).
    """
    out = []
    start = 0
    for ms in scenario.milestones:
        want = ms.get("assignment", {})
        goal = ms.get("goal_tol")
        hit = None
        first = start
        if ms.get("not_before") is not None:
            first = max(first, int(np.searchsorted(trace.t, ms["not_before"] - 1e-9)))
        for k in range(first, trace.steps):
            if not _assignment_matches(trace.alpha[k], want):
                continue
            if goal is not None and not _goal_met(scenario, trace.x[k], trace.t[k], trace.alpha[k], goal):
                continue
            hit = k
            break
        res = {"name": ms.get("name", f"milestone{len(out)}"), "expected_t": ms.get("t"),
               "tol": ms.get("tol", 2.0), "found_t": None if hit is None else float(trace.t[hit])}
        if hit is None:
            res["ok"], res["reason"] = False, "never reached"
        elif ms.get("t") is not None and abs(trace.t[hit] - ms["t"]) > res["tol"]:
            res["ok"], res["reason"] = False, f"reached at {trace.t[hit]:.2f}s"
        else:
            res["ok"], res["reason"] = True, ""
            start = hit
        out.append(res)
    return out


def milestones_ok(trace: RunTrace) -> bool:
    return all(m["ok"] for m in trace.meta.get("milestones", []))

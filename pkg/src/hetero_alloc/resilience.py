"""Reacting to disturbances.

Two mechanisms keep the allocation honest when the world misbehaves:

* exogenous (unmodeled) effects show up only as a robot making less progress
  than its nominal model predicts; the shortfall erodes the robot's
  specialization for the task it is working on;
* endogenous (detectable) faults edit the mappings directly, after which the
  derived capability and specialization matrices are recomputed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import HeterogeneityModel, projector


@dataclass
class ProgressLedger:
    """What a robot needs to predict its own nominal progress over one step."""

    x_prev: np.ndarray     # actual ensemble state at the previous step, (n_robots, n_x)
    u_prev: np.ndarray     # applied inputs at the previous step, (n_robots, n_u)
    dt: float
    beta: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        self.x_prev = np.asarray(self.x_prev, dtype=float)
        self.u_prev = np.asarray(self.u_prev, dtype=float)


def simulate_nominal(ledger: ProgressLedger, i: int, dynamics, clamp=None) -> np.ndarray:
    """Ensemble state after robot ``i`` alone takes a nominal Euler step.

    Every other robot stays at its previous actual state. ``clamp`` is an
    optional callable applied to the stepped state (domain walls).
    """
    x = ledger.x_prev.copy()
    xi = dynamics.step(x[i], ledger.u_prev[i], ledger.dt)
    x[i] = xi if clamp is None else clamp(xi)
    return x


def progress_deficit(task, i: int, x_act, x_sim, t: float, ctx=None) -> float:
    """min(0, h_i(actual) - h_i(simulated)); never positive."""
    return min(0.0, task.value(i, x_act, t, ctx) - task.value(i, x_sim, t, ctx))


def update_specialization(s, alpha, deficits, beta: float) -> np.ndarray:
    """Decay the specialization of the tasks a robot is assigned to, clamped to [0, 1]."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    s = np.asarray(s, dtype=float)
    out = s + beta * np.asarray(alpha, dtype=float) * np.minimum(np.asarray(deficits, dtype=float), 0.0)
    return np.clip(out, 0.0, 1.0)


def specialization_projector(s) -> np.ndarray:
    return projector(s)


@dataclass(frozen=True)
class DisturbanceEvent:
    """A detectable change to the mappings, applied at time ``t``."""

    t: float
    kind: str
    robot: int | None = None
    feature: int | None = None
    capability: int | None = None
    edge: int | None = None
    weight: float | None = None

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError("event time must be non-negative")
        if self.kind == "feature_failure":
            if self.robot is None or self.feature is None:
                raise ValueError("feature_failure needs robot and feature")
        elif self.kind == "weight_change":
            if self.capability is None or self.edge is None or self.weight is None:
                raise ValueError("weight_change needs capability, edge and weight")
        else:
            raise ValueError(f"unknown event kind {self.kind!r}")

    @classmethod
    def from_dict(cls, d) -> "DisturbanceEvent":
        keys = ("robot", "feature", "capability", "edge", "weight")
        return cls(float(d["t"]), d["kind"], **{k: d.get(k) for k in keys})

    def to_dict(self) -> dict:
        out = {"t": self.t, "kind": self.kind}
        for k in ("robot", "feature", "capability", "edge", "weight"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out


def apply_endogenous(model: HeterogeneityModel, event: DisturbanceEvent) -> HeterogeneityModel:
    """Edit the mappings according to ``event``; derived matrices are rebuilt."""
    if event.kind == "feature_failure":
        return model.without_feature(event.robot, event.feature)
    if event.kind == "weight_change":
        return model.with_weight(event.capability, event.edge, event.weight)
    raise ValueError(f"unknown event kind {event.kind!r}")


def merge_specialization(current, old_struct, new_struct) -> np.ndarray:
    """Carry decayed specializations across a model change.

    An entry the new model rules out becomes 0, a newly possible entry starts
    at 1, and an entry possible in both keeps its current (possibly decayed) value.
    """
    current = np.asarray(current, dtype=float)
    old_on = np.asarray(old_struct) > 0
    new_on = np.asarray(new_struct) > 0
    return np.where(new_on, np.where(old_on, current, 1.0), 0.0)


def apply_events(model, spec, events, t, applied: set, log=None):
    """Apply every not-yet-applied event with ``event.t <= t``.

    Returns the (possibly new) model and specialization; ``applied`` is updated
    in place with event indices.
    """
    for idx, ev in enumerate(events):
        if idx in applied or ev.t > t + 1e-12:
            continue
        old = model.specialization_matrix
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model = apply_endogenous(model, ev)
        spec = merge_specialization(spec, old, model.specialization_matrix)
        applied.add(idx)
        if log is not None:
            entry = {"t": t, "type": "endogenous", **ev.to_dict()}
            if caught:
                entry["warning"] = str(caught[0].message)
            log.append(entry)
    return model, spec

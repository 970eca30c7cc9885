"""Scenario files: JSON description of a team, its tasks and its world.

Top-level sections (indices are 0-based everywhere)::

    model      {"T": [[..]], "A": [[..]], "capabilities": [{"hyperedges": [{"features": [..], "weight": w}]}]}
    robots     [{"state": [..], "class": "wheeled" | "flying"}]
    tasks      [{"type": "goto", "target": [x, y]}
                {"type": "trajectory", "times": [..], "waypoints": [[x, y], ..]}
                {"type": "coverage_escort", "monitor": [x, y], "times": [..], "waypoints": [..]}]
    domain     {"bounds": [xmin, xmax, ymin, ymax], "k": 100, "r": 0.4, "grid": [120, 80]}
    allocator  {"C", "l", "kappa", "delta_max", "gamma", "n_min", "n_max", "beta"}
    events     [{"t": 15, "kind": "feature_failure", "robot": 2, "feature": 2},
                {"t": 5, "kind": "weight_change", "capability": 0, "edge": 0, "weight": 0.5}]
    fields     [{"type": "disk", "center": [x, y], "radius": r,
                 "mobility": {"wheeled": 0, "flying": 1}, "mode": "trap" | "barrier"}]
    sim        {"dt": 0.033, "duration": 80, "latency": 100, "mode": "centralized" | "mixed", "seed": 0}
    milestones [{"name", "t", "tol", "assignment": {"task": [robots]}, "goal_tol"}]
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path as FsPath

import numpy as np

from .model import HeterogeneityModel
from .resilience import DisturbanceEvent
from .tasks import (CoverageDomain, CoverageEscortTask, GotoTask, Linear, Path, SingleIntegrator,
                    TrajectoryTask)

BUNDLED = ("example1", "example1b", "example2", "example3", "settle", "experiment")


@dataclass(frozen=True)
class DiskField:
    """A round patch of ground that changes how far a robot can move per step.

    ``mode="trap"``: a robot whose class has mobility 0 and which is inside the
    disk cannot move. ``mode="barrier"``: such a robot cannot enter the disk; a
    step that would end inside is projected back onto the rim.
    """

    center: tuple
    radius: float
    mobility: dict
    mode: str = "trap"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")
        if self.mode not in ("trap", "barrier"):
            raise ValueError(f"unknown disk mode {self.mode!r}")

    def inside(self, p) -> bool:
        c = np.asarray(self.center, dtype=float)
        return float(np.sum((np.asarray(p[:2], dtype=float) - c) ** 2)) < self.radius ** 2

    def factor(self, cls: str) -> float:
        return float(self.mobility.get(cls, 1.0))

    def to_dict(self):
        return {"type": "disk", "center": list(self.center), "radius": self.radius,
                "mobility": dict(self.mobility), "mode": self.mode}


@dataclass
class AllocatorParams:
    C: float = 1e6
    l: float = 1e-6
    kappa: float = 1e6
    delta_max: float = 1e3
    gamma: float = 5.0
    n_min: list | None = None
    n_max: list | None = None
    beta: float = 1.0

    def __post_init__(self):
        if self.C < 0 or self.l < 0:
            raise ValueError("C and l must be non-negative")
        if not (self.kappa > 0 and self.delta_max > 0 and self.gamma > 0 and self.beta > 0):
            raise ValueError("kappa, delta_max, gamma and beta must be positive")


@dataclass
class SimParams:
    dt: float = 0.033
    duration: float = 10.0
    latency: int = 100
    mode: str = "centralized"
    seed: int = 0
    instant: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.latency < 1:
            raise ValueError("latency must be at least one step")
        if self.mode not in ("centralized", "mixed"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def steps(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9)) + 1


@dataclass
class Scenario:
    name: str
    model: HeterogeneityModel
    x0: np.ndarray
    classes: list
    tasks: list
    dynamics: SingleIntegrator
    domain: CoverageDomain
    allocator: AllocatorParams
    sim: SimParams
    events: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    milestones: list = field(default_factory=list)
    source: str | None = None
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        n_r = self.model.n_robots
        if self.x0.shape[0] != n_r:
            raise ValueError(f"{self.x0.shape[0]} robot states for {n_r} robots in the model")
        if len(self.tasks) != self.model.n_tasks:
            raise ValueError(f"{len(self.tasks)} tasks for {self.model.n_tasks} task rows")
        for ev in self.events:
            if ev.robot is not None and not 0 <= ev.robot < n_r:
                raise ValueError(f"event references robot {ev.robot}")
            if ev.feature is not None and not 0 <= ev.feature < self.model.n_features:
                raise ValueError(f"event references feature {ev.feature}")
            if ev.capability is not None and not 0 <= ev.capability < self.model.n_caps:
                raise ValueError(f"event references capability {ev.capability}")
        for lst, name in ((self.allocator.n_min, "n_min"), (self.allocator.n_max, "n_max")):
            if lst is not None and len(lst) != len(self.tasks):
                raise ValueError(f"{name} needs one entry per task")
        self._guard_delta_max()

    @property
    def gamma(self) -> Linear:
        return Linear(self.allocator.gamma)

    @property
    def n_robots(self) -> int:
        return self.model.n_robots

    def _guard_delta_max(self):
        """delta_max must dominate every barrier value the world can produce."""
        dom = self.domain
        diag2 = (dom.xmax - dom.xmin) ** 2 + (dom.ymax - dom.ymin) ** 2
        worst = 0.0
        for t in self.tasks:
            bound = diag2 + (math.pi ** 2 if isinstance(t, CoverageEscortTask) else 0.0)
            worst = max(worst, self.allocator.gamma * bound)
        if self.allocator.delta_max < worst:
            raise ValueError(f"delta_max={self.allocator.delta_max:g} is below the largest "
                             f"possible |gamma(h)|={worst:g}; the execution QP could become infeasible")

    def with_overrides(self, **sim_kw) -> "Scenario":
        sc = copy.copy(self)
        sc.sim = SimParams(**{**self.sim.__dict__, **sim_kw})
        return sc

    def without_disturbances(self) -> "Scenario":
        sc = copy.copy(self)
        sc.events = []
        sc.fields = []
        return sc


def _task_from_dict(d, domain):
    kind = d["type"]
    if kind == "goto":
        return GotoTask(d["target"])
    if kind == "trajectory":
        return TrajectoryTask(Path(d["times"], d["waypoints"]))
    if kind == "coverage_escort":
        return CoverageEscortTask(domain, d["monitor"], Path(d["times"], d["waypoints"]))
    raise ValueError(f"unknown task type {kind!r}")


def scenario_from_dict(d: dict, source: str | None = None) -> Scenario:
    model = HeterogeneityModel.from_dict(d["model"])
    robots = d["robots"]
    states = [r["state"] for r in robots]
    n_x = len(states[0]) if states else 2
    if any(len(s) != n_x for s in states):
        raise ValueError("all robot states must have the same length")
    x0 = np.array(states, dtype=float).reshape(len(states), n_x)
    classes = [r.get("class", "wheeled") for r in robots]
    dd = d.get("domain", {})
    b = dd.get("bounds", [-1.8, 1.8, -1.2, 1.2])
    grid = dd.get("grid", [120, 80])
    domain = CoverageDomain(b[0], b[1], b[2], b[3], dd.get("k", 100.0), dd.get("r", 0.4),
                            int(grid[0]), int(grid[1]), bool(dd.get("uniform", False)))
    tasks = [_task_from_dict(t, domain) for t in d.get("tasks", [])]
    if any(isinstance(t, CoverageEscortTask) for t in tasks) and n_x < 3:
        raise ValueError("coverage_escort tasks need a heading as the third state component")
    alloc = AllocatorParams(**d.get("allocator", {}))
    sim = SimParams(**d.get("sim", {}))
    events = [DisturbanceEvent.from_dict(e) for e in d.get("events", [])]
    fields = []
    for f in d.get("fields", []):
        if f.get("type", "disk") != "disk":
            raise ValueError(f"unknown field type {f.get('type')!r}")
        fields.append(DiskField(tuple(f["center"]), float(f["radius"]),
                                dict(f.get("mobility", {"wheeled": 0.0, "flying": 1.0})),
                                f.get("mode", "trap")))
    return Scenario(name=d.get("name", "scenario"), model=model, x0=x0, classes=classes, tasks=tasks,
                    dynamics=SingleIntegrator(n_x), domain=domain, allocator=alloc, sim=sim,
                    events=events, fields=fields, milestones=list(d.get("milestones", [])),
                    source=source, raw=d)


def load_scenario(path) -> Scenario:
    p = FsPath(path)
    with open(p) as fh:
        d = json.load(fh)
    return scenario_from_dict(d, source=str(p))


def bundled_path(name: str) -> str:
    if name not in BUNDLED:
        raise ValueError(f"no bundled scenario {name!r}; choose from {BUNDLED}")
    return str(resources.files("hetero_alloc") / "scenarios" / f"{name}.json")


def bundled_scenario(name: str) -> Scenario:
    return load_scenario(bundled_path(name))


def resolve_scenario(arg: str) -> Scenario:
    """A path to a JSON file, or the name of a bundled scenario."""
    if FsPath(arg).exists():
        return load_scenario(arg)
    return bundled_scenario(arg)

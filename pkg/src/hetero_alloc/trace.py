"""Run traces and their CSV / JSON-sidecar serialization.

The CSV has one row per (step, robot)::

    t,robot,x1..xN,u1..uM,delta_1..delta_T,alpha,V,s_1..s_T,uhat1..uhatM,objective

``alpha`` is the 1-based index of the robot's task (0 when idle). ``V`` and
``objective`` repeat across the robots of a step. Floats are written with 17
significant digits so a trace reloads bit-exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class RunTrace:
    t: np.ndarray            # (K,)
    x: np.ndarray            # (K, n_r, n_x)
    u: np.ndarray            # (K, n_r, n_u)
    delta: np.ndarray        # (K, n_r, n_t)
    alpha: np.ndarray        # (K, n_t, n_r) int
    V: np.ndarray            # (K,)
    spec: np.ndarray         # (K, n_t, n_r)
    objective: np.ndarray    # (K,)
    uhat: np.ndarray | None = None
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.t)

    @property
    def n_robots(self) -> int:
        return self.x.shape[1]

    @property
    def n_tasks(self) -> int:
        return self.alpha.shape[1]

    def input_gap(self) -> np.ndarray:
        """max over robots and components of |u - uhat| per step."""
        if self.uhat is None:
            raise ValueError("trace has no reference inputs")
        return np.max(np.abs(self.u - self.uhat).reshape(self.steps, -1), axis=1)

    def assignment_at(self, k: int) -> dict:
        a = self.alpha[k]
        return {m: [int(i) for i in np.flatnonzero(a[m])] for m in range(a.shape[0])}

    def alpha_changes(self) -> list:
        """Steps where the allocation differs from the previous step."""
        return [k for k in range(1, self.steps) if not np.array_equal(self.alpha[k], self.alpha[k - 1])]

    # -- IO -------------------------------------------------------------
    def header(self) -> list:
        n_x, n_u, n_t = self.x.shape[2], self.u.shape[2], self.n_tasks
        return (["t", "robot"] + [f"x{j + 1}" for j in range(n_x)] + [f"u{j + 1}" for j in range(n_u)]
                + [f"delta_{m + 1}" for m in range(n_t)] + ["alpha", "V"]
                + [f"s_{m + 1}" for m in range(n_t)] + [f"uhat{j + 1}" for j in range(n_u)] + ["objective"])

    def write(self, path, sidecar: dict | None = None) -> tuple[str, str]:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fmt = lambda v: "%.17g" % v
        n_u = self.u.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for k in range(self.steps):
                for i in range(self.n_robots):
                    col = self.alpha[k][:, i]
                    a = int(np.argmax(col)) + 1 if col.any() else 0
                    uh = self.uhat[k, i] if self.uhat is not None else [float("nan")] * n_u
                    w.writerow([fmt(self.t[k]), i] + [fmt(v) for v in self.x[k, i]]
                               + [fmt(v) for v in self.u[k, i]] + [fmt(v) for v in self.delta[k, i]]
                               + [a, fmt(self.V[k])] + [fmt(v) for v in self.spec[k][:, i]]
                               + [fmt(v) for v in uh] + [fmt(self.objective[k])])
        side = path.with_suffix(".json")
        payload = {"events": self.events, "meta": self.meta}
        if sidecar:
            payload.update(sidecar)
        with open(side, "w") as fh:
            json.dump(payload, fh, indent=2, default=_jsonable)
        return str(path), str(side)

    @classmethod
    def read(cls, path) -> "RunTrace":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        n_x = sum(1 for h in head if h.startswith("x"))
        n_u = sum(1 for h in head if h.startswith("u") and not h.startswith("uhat"))
        n_t = sum(1 for h in head if h.startswith("delta_"))
        n_r = len({int(r[1]) for r in body})
        K = len(body) // n_r
        data = np.array([[float(v) for v in r] for r in body]).reshape(K, n_r, -1)
        c = 2
        x = data[:, :, c:c + n_x]; c += n_x
        u = data[:, :, c:c + n_u]; c += n_u
        delta = data[:, :, c:c + n_t]; c += n_t
        a_idx = data[:, :, c].astype(int); c += 1
        V = data[:, 0, c]; c += 1
        spec = np.transpose(data[:, :, c:c + n_t], (0, 2, 1)); c += n_t
        uhat = data[:, :, c:c + n_u]; c += n_u
        obj = data[:, 0, c]
        alpha = np.zeros((K, n_t, n_r), dtype=int)
        for k in range(K):
            for i in range(n_r):
                if a_idx[k, i]:
                    alpha[k, a_idx[k, i] - 1, i] = 1
        side = path.with_suffix(".json")
        events, meta = [], {}
        if side.exists():
            with open(side) as fh:
                payload = json.load(fh)
            events = payload.get("events", [])
            meta = payload.get("meta", {})
        return cls(t=data[:, 0, 0], x=x, u=u, delta=delta, alpha=alpha, V=V, spec=spec, objective=obj,
                   uhat=None if np.all(np.isnan(uhat)) else uhat, events=events, meta=meta)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialize {type(o)}")

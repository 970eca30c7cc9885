"""Feature / capability / task mappings for a heterogeneous robot team.

A team is described by three mappings:

* a task-requirement matrix (tasks x capabilities) holding the minimum number of
  robots with each capability a task needs,
* a binary robot-feature matrix (features x robots),
* for every capability, a set of weighted feature bundles (hyperedges). A robot
  supports a capability when it owns *every* feature of at least one bundle.

From these the model derives the robot-capability matrix and each robot's
per-task specialization vector. Models are immutable; mutations return a new
model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._validation import as_matrix, check_binary, check_index, check_nonneg_int

KRON_TOL = 1e-9


def kron_shift(x, n, tol: float = KRON_TOL):
    """Shifted Kronecker delta: 1 where ``|x - n| <= tol``, else 0.

    Works elementwise on arrays and returns plain ints for scalars.
    """
    out = (np.abs(np.asarray(x, dtype=float) - n) <= tol).astype(int)
    if out.ndim == 0:
        return int(out)
    return out


@dataclass(frozen=True)
class Hyperedge:
    """A bundle of features that jointly enable one capability."""

    features: tuple
    weight: float = 1.0

    def __post_init__(self):
        feats = tuple(sorted(set(int(f) for f in self.features)))
        if not feats:
            raise ValueError("a hyperedge needs at least one feature")
        if not self.weight >= 0:
            raise ValueError(f"hyperedge weight must be non-negative, got {self.weight}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "weight", float(self.weight))


class HeterogeneityModel:
    """Immutable container for the team mappings plus derived quantities.

    Parameters
    ----------
    requirements : array (n_tasks, n_caps)
        Non-negative integer robot counts needed per (task, capability).
    features : array (n_features, n_robots)
        Binary robot-feature incidence.
    capabilities : sequence of sequences of Hyperedge
        Bundles per capability; an empty sequence is allowed.
    """

    def __init__(self, requirements, features, capabilities: Sequence[Sequence[Hyperedge]]):
        req = as_matrix(requirements, "requirements")
        check_nonneg_int(req, "requirements")
        feat = as_matrix(features, "features")
        check_binary(feat, "features")
        caps = tuple(tuple(e if isinstance(e, Hyperedge) else Hyperedge(**e) for e in c)
                     for c in capabilities)
        if len(caps) != req.shape[1]:
            raise ValueError(f"{len(caps)} capabilities given but requirements has {req.shape[1]} columns")
        for k, edges in enumerate(caps):
            for e in edges:
                if max(e.features) >= feat.shape[0]:
                    raise ValueError(f"capability {k} references feature {max(e.features)}, "
                                     f"only {feat.shape[0]} exist")
        req.setflags(write=False)
        feat.setflags(write=False)
        self._req = req
        self._feat = feat
        self._caps = caps
        self._F = np.vstack([self._capability_row(k) for k in range(len(caps))]) \
            if caps else np.zeros((0, feat.shape[1]))
        self._F.setflags(write=False)
        self._S = np.vstack([self._spec_column(i) for i in range(self.n_robots)]).T \
            if self.n_robots else np.zeros((self.n_tasks, 0))
        self._S.setflags(write=False)

    # -- shapes -----------------------------------------------------------
    @property
    def n_tasks(self) -> int:
        return self._req.shape[0]

    @property
    def n_caps(self) -> int:
        return self._req.shape[1]

    @property
    def n_features(self) -> int:
        return self._feat.shape[0]

    @property
    def n_robots(self) -> int:
        return self._feat.shape[1]

    @property
    def requirements(self) -> np.ndarray:
        return self._req

    @property
    def features(self) -> np.ndarray:
        return self._feat

    @property
    def capabilities(self):
        return self._caps

    # -- hypergraph pages -------------------------------------------------
    def bundle_matrix(self, k: int) -> np.ndarray:
        """Row-stochastic bundle/feature matrix for capability ``k``."""
        k = check_index(k, self.n_caps, "capability")
        H = np.zeros((len(self._caps[k]), self.n_features))
        for e, edge in enumerate(self._caps[k]):
            H[e, list(edge.features)] = 1.0 / len(edge.features)
        return H

    def bundle_weights(self, k: int) -> np.ndarray:
        k = check_index(k, self.n_caps, "capability")
        return np.diag([e.weight for e in self._caps[k]])

    def _capability_row(self, k):
        if not self._caps[k]:
            return np.zeros(self.n_robots)
        H = self.bundle_matrix(k)
        w = np.array([e.weight for e in self._caps[k]])
        complete = kron_shift(H @ self._feat, 1)
        return np.max(w[:, None] * complete, axis=0)

    def capability_row(self, k: int) -> np.ndarray:
        """Best bundle weight per robot for capability ``k`` (0 if no bundle is complete)."""
        k = check_index(k, self.n_caps, "capability")
        return self._F[k].copy()

    @property
    def capability_matrix(self) -> np.ndarray:
        """Robot-capability matrix, shape (n_caps, n_robots)."""
        return self._F

    # -- specialization ---------------------------------------------------
    def _spec_column(self, i):
        load = self._req @ self._F[:, i]
        return 1.0 - kron_shift(load, 0)

    def specialization(self, i: int) -> np.ndarray:
        """Diagonal of robot ``i``'s structural specialization matrix (length n_tasks)."""
        i = check_index(i, self.n_robots, "robot")
        return self._S[:, i].copy()

    @property
    def specialization_matrix(self) -> np.ndarray:
        """Structural specialization for all robots, indexed [task, robot]."""
        return self._S

    # -- mutations --------------------------------------------------------
    def without_feature(self, robot: int, feature: int) -> "HeterogeneityModel":
        """Return a copy where ``robot`` has lost ``feature``."""
        robot = check_index(robot, self.n_robots, "robot")
        feature = check_index(feature, self.n_features, "feature")
        feat = self._feat.copy()
        if feat[feature, robot] == 0:
            warnings.warn(f"robot {robot} does not own feature {feature}; failure ignored",
                          stacklevel=2)
            return self
        feat[feature, robot] = 0
        return HeterogeneityModel(self._req, feat, self._caps)

    def with_weight(self, k: int, e: int, w: float) -> "HeterogeneityModel":
        """Return a copy with bundle ``e`` of capability ``k`` reweighted to ``w``."""
        k = check_index(k, self.n_caps, "capability")
        e = check_index(e, len(self._caps[k]), "hyperedge")
        if not w >= 0:
            raise ValueError(f"hyperedge weight must be non-negative, got {w}")
        caps = list(self._caps)
        edges = list(caps[k])
        edges[e] = Hyperedge(edges[e].features, w)
        caps[k] = tuple(edges)
        return HeterogeneityModel(self._req, self._feat, caps)

    def with_requirements(self, requirements) -> "HeterogeneityModel":
        return HeterogeneityModel(requirements, self._feat, self._caps)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "T": self._req.astype(int).tolist(),
            "A": self._feat.astype(int).tolist(),
            "capabilities": [
                {"hyperedges": [{"features": list(e.features), "weight": e.weight} for e in edges]}
                for edges in self._caps
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "HeterogeneityModel":
        caps = [[Hyperedge(tuple(h["features"]), h.get("weight", 1.0)) for h in c["hyperedges"]]
                for c in d["capabilities"]]
        n_caps = len(caps)
        n_robots = len(d["A"][0]) if d["A"] else 0
        T = d["T"] if d["T"] else np.zeros((0, n_caps))
        A = d["A"] if d["A"] else np.zeros((0, n_robots))
        return cls(T, A, caps)

    def __eq__(self, other):
        if not isinstance(other, HeterogeneityModel):
            return NotImplemented
        return (np.array_equal(self._req, other._req) and np.array_equal(self._feat, other._feat)
                and self._caps == other._caps)

    def __hash__(self):
        return hash((self._req.tobytes(), self._feat.tobytes(), self._caps))

    def __repr__(self):
        return (f"HeterogeneityModel(n_tasks={self.n_tasks}, n_caps={self.n_caps}, "
                f"n_features={self.n_features}, n_robots={self.n_robots})")


def projector(s) -> np.ndarray:
    """Diagonal of ``I - S S^+`` for a diagonal specialization ``s``.

    The pseudo-inverse of a diagonal matrix inverts the nonzero entries, so the
    result is 1 exactly where ``s`` is 0.
    """
    s = np.asarray(s, dtype=float)
    return np.where(s != 0, 0.0, 1.0)


def check_feasible_assignment(F, T, assignment) -> bool:
    """True when every task's assigned robots jointly cover its requirement row.

    ``assignment`` maps task index to an iterable of robot indices (a dict, or a
    sequence indexed by task). Missing tasks count as empty.
    """
    F = np.asarray(F, dtype=float)
    T = np.asarray(T, dtype=float)
    n_t, n_c = T.shape
    if F.shape[0] != n_c:
        raise ValueError("F and T disagree on the number of capabilities")
    items: Iterable
    if isinstance(assignment, Mapping):
        items = assignment.items()
    else:
        items = enumerate(assignment)
    robots_of = {t: [] for t in range(n_t)}
    for t, robots in items:
        t = check_index(t, n_t, "task")
        robots_of[t] = [check_index(r, F.shape[1], "robot") for r in robots]
    for t in range(n_t):
        cover = F[:, robots_of[t]].sum(axis=1) if robots_of[t] else np.zeros(n_c)
        if np.any(cover < T[t] - KRON_TOL):
            return False
    return True


def alpha_to_assignment(alpha) -> dict:
    alpha = np.asarray(alpha)
    return {m: [int(i) for i in np.flatnonzero(alpha[m] > 0.5)] for m in range(alpha.shape[0])}

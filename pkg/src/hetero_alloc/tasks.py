"""Barrier-function encoded tasks with analytic derivatives.

Every task exposes a per-robot contribution ``h_i(x, t)`` together with its
gradient with respect to robot ``i``'s own state and its explicit time
derivative. The task value for a set of robots is the sum of contributions.

Ensemble states are arrays of shape ``(n_robots, n_x)``; the first two state
components are the planar position. Coverage tasks also read a heading angle
from the third component.

Coverage tasks couple robots through weighted Voronoi centroids. Those are
computed once per instant in a :class:`CoverageContext` and then held fixed,
so gradients only flow through the robot's own state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# dynamics and class-K functions

@dataclass(frozen=True)
class SingleIntegrator:
    """x_i' = u_i, so the drift is zero and the input matrix is the identity."""

    n_x: int = 2

    @property
    def n_u(self) -> int:
        return self.n_x

    def f(self, xi) -> np.ndarray:
        return np.zeros(self.n_x)

    def g(self, xi) -> np.ndarray:
        return np.eye(self.n_x)

    def step(self, xi, ui, dt, mobility: float = 1.0) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return xi + dt * (self.f(xi) + mobility * (self.g(xi) @ np.asarray(ui, dtype=float)))


@dataclass(frozen=True)
class Linear:
    """Class-K function s -> gain * s."""

    gain: float = 5.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("class-K gain must be positive")

    def __call__(self, s):
        return self.gain * np.asarray(s, dtype=float) if np.ndim(s) else self.gain * float(s)


def wrap_angle(a):
    """Wrap to the half-open interval (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(a, dtype=float), 2 * math.pi)


# ---------------------------------------------------------------------------
# coverage geometry

@dataclass(frozen=True)
class CoverageDomain:
    """Rectangle with a grid for centroid quadrature and a ring-shaped density."""

    xmin: float = -1.8
    xmax: float = 1.8
    ymin: float = -1.2
    ymax: float = 1.2
    k: float = 100.0
    r: float = 0.4
    nx: int = 120
    ny: int = 80
    uniform: bool = False   # use density 1 everywhere instead of the ring

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("degenerate domain bounds")
        if not (self.k > 0 and self.r > 0 and self.nx > 0 and self.ny > 0):
            raise ValueError("k, r and grid sizes must be positive")

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2])

    @property
    def cell(self) -> tuple:
        return ((self.xmax - self.xmin) / self.nx, (self.ymax - self.ymin) / self.ny)

    def refined(self, factor: int) -> "CoverageDomain":
        return CoverageDomain(self.xmin, self.xmax, self.ymin, self.ymax, self.k, self.r,
                              self.nx * factor, self.ny * factor, self.uniform)

    def grid(self) -> np.ndarray:
        """Cell centers, shape (nx*ny, 2)."""
        return _grid(self.xmin, self.xmax, self.ymin, self.ymax, self.nx, self.ny)

    def density(self, q, center) -> np.ndarray:
        q = np.atleast_2d(q)
        if self.uniform:
            return np.ones(q.shape[0])
        d2 = np.sum((q - np.asarray(center, dtype=float)) ** 2, axis=1)
        return np.exp(-self.k * (d2 - self.r ** 2) ** 2)

    def density_dt(self, q, center, center_rate) -> np.ndarray:
        """Time derivative of the density when its center moves at ``center_rate``."""
        q = np.atleast_2d(q)
        if self.uniform:
            return np.zeros(q.shape[0])
        diff = q - np.asarray(center, dtype=float)
        d2 = np.sum(diff ** 2, axis=1)
        phi = np.exp(-self.k * (d2 - self.r ** 2) ** 2)
        return phi * 4.0 * self.k * (d2 - self.r ** 2) * (diff @ np.asarray(center_rate, dtype=float))

    def contains(self, p) -> bool:
        return self.xmin <= p[0] <= self.xmax and self.ymin <= p[1] <= self.ymax

    def clamp(self, p) -> np.ndarray:
        p = np.array(p, dtype=float)
        p[0] = min(max(p[0], self.xmin), self.xmax)
        p[1] = min(max(p[1], self.ymin), self.ymax)
        return p


_GRID_CACHE: dict = {}


def _grid(xmin, xmax, ymin, ymax, nx, ny):
    key = (xmin, xmax, ymin, ymax, nx, ny)
    g = _GRID_CACHE.get(key)
    if g is None:
        xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
        ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        g = np.column_stack([X.ravel(), Y.ravel()])
        g.setflags(write=False)
        if len(_GRID_CACHE) > 16:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = g
    return g


def _separate(positions):
    """Nudge coincident sites apart by a deterministic 1e-6 jitter."""
    pos = np.array(positions, dtype=float)
    n = len(pos)
    for a in range(n):
        for b in range(a):
            if np.allclose(pos[a], pos[b], rtol=0, atol=1e-12):
                log.warning("coincident Voronoi sites %d and %d; jittering", b, a)
                ang = 2.399963229728653 * a   # golden angle spreads repeated nudges
                pos[a] += 1e-6 * np.array([math.cos(ang), math.sin(ang)])
    return pos


def _nearest(q, pos):
    qx, qy = q[:, 0], q[:, 1]
    d2 = np.empty((len(q), len(pos)))
    for j, (px, py) in enumerate(pos):   # few sites, many points
        d2[:, j] = (qx - px) ** 2 + (qy - py) ** 2
    return np.argmin(d2, axis=1), d2


def voronoi_cells(positions, domain: CoverageDomain, points=None) -> np.ndarray:
    """Index of the nearest site for every grid cell (or for ``points``)."""
    pos = _separate(np.asarray(positions, dtype=float)[:, :2])
    q = domain.grid() if points is None else np.asarray(points, dtype=float)
    return _nearest(q, pos)[0]


SUBDIV = 4


def refine_boundary(positions, domain: CoverageDomain, points, weights, density, sub: int = SUBDIV):
    """Split every grid cell a Voronoi edge may cross into ``sub x sub`` points.

    Whole-cell ownership is only first-order accurate along cell edges. A
    boundary can cross a cell only if the gap between its nearest and second
    nearest site distances is at most the cell diagonal, so exactly those
    cells are subdivided. ``weights`` is a tuple of per-point arrays and
    ``density`` maps an (M, 2) array to a tuple of the same arrays at new
    points. Sub-points carry 1/sub**2 of a cell each.

    Returns ``(points, weights, owner)`` with ``owner`` the nearest site of
    every returned point.
    """
    pos = _separate(np.asarray(positions, dtype=float)[:, :2])
    q = np.asarray(points, dtype=float)
    owner, d2 = _nearest(q, pos)
    if len(pos) < 2 or sub <= 1 or not len(q):
        return q, weights, owner
    rows = np.arange(len(q))
    d_first = d2[rows, owner]
    d2[rows, owner] = np.inf
    d_second = d2.min(axis=1)
    hx, hy = domain.cell
    split = np.sqrt(d_second) - np.sqrt(d_first) <= math.hypot(hx, hy)
    if not split.any():
        return q, weights, owner
    off = ((np.arange(sub) + 0.5) / sub - 0.5)
    ox, oy = np.meshgrid(off * hx, off * hy, indexing="xy")
    offsets = np.column_stack([ox.ravel(), oy.ravel()])
    fine = (q[split][:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    fine_owner, _ = _nearest(fine, pos)
    extra = density(fine)
    keep = ~split
    out = tuple(np.concatenate([np.asarray(w, dtype=float)[keep], np.asarray(e, dtype=float) / sub ** 2])
                for w, e in zip(weights, extra))
    return np.vstack([q[keep], fine]), out, np.concatenate([owner[keep], fine_owner])


def voronoi_centroids(positions, domain: CoverageDomain, weights=None, weights_dt=None, points=None,
                      density=None):
    """Weighted centroids of all cells, and their time derivatives if ``weights_dt`` is given.

    ``weights`` holds the density at each grid cell (defaults to the uniform
    density). ``points`` restricts the quadrature to a subset of the grid, in
    which case the weights refer to that subset. ``density``, a callable
    returning ``(weights,)`` or ``(weights, weights_dt)`` at arbitrary points,
    turns on sub-cell refinement along cell boundaries. Returns
    ``(centroids, rates)`` with ``rates`` None when not asked.
    """
    pos = np.asarray(positions, dtype=float)[:, :2]
    q = domain.grid() if points is None else np.asarray(points, dtype=float)
    w = np.ones(q.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    area = np.ones(q.shape[0])
    if density is not None:
        wt0 = np.zeros(q.shape[0]) if weights_dt is None else np.asarray(weights_dt, dtype=float)

        def fine(p):
            out = density(p)
            return out[0], (out[1] if len(out) > 1 else np.zeros(len(p))), np.ones(len(p))
        q, (w, wt0, area), owner = refine_boundary(pos, domain, q, (w, wt0, area), fine)
        if weights_dt is not None:
            weights_dt = wt0
    else:
        owner = voronoi_cells(pos, domain, q)
    n = len(pos)
    mass = np.bincount(owner, weights=w, minlength=n)
    mx = np.bincount(owner, weights=w * q[:, 0], minlength=n)
    my = np.bincount(owner, weights=w * q[:, 1], minlength=n)
    cents = np.empty((n, 2))
    rates = None if weights_dt is None else np.zeros((n, 2))
    if weights_dt is not None:
        wt = np.asarray(weights_dt, dtype=float)
        mt = np.bincount(owner, weights=wt, minlength=n)
        mtx = np.bincount(owner, weights=wt * q[:, 0], minlength=n)
        mty = np.bincount(owner, weights=wt * q[:, 1], minlength=n)
    for j in range(n):
        if mass[j] > 1e-300:
            cents[j] = (mx[j] / mass[j], my[j] / mass[j])
            if rates is not None:
                rates[j] = (np.array([mtx[j], mty[j]]) - cents[j] * mt[j]) / mass[j]
        else:
            cell = owner == j
            if np.any(cell):
                log.warning("zero density mass in Voronoi cell %d; using unweighted centroid", j)
                cents[j] = area[cell] @ q[cell] / area[cell].sum()
            else:
                cents[j] = pos[j]
    return cents, rates


def voronoi_centroid(positions, i: int, domain: CoverageDomain, phi=None) -> np.ndarray:
    """Centroid of site ``i``'s Voronoi cell under density ``phi``.

    ``phi`` is a callable mapping an (M, 2) array of points to M weights; None
    means uniform density.
    """
    if phi is None:
        phi = lambda q: np.ones(len(q))
    cents, _ = voronoi_centroids(positions, domain, phi(domain.grid()), density=lambda q: (phi(q),))
    return cents[i]


# ---------------------------------------------------------------------------
# reference paths

class Path:
    """Clamped cubic spline through timed waypoints, held still outside its time span."""

    def __init__(self, times, points):
        times = np.asarray(times, dtype=float)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[0] != times.size:
            raise ValueError("need one waypoint per time")
        if times.size == 1:
            self._spline = None
            self._p0 = points[0]
        else:
            if np.any(np.diff(times) <= 0):
                raise ValueError("waypoint times must be increasing")
            self._spline = CubicSpline(times, points, bc_type="clamped")
        self.times = times
        self.points = points

    def __call__(self, t) -> np.ndarray:
        if self._spline is None:
            return self._p0.copy()
        t = min(max(float(t), self.times[0]), self.times[-1])
        return self._spline(t)

    def rate(self, t) -> np.ndarray:
        if self._spline is None or not (self.times[0] < t < self.times[-1]):
            return np.zeros(self.points.shape[1])
        return self._spline(float(t), 1)


# ---------------------------------------------------------------------------
# tasks

class Task:
    """Base class. Subclasses implement value/grad/dt for one robot."""

    kind = "task"
    coordinated = False
    time_varying = False

    def context(self, x, t, participants=()):
        """Per-instant data shared across robots (None for uncoupled tasks)."""
        return None

    def value(self, i, x, t, ctx=None) -> float:
        raise NotImplementedError

    def grad(self, i, x, t, ctx=None) -> np.ndarray:
        raise NotImplementedError

    def dt(self, i, x, t, ctx=None) -> float:
        return 0.0

    def total(self, x, t, robots, ctx=None) -> float:
        """Task value for a robot set: the sum of the members' contributions."""
        return float(sum(self.value(i, x, t, ctx) for i in robots))


class GotoTask(Task):
    """Drive a robot to a fixed point: h_i = -|p_i - target|^2."""

    kind = "goto"

    def __init__(self, target):
        self.target = np.asarray(target, dtype=float).reshape(2)

    def value(self, i, x, t, ctx=None):
        e = np.asarray(x[i][:2], dtype=float) - self.target
        return -float(e @ e)

    def grad(self, i, x, t, ctx=None):
        xi = np.asarray(x[i], dtype=float)
        g = np.zeros(xi.size)
        g[:2] = -2.0 * (xi[:2] - self.target)
        return g

    def to_dict(self):
        return {"type": "goto", "target": self.target.tolist()}


class TrajectoryTask(Task):
    """Follow a moving point: h_i = -|p_i - path(t)|^2."""

    kind = "trajectory"
    time_varying = True

    def __init__(self, path: Path):
        self.path = path

    def value(self, i, x, t, ctx=None):
        e = np.asarray(x[i][:2], dtype=float) - self.path(t)
        return -float(e @ e)

    def grad(self, i, x, t, ctx=None):
        xi = np.asarray(x[i], dtype=float)
        g = np.zeros(xi.size)
        g[:2] = -2.0 * (xi[:2] - self.path(t))
        return g

    def dt(self, i, x, t, ctx=None):
        e = np.asarray(x[i][:2], dtype=float) - self.path(t)
        return float(2.0 * e @ self.path.rate(t))

    def to_dict(self):
        return {"type": "trajectory", "times": self.path.times.tolist(),
                "waypoints": self.path.points.tolist()}


@dataclass
class CoverageContext:
    """Frozen Voronoi data for one instant.

    Centroids are computed for the participant set. A robot outside that set
    gets centroids from ``participants + [robot]`` on first request.
    """

    task: "CoverageEscortTask"
    x: np.ndarray
    t: float
    participants: tuple
    _cache: dict = field(default_factory=dict)

    def _solve(self, members):
        members = tuple(sorted(members))
        hit = self._cache.get(members)
        if hit is None:
            pos = np.asarray(self.x, dtype=float)[list(members), :2]
            hit = self.task.partition(pos, members, self.t)
            self._cache[members] = hit
        return hit

    def centroid(self, i):
        """(centroid, centroid time derivative) for robot ``i``."""
        if i in self.participants:
            return self._solve(self.participants)[i]
        return self._solve(self.participants + (i,))[i]


class CoverageEscortTask(Task):
    """Spread around a moving ring while pointing a camera at a fixed point.

    h_i = -|p_i - G_i|^2 - wrap(theta_i - bearing(p_i -> monitor))^2, with G_i
    the density-weighted centroid of robot i's Voronoi cell.
    """

    kind = "coverage_escort"
    coordinated = True
    time_varying = True

    def __init__(self, domain: CoverageDomain, monitor, path: Path):
        self.domain = domain
        self.monitor = np.asarray(monitor, dtype=float).reshape(2)
        self.path = path
        self._quad = None
        self._parts: dict = {}

    def context(self, x, t, participants=()):
        return CoverageContext(self, np.array(x, dtype=float), float(t),
                               tuple(sorted(int(p) for p in participants)))

    def quadrature(self, t):
        """Grid cells carrying density at time ``t`` with their weights and weight rates.

        Cells whose density underflows relative to the peak contribute nothing
        measurable to any centroid and are dropped. Cached for the latest ``t``.
        """
        t = float(t)
        hit = self._quad
        if hit is not None and hit[0] == t:
            return hit[1]
        dom = self.domain
        center = self.path(t)
        q = dom.grid()
        w = dom.density(q, center)
        keep = w > 1e-16 * max(float(w.max(initial=0.0)), 1e-300)
        q = q[keep]
        out = (q, w[keep], dom.density_dt(q, center, self.path.rate(t)))
        self._quad = (t, out)
        return out

    def partition(self, pos, members, t) -> dict:
        """{robot: (centroid, centroid rate)} for sites ``pos`` at time ``t``.

        Partitions depend only on the member positions and the time, so the
        most recent ones are shared across contexts.
        """
        key = (float(t), members, pos.tobytes())
        hit = self._parts.get(key)
        if hit is None:
            q, w, wt = self.quadrature(t)
            cents, rates = voronoi_centroids(pos, self.domain, w, wt, points=q, density=self.density_at(t))
            hit = {r: (cents[j], rates[j]) for j, r in enumerate(members)}
            if len(self._parts) >= 32:
                self._parts.pop(next(iter(self._parts)))
            self._parts[key] = hit
        return hit

    def density_at(self, t):
        """Callable giving (density, density rate) at arbitrary points for time ``t``."""
        dom = self.domain
        center, rate = self.path(t), self.path.rate(t)
        return lambda q: (dom.density(q, center), dom.density_dt(q, center, rate))

    def _ctx(self, i, x, t, ctx):
        if ctx is None:
            ctx = self.context(x, t, (i,))
        return ctx.centroid(i)

    def _angle_err(self, xi):
        a, b = self.monitor - xi[:2]
        return float(wrap_angle(xi[2] - math.atan2(b, a))), a, b

    def value(self, i, x, t, ctx=None):
        xi = np.asarray(x[i], dtype=float)
        G, _ = self._ctx(i, x, t, ctx)
        e = xi[:2] - G
        ang, _, _ = self._angle_err(xi)
        return -float(e @ e) - ang * ang

    def grad(self, i, x, t, ctx=None):
        xi = np.asarray(x[i], dtype=float)
        G, _ = self._ctx(i, x, t, ctx)
        ang, a, b = self._angle_err(xi)
        r2 = a * a + b * b
        g = np.zeros(xi.size)
        g[:2] = -2.0 * (xi[:2] - G)
        if r2 > 0:
            g[0] += 2.0 * ang * (b / r2)
            g[1] += 2.0 * ang * (-a / r2)
        g[2] = -2.0 * ang
        return g

    def dt(self, i, x, t, ctx=None):
        xi = np.asarray(x[i], dtype=float)
        G, Gdot = self._ctx(i, x, t, ctx)
        return float(2.0 * (xi[:2] - G) @ Gdot)

    def to_dict(self):
        return {"type": "coverage_escort", "monitor": self.monitor.tolist(),
                "times": self.path.times.tolist(), "waypoints": self.path.points.tolist()}


def lie_terms(task: Task, dynamics, x, t, i, ctx=None):
    """Drift term (including the explicit time derivative) and input row for robot ``i``."""
    xi = np.asarray(x[i], dtype=float)
    g = task.grad(i, x, t, ctx)
    drift = float(g @ dynamics.f(xi)) + task.dt(i, x, t, ctx)
    return drift, g @ dynamics.g(xi)

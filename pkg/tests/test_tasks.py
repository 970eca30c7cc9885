import math

import numpy as np
import pytest

from hetero_alloc.tasks import (CoverageDomain, CoverageEscortTask, GotoTask, Linear, Path, SingleIntegrator,
                                TrajectoryTask, lie_terms, voronoi_centroid, voronoi_centroids, wrap_angle)

from conftest import fd_grad, rel_close

DOM = CoverageDomain()
N_POINTS = 100


def escort_task():
    return CoverageEscortTask(DOM, monitor=(-1.2, -0.9),
                              path=Path([0, 50, 74], [[1.3, -0.3], [0.1, 0.45], [-1.3, 0.1]]))


def random_positions(rng, n, n_x=2):
    x = np.empty((n, n_x))
    x[:, 0] = rng.uniform(DOM.xmin, DOM.xmax, n)
    x[:, 1] = rng.uniform(DOM.ymin, DOM.ymax, n)
    if n_x == 3:
        x[:, 2] = rng.uniform(-math.pi, math.pi, n)
    return x


def test_goto_examples():
    task = GotoTask((0.0, 0.0))
    x = np.array([[1.0, 0.0]])
    assert task.value(0, x, 0.0) == -1.0
    np.testing.assert_array_equal(task.grad(0, x, 0.0), [-2.0, 0.0])
    assert task.value(0, np.zeros((1, 2)), 0.0) == 0.0
    assert task.dt(0, x, 0.0) == 0.0


def test_goto_gradient_condition():
    rng = np.random.default_rng(0)
    task = GotoTask((0.3, -0.2))
    for _ in range(20):
        x = random_positions(rng, 1)
        h = task.value(0, x, 0.0)
        assert np.linalg.norm(task.grad(0, x, 0.0)) == pytest.approx(2 * math.sqrt(-h), rel=1e-12)


def test_trajectory_examples():
    path = Path([0, 2, 4], [[0, 0], [1, 1], [2, 0]])
    task = TrajectoryTask(path)
    x = np.array([path(1.3)])
    assert task.value(0, x, 1.3) == 0.0
    assert task.dt(0, x, 1.3) == 0.0
    still = TrajectoryTask(Path([0], [[0.5, 0.5]]))
    goto = GotoTask((0.5, 0.5))
    y = np.array([[1.0, -0.3]])
    assert still.value(0, y, 7.0) == goto.value(0, y, 7.0)
    np.testing.assert_array_equal(still.grad(0, y, 7.0), goto.grad(0, y, 7.0))
    assert still.dt(0, y, 7.0) == 0.0


def test_class_k_function():
    g = Linear(5.0)
    assert g(0.0) == 0.0 and g(-1.0) == -5.0
    s = np.linspace(-3, 3, 50)
    assert np.all(np.diff(g(s)) > 0)
    with pytest.raises(ValueError):
        Linear(0.0)


def test_goto_gradient_fd():
    rng = np.random.default_rng(1)
    task = GotoTask((0.4, 0.1))
    for _ in range(N_POINTS):
        x = random_positions(rng, 3)
        i = int(rng.integers(3))

        def h(xi):
            y = x.copy()
            y[i] = xi
            return task.value(i, y, 0.0)
        assert rel_close(task.grad(i, x, 0.0), fd_grad(h, x[i]))


def test_trajectory_gradient_and_time_fd():
    rng = np.random.default_rng(2)
    task = TrajectoryTask(Path([0, 50, 74], [[1.3, -0.3], [0.1, 0.45], [-1.3, 0.1]]))
    for _ in range(N_POINTS):
        x = random_positions(rng, 2)
        t = float(rng.uniform(0.5, 73.5))

        def h(xi):
            y = x.copy()
            y[0] = xi
            return task.value(0, y, t)
        assert rel_close(task.grad(0, x, t), fd_grad(h, x[0]))
        fd_t = fd_grad(lambda s: task.value(0, x, float(s[0])), np.array([t]))[0]
        assert rel_close(task.dt(0, x, t), fd_t)


def test_coverage_gradient_fd_with_frozen_partition():
    rng = np.random.default_rng(3)
    task = escort_task()
    done = 0
    while done < N_POINTS:
        x = random_positions(rng, 4, n_x=3)
        t = float(rng.uniform(0.5, 73.5))
        team = tuple(sorted(rng.choice(4, size=int(rng.integers(1, 5)), replace=False)))
        i = int(team[0])
        ang, _, _ = task._angle_err(x[i])
        if abs(ang) > math.pi - 1e-3:
            continue   # finite differences straddle the wrap point
        ctx = task.context(x, t, team)

        def h(xi):
            y = x.copy()
            y[i] = xi
            return task.value(i, y, t, ctx)
        assert rel_close(task.grad(i, x, t, ctx), fd_grad(h, x[i]))
        done += 1


def test_coverage_time_derivative_fd():
    rng = np.random.default_rng(4)
    task = escort_task()
    for _ in range(N_POINTS):
        x = random_positions(rng, 4, n_x=3)
        t = float(rng.uniform(0.5, 73.5))
        team = (0, 1, 2)
        i = int(rng.integers(3))

        def h(s):
            tt = float(s[0])
            return task.value(i, x, tt, task.context(x, tt, team))
        fd_t = fd_grad(h, np.array([t]))[0]
        assert rel_close(task.dt(i, x, t, task.context(x, t, team)), fd_t, floor=1e-4)


def test_coverage_angle_wrap_invariance():
    rng = np.random.default_rng(5)
    task = escort_task()
    for _ in range(10):
        x = random_positions(rng, 3, n_x=3)
        y = x.copy()
        y[1, 2] += 2 * math.pi
        assert task.value(1, x, 3.0) == pytest.approx(task.value(1, y, 3.0), abs=1e-12)
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_coverage_completion_is_zero():
    task = escort_task()
    x = np.array([[0.5, 0.2, 0.0]])
    G, _ = task.context(x, 5.0, (0,)).centroid(0)
    x[0, :2] = G
    d = task.monitor - G
    x[0, 2] = math.atan2(d[1], d[0])
    assert task.value(0, x, 5.0, task.context(x, 5.0, (0,))) == pytest.approx(0.0, abs=1e-12)


def test_decomposition_sums_contributions():
    rng = np.random.default_rng(6)
    task = escort_task()
    x = random_positions(rng, 4, n_x=3)
    ctx = task.context(x, 10.0, (0, 2, 3))
    total = task.total(x, 10.0, (0, 2, 3), ctx)
    assert total == pytest.approx(sum(task.value(i, x, 10.0, ctx) for i in (0, 2, 3)), abs=1e-8)


def test_uniform_centroids():
    uni = CoverageDomain(uniform=True)
    np.testing.assert_allclose(voronoi_centroid([[0.3, 0.2]], 0, uni), uni.center, atol=1e-12)
    pts = np.array([[-0.7, 0.0], [0.7, 0.0]])
    a = voronoi_centroid(pts, 0, uni)
    b = voronoi_centroid(pts, 1, uni)
    assert a[0] < 0 < b[0]
    assert a[0] == pytest.approx(-b[0], abs=1e-12)
    assert a[1] == pytest.approx(b[1], abs=1e-12)


def test_ring_centroids_symmetric():
    center = np.array([0.0, 0.0])
    phi = lambda q: DOM.density(q, center)
    pts = np.array([[-0.5, 0.1], [0.5, 0.1]])
    a = voronoi_centroid(pts, 0, DOM, phi)
    b = voronoi_centroid(pts, 1, DOM, phi)
    assert abs(a[0] + b[0]) <= 1e-3 and abs(a[1] - b[1]) <= 1e-3


def test_ring_centroid_matches_refined_grid():
    rng = np.random.default_rng(8)
    fine = DOM.refined(4)
    for _ in range(N_POINTS):
        center = rng.uniform([-1.0, -0.7], [1.0, 0.7])
        pts = random_positions(rng, 3)
        for i in range(3):
            coarse = voronoi_centroid(pts, i, DOM, lambda q: DOM.density(q, center))
            dense = voronoi_centroids(pts, fine, fine.density(fine.grid(), center))[0][i]
            assert np.linalg.norm(coarse - dense) <= 1e-2


def test_coincident_robots_are_separated():
    pts = np.array([[0.1, 0.1], [0.1, 0.1]])
    uni = CoverageDomain(uniform=True)
    a = voronoi_centroid(pts, 0, uni)
    b = voronoi_centroid(pts, 1, uni)
    assert np.all(np.isfinite(a)) and np.all(np.isfinite(b))
    assert not np.allclose(a, b)


def test_lie_terms_examples():
    dyn = SingleIntegrator()
    drift, row = lie_terms(GotoTask((0, 0)), dyn, np.array([[1.0, 0.0]]), 0.0, 0)
    assert drift == 0.0
    np.testing.assert_array_equal(row, [-2.0, 0.0])


def test_lie_terms_directional_derivative():
    rng = np.random.default_rng(9)
    dyn = SingleIntegrator(3)
    task = escort_task()
    traj = TrajectoryTask(task.path)
    for _ in range(N_POINTS):
        x = random_positions(rng, 3, n_x=3)
        t = float(rng.uniform(1, 70))
        u = rng.normal(size=3)
        ctx = task.context(x, t, (0, 1, 2))
        for tk, c in ((task, ctx), (traj, None)):
            ang, _, _ = task._angle_err(x[0])
            if abs(ang) > math.pi - 1e-3:
                continue
            drift, row = lie_terms(tk, dyn, x, t, 0, c)

            def along(s):
                y = x.copy()
                y[0] = x[0] + s[0] * u
                if c is None:
                    return tk.value(0, y, t + s[0])
                # partition frozen in space, density moving in time
                cc = tk.context(x, t + s[0], (0, 1, 2))
                return tk.value(0, y, t + s[0], cc)
            fd = fd_grad(along, np.array([0.0]))[0]
            assert rel_close(drift + row @ u, fd, floor=1e-4)


def test_domain_validation():
    with pytest.raises(ValueError):
        CoverageDomain(xmin=1, xmax=0)
    with pytest.raises(ValueError):
        CoverageDomain(k=0)
    np.testing.assert_array_equal(DOM.clamp([5, -5]), [1.8, -1.2])

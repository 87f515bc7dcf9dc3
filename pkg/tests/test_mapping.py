import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import box_env, grid_env
from gridexplore.mapping import (FREE, OBSTACLE, UNEXPLORED, CameraIntrinsics, OccupancyMap,
                                 OdometryNoiseModel, PoseEstimate, classify_cells, crop_states,
                                 egocentric_crop, integrate_odometry, project_depth_to_points,
                                 register_scan, sample_odometry_noise)
from gridexplore.world import Action, Pose, Sensor, generate_environment, observe, sample_episode, step


# --- projection and classification ----------------------------------------------

def test_principal_ray_point():
    K = CameraIntrinsics.pinhole(100.0, 2.0, 1.0)
    depth = np.zeros((3, 5))
    depth[1, 2] = 3.5
    pts = project_depth_to_points(depth, K)
    assert pts.shape == (1, 3)
    assert np.allclose(pts[0], [0, 0, 3.5], atol=1e-12)


def test_translation_shifts_points():
    K = CameraIntrinsics.pinhole(50.0, 4.0, 3.0)
    depth = np.random.default_rng(0).uniform(0.5, 4.0, (7, 9))
    t = np.array([1.0, -2.0, 0.5])
    a = project_depth_to_points(depth, K)
    b = project_depth_to_points(depth, K, t=t)
    assert np.allclose(b - a, t, atol=1e-12)


def test_fronto_parallel_wall():
    f, cx, cy, d = 80.0, 10.0, 6.0, 2.25
    K = CameraIntrinsics.pinhole(f, cx, cy)
    depth = np.full((13, 21), d)
    pts = project_depth_to_points(depth, K)
    assert np.allclose(pts[:, 2], d)
    # closed-form pinhole: X = (u - cx) d / f
    u = np.tile(np.arange(21), 13)
    assert np.allclose(pts[:, 0], (u - cx) * d / f)


def test_invalid_pixels_skipped():
    K = CameraIntrinsics.pinhole(10.0, 1.0, 1.0)
    depth = np.array([[1.0, 0.0, np.nan], [-1.0, 2.0, np.inf]])
    assert len(project_depth_to_points(depth, K)) == 2


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        CameraIntrinsics(np.diag([-1.0, 1.0, 1.0]))


def test_classify_cells():
    pts = np.array([[0.0, 0.0, 1.0],    # obstacle height
                    [1.0, 0.0, 0.1],    # floor
                    [1.0, 0.0, 0.2],
                    [2.0, 0.0, 2.5]])   # above eta_h: ignored
    labels, (x0, y0) = classify_cells(pts, 1.0, 0.5, 2.0, bounds=(0, 0, 3, 0))
    assert (x0, y0) == (0, 0)
    assert list(labels[0]) == [OBSTACLE, FREE, UNEXPLORED, UNEXPLORED]


def test_classify_validation():
    with pytest.raises(ValueError):
        classify_cells(np.zeros((1, 3)), 0.0, 0.5, 2.0)
    with pytest.raises(ValueError):
        classify_cells(np.zeros((1, 3)), 0.1, 2.0, 0.5)


# --- odometry ---------------------------------------------------------------------

def test_zero_noise():
    rng = np.random.default_rng(0)
    for a in Action:
        assert not sample_odometry_noise(OdometryNoiseModel(0.0), a, rng).any()


def test_truncation_bound_forward():
    rng = np.random.default_rng(0)
    m = OdometryNoiseModel(0.15)
    s = np.array([sample_odometry_noise(m, Action.FORWARD, rng) for _ in range(5000)])
    assert np.abs(s[:, :2]).max() <= 0.0375 + 1e-15
    assert not s[:, 2].any()


def test_noise_mean_statistics():
    rng = np.random.default_rng(42)
    m = OdometryNoiseModel(0.3)
    s = np.array([sample_odometry_noise(m, Action.FORWARD, rng)[0] for _ in range(100_000)])
    assert abs(s.mean()) < 3 * s.std() / math.sqrt(len(s))


@given(st.floats(0, 2), st.sampled_from(list(Action)), st.integers(0, 2**32 - 1))
def test_noise_within_truncation(eta, action, seed):
    m = OdometryNoiseModel(eta)
    p = sample_odometry_noise(m, action, np.random.default_rng(seed))
    assert np.all(np.abs(p[:2]) <= eta * m.forward + 1e-15)
    assert abs(p[2]) <= eta * m.rotation + 1e-15


def test_integrate_zero_readings():
    e = PoseEstimate(0.3, -0.2, 1.0)
    assert integrate_odometry(e, [0, 0, 0]) == e


def test_forward_bias_accumulates_linearly():
    eps, T = 0.01, 50
    e = PoseEstimate()
    for _ in range(T):
        e = integrate_odometry(e, [0.25 + eps, 0.0, 0.0])
    assert e.x - T * 0.25 == pytest.approx(T * eps, abs=1e-12)


@given(st.integers(0, 10_000), st.lists(st.sampled_from([0, 1, 2]), min_size=1, max_size=60))
def test_noiseless_estimate_tracks_true_pose(seed, actions):
    env = generate_environment(seed % 3, "small-cluttered")
    start = sample_episode(env, seed, 1, 0.0).start
    pose, est = start, PoseEstimate(theta=2 * math.pi * start.heading / 12)
    for a in actions:
        pose, obs = step(env, pose, Action(a))
        est = integrate_odometry(est, obs.odometry)
        assert est.x == pytest.approx((pose.x - start.x) * 0.25, abs=1e-9)
        assert est.y == pytest.approx((pose.y - start.y) * 0.25, abs=1e-9)
        d = (est.theta - 2 * math.pi * pose.heading / 12 + math.pi) % (2 * math.pi) - math.pi
        assert abs(d) < 1e-9


# --- registration ----------------------------------------------------------------

def _scan(env, pose, start):
    est = PoseEstimate((pose.x - start.x) * 0.25, (pose.y - start.y) * 0.25, 2 * math.pi * pose.heading / 12)
    return observe(env, pose), est


def test_corridor_scan():
    env = grid_env(["#" * 10, "#" + "." * 8 + "#", "#" * 10])
    start = Pose(1, 1, 0)
    m = OccupancyMap()
    obs, est = _scan(env, start, start)
    register_scan(m, obs, est)
    for x in range(0, 8):
        assert m.state_at(x, 0) == FREE
    assert m.state_at(8, 0) == OBSTACLE


def test_rescan_keeps_states_and_counts_up():
    env = box_env(9, 9)
    start = Pose(4, 4, 0)
    m = OccupancyMap()
    obs, est = _scan(env, start, start)
    t1 = register_scan(m, obs, est)
    s1, c1 = m.states.copy(), m.counts.copy()
    t2 = register_scan(m, obs, est)
    assert np.array_equal(m.states, s1)
    assert np.array_equal(t1, t2)
    diff = m.counts - c1
    assert diff.sum() == len(t2) and set(np.unique(diff)) <= {0, 1}


def test_obstacle_wins_within_scan():
    class Obs:
        depth = np.array([1.0, 0.55])
        hit = np.array([False, True])
    m = OccupancyMap()
    s = Sensor(n_rays=2, fov_deg=1e-6)
    register_scan(m, Obs, PoseEstimate(), s)
    # ray 0 passes through the cell where ray 1 ends
    assert m.state_at(2, 0) == OBSTACLE


def test_map_grows_on_demand():
    m = OccupancyMap(size_hint=1)

    class Obs:
        depth = np.array([3.0])
        hit = np.array([True])
    register_scan(m, Obs, PoseEstimate(theta=math.pi), Sensor(n_rays=1))
    assert m.state_at(-12, 0) == OBSTACLE
    assert m.state_at(-5, 0) == FREE


@given(st.integers(0, 10_000), st.lists(st.sampled_from([0, 1, 2]), min_size=1, max_size=50))
def test_map_monotone_and_never_false_obstacle(seed, actions):
    env = generate_environment(seed % 4, "small-cluttered")
    start = sample_episode(env, seed, 1, 0.0).start
    m = OccupancyMap()
    pose = start
    prev_explored, prev_counts = 0, None
    for a in [None] + actions:
        if a is not None:
            pose, _ = step(env, pose, Action(a))
        obs, est = _scan(env, pose, start)
        touched = register_scan(m, obs, est)
        n = m.explored_count()
        assert n >= prev_explored
        prev_explored = n
        assert (m.counts >= 0).all()
        # conservation: total count rises by exactly the number of touched cells
        tot = int(m.counts.sum())
        if prev_counts is not None:
            assert tot - prev_counts == len(touched)
        prev_counts = tot
    rows, cols = np.nonzero(m.states == OBSTACLE)
    for r, c in zip(rows, cols):
        x, y = c - m.ox + start.x, r - m.oy + start.y
        assert not env.is_free(x, y), "true free cell labelled obstacle"


def test_obstacles_subset_after_oracle_run(small_env):
    from gridexplore.agents import OracleAgent
    from gridexplore.bench.runner import run_episode
    from gridexplore.rewards import RewardTracker
    spec = sample_episode(small_env, 5, 200, 0.0)
    agent = OracleAgent("random")
    res = run_episode(small_env, agent, RewardTracker(None), spec, preset="small-cluttered",
                      rngs={k: np.random.default_rng(i) for i, k in enumerate(["agent", "noise", "flip"])})
    m = res.map
    rows, cols = np.nonzero(m.states == OBSTACLE)
    for r, c in zip(rows, cols):
        assert small_env.occupancy[r - m.oy + spec.start.y, c - m.ox + spec.start.x]


# --- crops ------------------------------------------------------------------------

def test_crop_pure_and_forward_up():
    states = np.zeros((11, 11), np.uint8)
    states[5, 8] = OBSTACLE  # three cells east of centre
    a = crop_states(states, 5, 5, 0.0, 7)
    assert np.array_equal(a, crop_states(states, 5, 5, 0.0, 7))
    assert a[0, 3] == OBSTACLE  # top row, centre column = straight ahead


def test_crop_180_equivariance():
    rng = np.random.default_rng(3)
    states = rng.integers(0, 3, (15, 15)).astype(np.uint8)
    a = crop_states(states, 7, 7, 0.3, 9)
    b = crop_states(states, 7, 7, 0.3 + math.pi, 9)
    assert np.array_equal(np.rot90(a, 2), b)


def test_corner_crop_mostly_unexplored():
    m = OccupancyMap(size_hint=4)
    m.states[:] = FREE
    h, w = m.states.shape
    est = PoseEstimate((w - 1 - m.ox) * 0.25, (h - 1 - m.oy) * 0.25, 0.0)
    crop = egocentric_crop(m, est, 4.0)
    n = crop.shape[0]
    half = n // 2
    quads = [crop[:half, :half], crop[:half, -half:], crop[-half:, :half], crop[-half:, -half:]]
    assert sum((q == UNEXPLORED).all() for q in quads) >= 3
    with pytest.raises(ValueError):
        egocentric_crop(m, est, 0)

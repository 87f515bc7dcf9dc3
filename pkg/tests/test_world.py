import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import bfs_oracle, box_env, grid_env
from gridexplore.world import (PRESETS, Action, EpisodeSpec, GenParams, Pose, Sensor, cardinal_bucket,
                               center_depth, distance_field, generate_environment, line_of_sight,
                               load_environment, move, observe, raycast, sample_episode,
                               save_environment, shortest_path, step, visible_cells)
from gridexplore.mapping import OdometryNoiseModel

EAST = 0


# --- generation -------------------------------------------------------------

@pytest.mark.parametrize("preset", PRESETS)
def test_generation_deterministic(preset):
    a = generate_environment(7, preset)
    b = generate_environment(7, preset)
    assert np.array_equal(a.occupancy, b.occupancy)
    assert np.array_equal(a.signatures, b.signatures)
    assert a.objects == b.objects


def test_large_has_more_free_space():
    assert generate_environment(7, "large-open").free_count() > generate_environment(7, "small-cluttered").free_count()


@pytest.mark.parametrize("preset", PRESETS)
@pytest.mark.parametrize("seed", range(8))
def test_generated_structure(preset, seed):
    env = generate_environment(seed, preset)
    occ = env.occupancy
    assert occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()
    free = env.free_cells()
    dist = bfs_oracle(~occ, tuple(free[0]))
    assert (dist[~occ] >= 0).all(), "free space must be one 4-connected component"
    assert env.signatures.shape[:2] == occ.shape
    assert env.signatures.min() >= 0 and env.signatures.max() <= 1
    for (x, y), _ in env.objects:
        nb = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
        assert any(env.is_free(*c) for c in nb)


@pytest.mark.parametrize("seed", range(10))
def test_small_preset_clutter_fraction(seed):
    env = generate_environment(seed, "small-cluttered")
    bare = generate_environment(seed, "small-cluttered", GenParams(clutter=0))
    free0 = ~bare.occupancy
    assert (env.occupancy & free0).sum() / free0.sum() >= 0.15
    assert env.occupancy.shape == (24, 24)


def test_large_preset_size(large_env):
    assert large_env.occupancy.shape == (96, 96)


def test_bad_params_rejected():
    with pytest.raises(ValueError):
        GenParams(width=0)
    with pytest.raises(ValueError):
        GenParams(cell_size=-1)
    with pytest.raises(ValueError):
        generate_environment(0, "medium")


def test_save_load_roundtrip(tmp_path, small_env):
    env = small_env
    env2 = generate_environment(env.seed, env.preset)
    env2.landmark_views = [Pose(3, 4, 5)]
    p = tmp_path / "env.npz"
    save_environment(env2, p)
    back = load_environment(p)
    assert np.array_equal(back.occupancy, env2.occupancy)
    assert np.array_equal(back.signatures, env2.signatures)
    assert back.objects == env2.objects and back.landmark_views == env2.landmark_views
    assert (back.preset, back.seed, back.cell_size) == (env2.preset, env2.seed, env2.cell_size)


# --- motion -------------------------------------------------------------------

def test_forward_free_and_blocked():
    env = box_env(8, 8)
    p, obs = step(env, Pose(2, 3, EAST), Action.FORWARD)
    assert p == Pose(3, 3, EAST) and not obs.collision
    p, obs = step(env, Pose(6, 3, EAST), Action.FORWARD)
    assert p == Pose(6, 3, EAST) and obs.collision


def test_turns_change_heading_by_one():
    env = box_env(8, 8)
    assert move(env, Pose(2, 3, 0), Action.TURN_LEFT)[0].heading == 1
    assert move(env, Pose(2, 3, 0), Action.TURN_RIGHT)[0].heading == 11


def test_noiseless_odometry_is_true_delta():
    env = box_env(8, 8)
    _, obs = step(env, Pose(2, 3, 3), Action.FORWARD, OdometryNoiseModel(0.0), np.random.default_rng(0))
    assert np.array_equal(obs.odometry, [0.25, 0.0, 0.0])
    _, obs = step(env, Pose(2, 3, 3), Action.TURN_LEFT, OdometryNoiseModel(0.0), np.random.default_rng(0))
    assert obs.odometry[2] == pytest.approx(2 * math.pi / 12, abs=1e-15)


def test_noise_never_touches_true_pose():
    env = box_env(8, 8)
    rng = np.random.default_rng(1)
    p0 = Pose(2, 3, EAST)
    p1, obs = step(env, p0, Action.FORWARD, OdometryNoiseModel(0.3), rng)
    assert p1 == Pose(3, 3, EAST)
    assert not np.array_equal(obs.odometry, [0.25, 0, 0])


def test_cardinal_buckets():
    assert [cardinal_bucket(h) for h in range(12)] == [0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 0]


@given(st.integers(0, 2**31 - 1), st.lists(st.sampled_from([0, 1, 2]), min_size=1, max_size=40))
def test_true_pose_stays_free(seed, actions):
    env = generate_environment(seed % 5, "small-cluttered")
    pose = sample_episode(env, seed, 10, 0.0).start
    for a in actions:
        new, obs = step(env, pose, Action(a))
        assert env.is_free(new.x, new.y)
        if obs.collision:
            assert new == pose
        pose = new


# --- sensing -------------------------------------------------------------------

def test_center_ray_wall_four_cells_ahead():
    env = grid_env(["#########",
                    "#....#..#",
                    "#########"])
    # wall cell at x=5 is 4 cells ahead of x=1
    assert center_depth(env, Pose(1, 1, EAST)) == pytest.approx(1.0, abs=1e-12)


def test_enclosed_3x3_room_all_hits():
    env = box_env(5, 5)
    depth, hit = raycast(env, Pose(2, 2, 2))
    assert hit.all()
    assert (depth <= math.sqrt(2) * 0.25 * 2 + 1e-12).all()
    assert (depth > 0).all()


def test_long_corridor_reports_no_hit():
    env = grid_env(["#" * 40, "#" + "." * 38 + "#", "#" * 40])
    depth, hit = raycast(env, Pose(1, 1, EAST), Sensor(n_rays=1, max_range=16))
    assert not hit[0] and depth[0] == pytest.approx(16 * 0.25)


def test_facing_adjacent_wall_sees_only_wall_and_self():
    env = box_env(7, 7)
    vis = {tuple(c) for c in visible_cells(env, Pose(5, 3, EAST))}
    assert vis <= {(6, 3), (5, 3)} and (6, 3) in vis


def test_open_5x5_room_all_visible_with_360_sensor():
    env = box_env(7, 7)
    vis = {tuple(c) for c in visible_cells(env, Pose(3, 3, 0), Sensor(n_rays=360, fov_deg=360))}
    room = {(x, y) for x in range(1, 6) for y in range(1, 6)}
    assert room <= vis


def test_cell_behind_wall_never_visible():
    env = grid_env(["#########",
                    "#...#...#",
                    "#...#...#",
                    "#...#...#",
                    "#########"])
    for h in range(12):
        vis = {tuple(c) for c in visible_cells(env, Pose(2, 2, h), Sensor(n_rays=64, fov_deg=360))}
        assert not any(x > 4 for x, _ in vis)


def test_visibility_mirror_symmetry():
    env = box_env(9, 9)
    env.occupancy[3, 6] = True
    env.occupancy[5, 6] = True
    a = {tuple(c) for c in visible_cells(env, Pose(3, 4, 0))}
    b = {tuple(c) for c in visible_cells(env, Pose(3, 4, 0), Sensor())}
    mirrored = {(x, 8 - y) for x, y in a}
    assert a == b and a == mirrored


@given(st.integers(0, 10_000), st.integers(0, 11))
def test_own_cell_visible_with_360_sensor(seed, heading):
    env = generate_environment(seed % 4, "small-cluttered")
    p = sample_episode(env, seed, 1, 0.0).start
    vis = {tuple(c) for c in visible_cells(env, Pose(p.x, p.y, heading), Sensor(n_rays=32, fov_deg=360))}
    assert (p.x, p.y) in vis


@given(st.integers(0, 10_000))
def test_depth_within_range(seed):
    env = generate_environment(seed % 4, "large-open" if seed % 2 else "small-cluttered")
    p = sample_episode(env, seed, 1, 0.0).start
    obs = observe(env, p)
    assert (obs.depth > 0).all() and (obs.depth <= 16 * env.cell_size + 1e-12).all()


# --- paths ----------------------------------------------------------------------

def test_path_same_cell():
    env = box_env(6, 6)
    r = shortest_path(env, (2, 2), (2, 2))
    assert r.distance == 0 and r.path == [(2, 2)]


def test_straight_corridor_distance():
    env = grid_env(["#" * 12, "#" + "." * 10 + "#", "#" * 12])
    assert shortest_path(env, (1, 1), (10, 1)).distance == pytest.approx(2.25)


def test_unreachable_is_explicit():
    env = grid_env(["#######", "#..#..#", "#######"])
    r = shortest_path(env, (1, 1), (5, 1))
    assert not r.reachable and r.path is None and math.isinf(r.distance)


def _maze(seed, n=15):
    rng = np.random.default_rng(seed)
    occ = rng.random((n, n)) < 0.3
    occ[0] = occ[-1] = occ[:, 0] = occ[:, -1] = True
    return grid_env(["".join("#" if v else "." for v in row) for row in occ], seed=seed)


@pytest.mark.parametrize("seed", range(20))
def test_maze_paths_match_bfs_oracle(seed):
    env = _maze(seed)
    free = env.free_cells()
    a = tuple(free[0])
    ref = bfs_oracle(~env.occupancy, a)
    assert np.array_equal(distance_field(env, a), ref)
    for b in free[:: max(1, len(free) // 10)]:
        r = shortest_path(env, a, tuple(b))
        d = ref[b[1], b[0]]
        if d < 0:
            assert not r.reachable
        else:
            assert r.distance == pytest.approx(d * 0.25)
            steps = np.abs(np.diff(np.array(r.path), axis=0)).sum(axis=1)
            assert (steps == 1).all()


@given(st.integers(0, 10_000))
def test_geodesic_triangle_inequality(seed):
    env = generate_environment(seed % 6, "small-cluttered")
    rng = np.random.default_rng(seed)
    free = env.free_cells()
    a, b, c = (tuple(free[i]) for i in rng.integers(len(free), size=3))
    dab = shortest_path(env, a, b).distance
    dbc = shortest_path(env, b, c).distance
    dac = shortest_path(env, a, c).distance
    assert dac <= dab + dbc + 1e-12


def test_line_of_sight():
    env = grid_env(["#######", "#..#..#", "#.....#", "#######"])
    assert line_of_sight(env, (1, 2), (5, 2))
    assert not line_of_sight(env, (1, 1), (5, 1))


# --- episodes ---------------------------------------------------------------------

def test_sample_episode_deterministic_and_passthrough(small_env):
    a = sample_episode(small_env, 11, 200, 0.15)
    assert a == sample_episode(small_env, 11, 200, 0.15)
    assert a.eta == 0.15 and a.T_exp == 200
    assert small_env.is_free(a.start.x, a.start.y)


def test_sample_episode_roughly_uniform():
    env = box_env(6, 6)
    n_free = env.free_count()
    hits = {}
    for s in range(1000):
        p = sample_episode(env, s, 1, 0.0).start
        hits[p.cell] = hits.get(p.cell, 0) + 1
    expected = 1000 / n_free
    assert len(hits) == n_free
    assert all(expected / 5 <= v <= expected * 5 for v in hits.values())


def test_episode_spec_validation():
    with pytest.raises(ValueError):
        EpisodeSpec(0, 0, Pose(1, 1, 0), 0, 0.0)
    with pytest.raises(ValueError):
        EpisodeSpec(0, 0, Pose(1, 1, 0), 10, -0.1)

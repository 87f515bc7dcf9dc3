import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gridexplore.rewards import (ConceptSpace, CoverageState, CuriosityModel, NoveltyState, ReconstructionTask,
                                 RewardTracker, area_coverage_reward, coverage_observe, curiosity_features,
                                 curiosity_reward, discover_concepts, kl_divergence, novelty_update_and_reward,
                                 reconstruction_reward, smooth, smooth_coverage_reward,
                                 smooth_coverage_reward_counts, true_concept_distribution)


# --- novelty -----------------------------------------------------------------------

def test_novelty_fixtures():
    s = NoveltyState(0.5, 1.0)
    assert novelty_update_and_reward(s, 0.1, 0.1) == 1.0
    for _ in range(2):
        novelty_update_and_reward(s, 0.1, 0.1)
    assert novelty_update_and_reward(s, 0.1, 0.1) == 0.5


def test_novelty_two_cell_oscillation():
    s = NoveltyState(0.5, 1.0)
    total = sum(novelty_update_and_reward(s, x, 0.0) for x in (0.1, 0.6, 0.1, 0.6))
    assert total == pytest.approx(1 + 1 + 1 / math.sqrt(2) + 1 / math.sqrt(2), abs=1e-12)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=60))
def test_novelty_decreasing_and_conserved(points):
    s = NoveltyState(0.5, 1.0)
    last = {}
    for x, y in points:
        c = s.cell(x, y)
        r = novelty_update_and_reward(s, x, y)
        if c in last:
            assert r < last[c]
        last[c] = r
    assert sum(s.counts.values()) == len(points) == s.total
    assert min(s.counts.values()) >= 1


# --- coverage ----------------------------------------------------------------------

def test_area_coverage_fixtures():
    s = CoverageState(1.0)
    assert area_coverage_reward(s, 0.0) == 0.0
    assert area_coverage_reward(s, 3 * 0.25 ** 2) == 0.1875
    with pytest.raises(ValueError):
        area_coverage_reward(s, -1.0)


@given(st.lists(st.floats(0, 10), max_size=50), st.floats(0.001, 100))
def test_area_coverage_telescopes(increments, scale):
    s = CoverageState(scale)
    A0 = s.area
    total = sum(area_coverage_reward(s, d) for d in increments)
    assert total == pytest.approx(scale * (s.area - A0), rel=1e-9, abs=1e-9)


def test_coverage_of_objects():
    s = CoverageState(1.0, target="objects")
    assert coverage_observe(s, [1, 2]) == 2.0
    assert coverage_observe(s, [2]) == 0.0
    with pytest.raises(ValueError):
        CoverageState(target="rooms")


def test_smooth_coverage_fixtures():
    s = CoverageState(1.0)
    assert smooth_coverage_reward(s, ["a", "b", "c"]) == 1.0
    for _ in range(3):
        smooth_coverage_reward(s, ["x"])
    assert smooth_coverage_reward(s, ["x", "y"]) == 0.75
    assert smooth_coverage_reward(s, []) == 0.0


def test_smooth_coverage_array_form_matches():
    counts = np.zeros((4, 4), np.int64)
    s = CoverageState(0.3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        idx = np.unique(rng.integers(16, size=5))
        assert smooth_coverage_reward_counts(counts, idx, 0.3) == pytest.approx(
            smooth_coverage_reward(s, idx.tolist()), abs=1e-12)


def test_smooth_signal_on_revisits_where_area_is_zero():
    area, smooth_s = CoverageState(1.0), CoverageState(1.0)
    view = [(0, 0), (0, 1), (1, 1)]
    coverage_observe(area, view)
    smooth_coverage_reward(smooth_s, view)
    for _ in range(5):  # scripted revisits
        assert coverage_observe(area, view) == 0.0
        assert smooth_coverage_reward(smooth_s, view) > 0.0


# --- curiosity ---------------------------------------------------------------------

def test_curiosity_zero_predictor_and_perfect_predictor():
    m = CuriosityModel(4)
    phi = np.array([1.0, 0, 0, 0])
    nxt = np.array([0, 1.0, 1.0, 0])
    assert curiosity_reward(m, phi, 0, nxt) == 2.0  # zero init: ||phi_next||^2
    perfect = CuriosityModel(4)
    perfect.b[1] = nxt
    assert curiosity_reward(perfect, phi, 1, nxt) == 0.0


def test_curiosity_repeated_transition_non_increasing():
    rng = np.random.default_rng(1)
    m = CuriosityModel(10)
    phi, nxt = rng.random(10), rng.random(10)
    rs = [curiosity_reward(m, phi, 2, nxt) for _ in range(30)]
    assert all(b <= a + 1e-15 for a, b in zip(rs, rs[1:]))
    assert rs[-1] < 1e-6 * rs[0]


def test_curiosity_dimension_checked():
    with pytest.raises(ValueError):
        curiosity_reward(CuriosityModel(3), np.zeros(4), 0, np.zeros(4))


def test_curiosity_features_shape():
    patch = np.zeros((11, 11), np.uint8)
    phi = curiosity_features(patch, 5)
    assert phi.shape == (11 * 11 * 3 + 12,) and phi.sum() == 11 * 11 + 1


# --- concepts ------------------------------------------------------------------------

def test_blobs_recovered():
    rng = np.random.default_rng(0)
    means = np.array([[0, 0], [10, 0], [0, 10], [10, 10.0]])
    x = np.concatenate([m + rng.normal(0, 0.3, (50, 2)) for m in means])
    space = discover_concepts(x, 4, seed=1)
    for c in space.centroids:
        assert np.min(np.linalg.norm(means - c, axis=1)) < 0.3 * 3
    assert len({tuple(np.round(c)) for c in space.centroids}) == 4


def test_k1_is_mean():
    x = np.random.default_rng(2).random((30, 3))
    assert np.allclose(discover_concepts(x, 1).centroids[0], x.mean(axis=0))


def test_k_too_large_rejected():
    with pytest.raises(ValueError):
        discover_concepts(np.zeros((3, 2)), 4)


@pytest.mark.parametrize("seed", range(50))
def test_inertia_non_increasing(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((80, 4))
    h = discover_concepts(x, 6, seed=seed).history
    assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))


def test_concepts_deterministic_and_roundtrip(tmp_path):
    x = np.random.default_rng(3).random((40, 5))
    a = discover_concepts(x, 5, seed=9)
    b = discover_concepts(x, 5, seed=9)
    assert np.array_equal(a.centroids, b.centroids)
    a.save(tmp_path / "c.txt")
    assert np.array_equal(ConceptSpace.load(tmp_path / "c.txt").centroids, a.centroids)


def test_true_concept_distribution():
    space = ConceptSpace(np.array([[0.0], [1.0], [2.0], [3.0]]))
    assert list(true_concept_distribution([0.9], space, 1)) == [0, 1, 0, 0]
    p = true_concept_distribution([1.1], space, 3)
    assert sorted(p) == [0, 1 / 3, 1 / 3, 1 / 3] and p[3] == 0
    # tie between index 0 and 2 at distance 1 from 1.0: lower index wins
    assert list(true_concept_distribution([1.0], space, 2)) == [0.5, 0.5, 0, 0]


@given(arrays(float, 3, elements=st.floats(-5, 5)), st.integers(1, 5))
def test_true_distribution_sums_to_one(sig, J):
    space = ConceptSpace(np.random.default_rng(0).random((5, 3)))
    p = true_concept_distribution(sig, space, J)
    assert abs(p.sum() - 1) < 1e-12 and (p > 0).sum() == J


# --- KL --------------------------------------------------------------------------------

def kl_reference(p, q, eps=1e-6):
    getcontext().prec = 50
    K = len(q)
    total = Decimal(0)
    for pi, qi in sorted(zip(p, q), reverse=True):  # different summation order
        if pi == 0:
            continue
        qs = (1 - Decimal(eps)) * Decimal(float(qi)) + Decimal(eps) / K
        total += Decimal(float(pi)) * (Decimal(float(pi)) / qs).ln()
    return float(total)


def test_kl_fixtures():
    p = np.array([0.2, 0.3, 0.5])
    assert kl_divergence(p, p) == pytest.approx(0, abs=1e-6)
    K = 7
    pm = np.eye(K)[2]
    assert kl_divergence(pm, np.full(K, 1 / K)) == pytest.approx(math.log(K), abs=1e-12)


def test_kl_rejects_unnormalized():
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.5 + 1e-8], [0.5, 0.5])
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.5], [0.7, 0.7])


def _dist(draw_vals):
    v = np.asarray(draw_vals, float)
    return v / v.sum()


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12).filter(lambda v: sum(v) > 1e-3),
       st.integers(0, 2**32 - 1))
def test_kl_matches_reference_and_nonnegative(pv, seed):
    p = _dist(pv)
    q = np.random.default_rng(seed).dirichlet(np.ones(len(p)))
    k = kl_divergence(p, q)
    assert k >= -1e-15
    assert k == pytest.approx(kl_reference(p, q), abs=1e-12)


# --- reconstruction -----------------------------------------------------------------------

def _task(period=5):
    return ReconstructionTask([0], np.array([[1 / 3, 1 / 3, 1 / 3, 0.0]]), period=period, scale=1.0)


def test_reconstruction_reward_arithmetic():
    t = _task()
    t.last_loss = 0.9
    pred = np.array([[0.25, 0.25, 0.25, 0.25]])
    L = kl_divergence(t.true_dists[0], pred[0])
    t.last_loss = 0.9
    r = reconstruction_reward(t, pred, 5)
    assert r == pytest.approx(0.9 - L, abs=1e-12)
    # unchanged prediction over a period -> 0
    assert reconstruction_reward(t, pred, 10) == 0.0
    # perfect prediction -> previous loss (up to smoothing)
    r = reconstruction_reward(t, t.true_dists.copy(), 15)
    assert r == pytest.approx(L, abs=1e-5)


def test_reconstruction_fixture_0_9_to_0_4():
    # a predictor whose loss is exactly 0.4 nats under smoothing
    t = _task()
    t.last_loss = 0.9
    p = t.true_dists[0]

    def loss(a):
        q = np.array([a, a, 1 - 2 * a - 1e-9, 1e-9])
        q = q / q.sum()
        return kl_divergence(p, q), q
    lo, hi = 0.01, 1 / 3
    for _ in range(200):
        mid = (lo + hi) / 2
        if loss(mid)[0] > 0.4:
            lo = mid
        else:
            hi = mid
    q = loss(hi)[1]
    assert reconstruction_reward(t, q[None, :], 5) == pytest.approx(0.5, abs=1e-9)


def test_reconstruction_only_on_period():
    with pytest.raises(ValueError):
        reconstruction_reward(_task(5), np.full((1, 4), 0.25), 3)


def test_initial_loss_is_uniform_prediction_loss():
    t = _task()
    assert t.last_loss == pytest.approx(kl_divergence(t.true_dists[0], np.full(4, 0.25)), abs=1e-12)


def test_smoothing_mixture():
    q = np.array([1.0, 0.0])
    s = smooth(q)
    assert s.sum() == pytest.approx(1.0) and s[1] == pytest.approx(0.5e-6)


def test_tracker_no_paradigm_zero_reward():
    tr = RewardTracker(None)
    assert tr.scale == 1.0 and tr.total == 0.0
    with pytest.raises(ValueError):
        RewardTracker("boredom")
    with pytest.raises(ValueError):
        RewardTracker("reconstruction")

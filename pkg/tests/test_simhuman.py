"""Simulated feedback: softmax feature choice, directions, Boltzmann picks."""

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from trajlang.langcat import Catalog
from trajlang.simhuman import (
    SimulatedHuman,
    _choice_prob,
    comparison_choice,
    language_feedback,
    make_simulated_human,
)
from trajlang.worldsim import WorldConfig, generate_pool

CATALOG = Catalog()
N_DRAWS = 10_000


class FakePool:
    """Feature-only stand-in so tests can pin exact feature vectors."""

    def __init__(self, feats: dict):
        self._f = {k: np.asarray(v, dtype=np.float64) for k, v in feats.items()}
        self.trajectories = [SimpleNamespace(id=k) for k in self._f]

    def features_of(self, tid):
        return self._f[tid]

    def feature_matrix(self, ids=None):
        ids = ids if ids is not None else [t.id for t in self.trajectories]
        return np.array([self._f[i] for i in ids])


def test_optimal_id_is_pool_argmax():
    pool = generate_pool(WorldConfig(), 64, seed=40)
    w = np.array([0.5, -1.0, 1.5, 2.0])
    h = make_simulated_human(pool, w)
    scores = {t.id: float(w @ pool.features_of(t.id)) for t in pool.trajectories}
    assert scores[h.optimal_id] == max(scores.values())


def test_beta_must_be_positive():
    with pytest.raises(ValueError):
        SimulatedHuman(w=np.ones(4), optimal_id="t0", beta=0.0)


def test_equal_gaps_sample_features_uniformly():
    pool = FakePool({"opt": [1, 1, 1, 1], "cur": [0, 0, 0, 0]})
    h = SimulatedHuman(w=np.ones(4), optimal_id="opt")
    rng = np.random.default_rng(0)
    counts = np.zeros(4)
    for _ in range(N_DRAWS):
        u = language_feedback(h, "cur", pool, CATALOG, rng)
        counts[u.feature] += 1
    p = stats.chisquare(counts, f_exp=np.full(4, N_DRAWS / 4)).pvalue
    assert p > 0.01, f"chi-square p={p:.4f}, counts={counts}"


def test_empirical_feature_rates_match_softmax():
    gap = np.array([0.9, 0.2, -0.4, 0.5])
    w = np.array([1.0, 2.0, -1.5, 0.8])
    pool = FakePool({"opt": gap, "cur": np.zeros(4)})
    h = SimulatedHuman(w=w, optimal_id="opt", beta=1.0)
    v = w * gap
    expect = np.exp(v - v.max())
    expect = expect / expect.sum() * N_DRAWS

    rng = np.random.default_rng(1)
    counts = np.zeros(4)
    for _ in range(N_DRAWS):
        u = language_feedback(h, "cur", pool, CATALOG, rng)
        counts[u.feature] += 1
    p = stats.chisquare(counts, f_exp=expect).pvalue
    assert p > 0.01, f"chi-square p={p:.4f}"


def test_sharp_beta_always_picks_best_feature():
    pool = FakePool({"opt": [0.3, 0.9, 0.1, 0.2], "cur": [0.0, 0.0, 0.0, 0.0]})
    h = SimulatedHuman(w=np.ones(4), optimal_id="opt", beta=1e6)
    rng = np.random.default_rng(2)
    hits = sum(
        language_feedback(h, "cur", pool, CATALOG, rng).feature == 1
        for _ in range(N_DRAWS)
    )
    assert hits / N_DRAWS > 0.999


def test_direction_matches_gap_sign():
    pool = FakePool({"opt": [0.8, 0.1, 0.5, 0.5], "cur": [0.2, 0.6, 0.5, 0.5]})
    h = SimulatedHuman(w=np.array([1.0, 1.0, 1.0, 1.0]), optimal_id="opt")
    rng = np.random.default_rng(3)
    for _ in range(500):
        u = language_feedback(h, "cur", pool, CATALOG, rng)
        if u.feature == 0:
            assert u.direction == 1
        elif u.feature == 1:
            assert u.direction == -1
        else:
            pytest.fail("feature with zero gap was sampled")


def test_single_deficient_feature_fixed_direction():
    # w concentrated on one feature and only that feature short of optimal
    pool = FakePool({"opt": [0.5, 0.9, 0.5, 0.5], "cur": [0.5, 0.3, 0.5, 0.5]})
    h = SimulatedHuman(w=np.array([0.0, 1.0, 0.0, 0.0]), optimal_id="opt")
    rng = np.random.default_rng(4)
    for _ in range(200):
        u = language_feedback(h, "cur", pool, CATALOG, rng)
        assert u.feature == 1 and u.direction == 1


def test_identical_features_return_none():
    pool = FakePool({"opt": [0.5, 0.5, 0.5, 0.5], "cur": [0.5, 0.5, 0.5, 0.5]})
    h = SimulatedHuman(w=np.ones(4), optimal_id="opt")
    assert language_feedback(h, "cur", pool, CATALOG, np.random.default_rng(5)) is None


def test_direction_soundness_random_pools():
    rng = np.random.default_rng(6)
    for _ in range(30):
        opt = rng.uniform(0, 1, 4)
        cur = rng.uniform(0, 1, 4)
        pool = FakePool({"opt": opt, "cur": cur})
        h = SimulatedHuman(w=rng.normal(size=4), optimal_id="opt")
        u = language_feedback(h, "cur", pool, CATALOG, rng)
        if u is not None:
            assert u.direction * (opt[u.feature] - cur[u.feature]) > 0


def test_language_feedback_deterministic_given_rng():
    pool = FakePool({"opt": [0.9, 0.8, 0.2, 0.7], "cur": [0.1, 0.3, 0.6, 0.2]})
    h = SimulatedHuman(w=np.array([1.0, -0.5, 2.0, 0.3]), optimal_id="opt")
    a = [language_feedback(h, "cur", pool, CATALOG, np.random.default_rng(7)).text for _ in range(1)]
    b = [language_feedback(h, "cur", pool, CATALOG, np.random.default_rng(7)).text for _ in range(1)]
    assert a == b


def test_indifferent_choice_rate_half():
    pool = FakePool({"a": [0.9, 0.1, 0.4, 0.0], "b": [0.1, 0.8, 0.2, 1.0]})
    h = SimulatedHuman(w=np.zeros(4), optimal_id="a")
    rng = np.random.default_rng(8)
    picks_a = sum(comparison_choice(h, "a", "b", pool, rng) == "a" for _ in range(N_DRAWS))
    assert abs(picks_a / N_DRAWS - 0.5) < 0.02


def test_ln3_gap_choice_rate():
    pool = FakePool({"a": [np.log(3.0), 0, 0, 0], "b": [0.0, 0, 0, 0]})
    h = SimulatedHuman(w=np.array([1.0, 0, 0, 0]), optimal_id="a")
    rng = np.random.default_rng(9)
    picks_a = sum(comparison_choice(h, "a", "b", pool, rng) == "a" for _ in range(N_DRAWS))
    assert abs(picks_a / N_DRAWS - 0.75) < 0.02


def test_choice_rate_within_binomial_bounds():
    # arbitrary score gap: empirical rate within 3 sigma of the model
    pool = FakePool({"a": [0.6, 0.2, 0.1, 0.9], "b": [0.3, 0.5, 0.4, 0.1]})
    w = np.array([1.2, -0.7, 2.0, 0.5])
    h = SimulatedHuman(w=w, optimal_id="a")
    p = _choice_prob(float(w @ pool.features_of("a")), float(w @ pool.features_of("b")))
    rng = np.random.default_rng(10)
    picks_a = sum(comparison_choice(h, "a", "b", pool, rng) == "a" for _ in range(N_DRAWS))
    sigma = np.sqrt(p * (1 - p) / N_DRAWS)
    assert abs(picks_a / N_DRAWS - p) < 3 * sigma + 1e-9


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-1000, 1000), b=st.floats(-1000, 1000))
def test_choice_prob_complement_and_stability(a, b):
    pa = _choice_prob(a, b)
    pb = _choice_prob(b, a)
    assert np.isfinite(pa) and np.isfinite(pb)
    assert pa + pb == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= pa <= 1.0


def test_comparison_requires_distinct_ids():
    pool = FakePool({"a": [0.5, 0, 0, 0]})
    h = SimulatedHuman(w=np.ones(4), optimal_id="a")
    with pytest.raises(ValueError):
        comparison_choice(h, "a", "a", pool, np.random.default_rng(0))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ciscrub.data import SyntheticSpec, generate_synthetic
from ciscrub.errors import ConfigError, DegenerateInput
from ciscrub.model import TrainConfig, init_mlp, train
from ciscrub.robust import (
    RobustConfig,
    filter_outliers,
    robust_scrub,
    score_gradients,
    score_outliers,
    top_right_singular_vector,
)
from ciscrub.unlearn import UnlearnConfig

OFF = UnlearnConfig(noise=False, m=200)


def test_identical_gradients_score_zero():
    G = np.tile([1.0, -2.0, 3.0], (10, 1))
    s = score_gradients(G)
    assert s.degenerate and np.all(s.tau == 0)
    assert filter_outliers(s).size == 0


def test_too_few_rows():
    with pytest.raises(DegenerateInput):
        score_gradients(np.ones((1, 3)))


def test_rank_one_direction_recovered():
    rng = np.random.default_rng(0)
    u = rng.standard_normal(6)
    u /= np.linalg.norm(u)
    G = np.outer(rng.standard_normal(50), u)
    s = score_gradients(G)
    assert abs(s.singular_vector @ u) > 1 - 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_power_iteration_matches_eigh(seed):
    rng = np.random.default_rng(seed)
    # clear spectral gap so the comparison is about correctness, not convergence rate
    G = rng.standard_normal((40, 8)) @ np.diag([5.0, 2, 1, 1, 1, 1, 1, 1])
    v, _ = top_right_singular_vector(G, tol=1e-12, max_iter=2000)
    ref = np.linalg.eigh(G.T @ G)[1][:, -1]
    assert abs(v @ ref) >= 0.999


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_scores_ignore_a_common_shift(seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((30, 5)) @ np.diag([4.0, 1, 1, 1, 1])
    shift = rng.standard_normal(5) * 10
    np.testing.assert_allclose(score_gradients(G).tau, score_gradients(G + shift).tau, rtol=1e-6, atol=1e-9)


def test_filter_rules():
    assert filter_outliers(np.full(20, 3.0)).size == 0
    tau = np.ones(100)
    tau[17] = 1000.0
    assert filter_outliers(tau).tolist() == [17]
    many = np.r_[np.zeros(90), np.full(10, 50.0), [60.0, 70.0]]
    got = filter_outliers(many, sigma_thresh=0.5, rho_max=0.05)
    assert got.size == int(np.ceil(0.05 * many.size))
    assert set(got) >= {100, 101}
    assert filter_outliers(np.empty(0)).size == 0


def test_config_validation():
    for bad in ({"rho_max": 0}, {"rho_max": 1.5}, {"sigma_thresh": -1}, {"max_rounds": -1}):
        with pytest.raises(ConfigError):
            RobustConfig(**bad)


def planted(seed, sep=5.0):
    ds = generate_synthetic(SyntheticSpec("planted_outliers", {
        "n_per_class": 250, "dim": 5, "separation": sep, "outlier_fraction": 0.05}, seed))
    model = train(init_mlp([5, 2], weight_decay=0.01, seed=seed), ds.X, ds.y, TrainConfig(method="lbfgs")).model
    return ds, model


def test_zero_rounds_is_identity():
    ds, model = planted(0)
    out, inliers, rounds = robust_scrub(model, ds.X, ds.y, RobustConfig(max_rounds=0, unlearn=OFF))
    assert rounds == [] and inliers.size == len(ds.y)
    assert out.flat().tobytes() == model.flat().tobytes()


def test_balanced_duplicates_trigger_no_round():
    # two classes, every row repeated: centered gradients take two opposite values
    X = np.repeat([[1.0, 0.5], [-1.0, -0.5]], 20, axis=0)
    y = np.repeat([0, 1], 20)
    model = train(init_mlp([2, 2], weight_decay=0.1), X, y, TrainConfig(method="lbfgs")).model
    _, inliers, rounds = robust_scrub(model, X, y, RobustConfig(unlearn=OFF))
    assert rounds == [] and inliers.size == 40


def test_planted_outliers_rank_high():
    recalls = []
    for seed in range(3):
        ds, model = planted(seed)
        s = score_outliers(model, ds.X, ds.y)
        top = np.argsort(-s.tau)[: len(ds.meta["outliers"])]
        recalls.append(len(set(top) & set(ds.meta["outliers"])) / len(ds.meta["outliers"]))
    assert min(recalls) >= 0.8


def test_robust_scrub_bookkeeping():
    ds, model = planted(1)
    _, inliers, rounds = robust_scrub(model, ds.X, ds.y, RobustConfig(max_rounds=2, unlearn=OFF))
    assert 1 <= len(rounds) <= 2
    removed = [i for r in rounds for i in r.removed]
    assert len(set(removed)) == len(removed)
    assert sorted(set(inliers) | set(removed)) == list(range(len(ds.y)))
    ordinals = [rep.removal_ordinal for r in rounds for rep in r.reports]
    assert ordinals == list(range(len(ordinals)))
    assert [rep.sample_index for r in rounds for rep in r.reports] == removed
    assert len(rounds[0].removed) <= np.ceil(0.1 * len(ds.y))

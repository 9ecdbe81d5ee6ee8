import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import normal_equations
from tlr import harness
from tlr.data import IntervalMatrix, average_matrix, dataset_from_dense, split_chronological
from tlr.errors import FeatureError, TLRError
from tlr.lowrank import model_from_average, spectral_norm
from tlr.training import (FeatureConfig, FeatureVector, RankDeficientWarning, TrainConfig,
                          cross_validate_lambda, design_matrix, extract_features, fit_design,
                          fit_regressor, fold_assignment, lambda_grid, load_config,
                          s2_correlation, select_lambda, train)

SATURDAY_MIDNIGHT = harness.DEFAULT_START + 5 * 86400


def test_grid_halves_from_spectral_norm():
    grid = lambda_grid(2.0, lambda lam: -lam, max_k=3)
    assert grid[:3] == [2.0, 1.0, 0.5]


def test_grid_stops_one_step_after_plateau():
    # improves for i = 0..3, flat from i = 4 on
    values = {2.0 / 2 ** i: -100.0 + 10 * min(i, 3) for i in range(40)}
    assert len(lambda_grid(2.0, values.__getitem__, improvement_tol=1e-3)) == 5


def test_grid_respects_max_k():
    assert len(lambda_grid(2.0, lambda lam: -lam, max_k=2)) == 3


def test_grid_tolerance_is_relative():
    # improvements of 0.05 on a score of about -1000 are below 1e-3 relative
    scores = iter([-1000.0, -999.95])
    assert len(lambda_grid(1.0, lambda lam: next(scores), improvement_tol=1e-3)) == 2


@given(T=st.integers(10, 80), k=st.integers(2, 10), seed=st.integers(0, 99),
       mode=st.sampled_from(["random", "block"]))
@settings(max_examples=50, deadline=None)
def test_folds_partition_positions(T, k, seed, mode):
    folds = fold_assignment(T, k, seed, mode)
    assert len(folds) == k
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(T))
    assert all(f.size > 0 for f in folds)


def test_folds_depend_on_seed():
    a = fold_assignment(40, 10, 0)
    assert all(np.array_equal(x, y) for x, y in zip(a, fold_assignment(40, 10, 0)))
    assert not all(np.array_equal(x, y) for x, y in zip(a, fold_assignment(40, 10, 1)))


def test_select_lambda_tie_prefers_larger():
    assert select_lambda({0.5: -3.0, 0.25: -3.0, 1.0: -4.0}) == 0.5


def test_cv_identical_matrices():
    d = dataset_from_dense([np.ones((2, 2))] * 10)
    lam, scores = cross_validate_lambda(d, k_folds=10, seed=0)
    # entries only saturate at 1 - clip_low once lam / 4 <= clip_low
    assert lam == 2.0 ** -18
    assert scores[2.0 ** -18] == scores[2.0 ** -19]
    assert scores[lam] == max(scores.values())


def test_cv_zero_model_score(rng):
    base = (rng.random((6, 5)) < 0.4).astype(float)
    d = dataset_from_dense([base] * 10)
    lam = 2 * spectral_norm(average_matrix(d))
    _, scores = cross_validate_lambda(d, grid=[lam])
    c = 1e-6
    nnz = base.sum()
    expected = nnz * np.log(c) + (base.size - nnz) * np.log1p(-c)
    assert scores[lam] == pytest.approx(expected, rel=1e-12)


def test_cv_recovers_rank():
    spec = harness.gap_spec(40, 40, rank=2, seed=2)
    pis = harness.regime_matrices(spec)
    d = harness.sample_dataset(pis, np.zeros(60, dtype=int), seed=2)
    lam, scores = cross_validate_lambda(d)
    assert lam in scores and scores[lam] == max(scores.values())
    assert 1 <= model_from_average(average_matrix(d), lam).k <= 3


def test_cv_too_few_intervals():
    with pytest.raises(TLRError):
        cross_validate_lambda(dataset_from_dense([np.ones((2, 2))] * 5), k_folds=10)


def test_cv_handles_ids_unseen_in_training_folds():
    mats = [np.zeros((3, 3)) for _ in range(10)]
    for a in mats:
        a[0, 0] = 1
    big = np.zeros((5, 4))
    big[4, 3] = 1
    mats[3] = big
    lam, scores = cross_validate_lambda(dataset_from_dense(mats), k_folds=10)
    assert np.isfinite(list(scores.values())).all()


def test_features_saturday_midnight():
    b = IntervalMatrix(3, [], [], 1, 1, SATURDAY_MIDNIGHT)
    v = extract_features(b, {}, FeatureConfig(), impute=-5.0, reference_id=1)
    f = dict(zip(v.names, v.values))
    assert f["weekend"] == 1 and f["dow_sat"] == 1 and f["hour"] == 0
    assert f["hour_shifted"] == 12
    assert f["since_training"] == 2
    assert sum(f[f"dow_{d}"] for d in ("mon", "tue", "wed", "thu", "fri", "sat", "sun")) == 1


def test_features_empty_history_imputes():
    b = IntervalMatrix(50, [], [], 1, 1, SATURDAY_MIDNIGHT)
    v = extract_features(b, {}, FeatureConfig(), impute=-7.5, reference_id=49)
    f = dict(zip(v.names, v.values))
    assert f["ll_prev"] == f["ll_lag24"] == -7.5
    v = extract_features(b, {49: -1.0, 26: -2.0}, FeatureConfig(), -7.5, 49)
    f = dict(zip(v.names, v.values))
    assert (f["ll_prev"], f["ll_lag24"]) == (-1.0, -2.0)


def test_features_access_count():
    pairs = [(i // 6, i % 6) for i in range(37)]
    b = IntervalMatrix.from_pairs(0, pairs, timestamp=0.0)
    v = extract_features(b, {}, FeatureConfig(), 0.0, 0)
    assert dict(zip(v.names, v.values))["access_count"] == 37


def test_features_need_timestamp():
    b = IntervalMatrix(0, [], [], 1, 1)
    with pytest.raises(FeatureError):
        extract_features(b, {}, FeatureConfig(), 0.0, 0)
    cfg = FeatureConfig(start_timestamp=SATURDAY_MIDNIGHT)
    assert extract_features(b, {}, cfg, 0.0, 0).values[1] == 1.0
    plain = FeatureConfig(weekend=False, day_of_week=False, hour_of_day=False)
    assert extract_features(b, {}, plain, 0.0, 0).values.size == len(plain.names())


def test_exact_linear_fit(rng):
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 3))])
    w = np.array([2.0, -1.0, 0.5, 3.0])
    reg = fit_design(X, X @ w)
    np.testing.assert_allclose(reg.weights, w, atol=1e-8)
    assert reg.train_residual_std < 1e-10


def test_constant_target(rng):
    X = np.column_stack([np.ones(25), rng.normal(size=(25, 2))])
    reg = fit_design(X, np.full(25, 4.2))
    np.testing.assert_allclose(reg.weights, [4.2, 0, 0], atol=1e-10)


def test_fit_regressor_matches_normal_equations(rng):
    X = np.column_stack([np.ones(100), rng.normal(size=(100, 5))])
    y = rng.normal(size=100)
    pairs = [(FeatureVector(x, tuple("abcdef")), t) for x, t in zip(X, y)]
    reg = fit_regressor(pairs)
    np.testing.assert_allclose(reg.weights, normal_equations(X, y), atol=1e-8)
    assert reg.feature_names == tuple("abcdef")
    # OLS residuals are orthogonal to every design column
    assert np.abs(X.T @ (y - X @ reg.weights)).max() < 1e-6


def test_rank_deficient_uses_ridge(rng):
    X = np.column_stack([np.ones(20), rng.normal(size=20)])
    X = np.column_stack([X, X[:, 1]])
    y = rng.normal(size=20)
    with pytest.warns(RankDeficientWarning):
        reg = fit_design(X, y)
    alpha = 1e-6
    oracle = np.linalg.solve(X.T @ X + alpha * np.eye(3), X.T @ y)
    np.testing.assert_allclose(reg.weights, oracle, atol=1e-6)


def test_fit_regressor_needs_pairs():
    with pytest.raises(ValueError):
        fit_regressor([])


def test_design_matrix_uses_earlier_lls_only():
    cfg = FeatureConfig(weekend=False, day_of_week=False, hour_of_day=False, lag=2,
                        access_count=False, since_training=False)
    bs = [IntervalMatrix(t, [], [], 1, 1) for t in range(10, 14)]
    X = design_matrix(bs, [-1.0, -2.0, -3.0, -4.0], cfg, impute=-9.0, reference_id=9)
    np.testing.assert_array_equal(X[:, 1], [-9.0, -1.0, -2.0, -3.0])
    np.testing.assert_array_equal(X[:, 2], [-9.0, -9.0, -1.0, -2.0])


def test_config_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("# comment\nk_folds = 5\nseed = 3  # inline\nfeatures.lag = 7\n"
                 "features.weekend = no\ncv_mode = block\n")
    cfg = load_config(p)
    assert (cfg.k_folds, cfg.seed, cfg.cv_mode) == (5, 3, "block")
    assert cfg.features.lag == 7 and cfg.features.weekend is False
    assert load_config(p, seed=11).seed == 11
    assert load_config().k_folds == 10


@pytest.mark.parametrize("text", ["bogus = 1\n", "features.nope = 1\n", "k_folds = 1\n",
                                  "features.weekend = maybe\n", "cv_mode = loo\n",
                                  "split_fraction = 1.5\n"])
def test_config_errors(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(ValueError):
        load_config(p)


def small_two_regime(seed=0, T=120):
    spec = harness.SyntheticSpec(n=100, m=100, T=T, seed=seed, density=0.02)
    return harness.generate_synthetic(spec)


def test_train_two_regimes_calibrated():
    data = small_two_regime()
    cfg = TrainConfig(features=harness.SYNTHETIC_FEATURES)
    p = train(data.dataset, cfg)
    _, s2 = split_chronological(data.dataset, cfg.split_fraction)
    assert s2_correlation(p, s2) >= 0.95
    assert p.cv_scores[p.lambda_star] == max(p.cv_scores.values())
    assert p.reference_deviations.size == len(s2)
    assert p.reference_id == data.dataset[len(data.dataset) - len(s2) - 1].interval_id


def test_train_stationary_has_flat_regression():
    spec = harness.gap_spec(40, 40, rank=2, seed=1)
    pis = harness.regime_matrices(spec)
    d = harness.sample_dataset(pis, np.zeros(100, dtype=int), harness.timestamps(
        harness.SyntheticSpec(T=100)), seed=1)
    only_intercept = FeatureConfig(weekend=False, autoregressive=False, access_count=False,
                                   since_training=False, day_of_week=False,
                                   hour_of_day=False)
    p = train(d, TrainConfig(features=only_intercept))
    np.testing.assert_allclose(p.regressor.weights, [p.s2_mean_ll], rtol=1e-10)

    timing = FeatureConfig(weekend=False, autoregressive=False, access_count=False,
                           day_of_week=False)
    p = train(d, TrainConfig(features=timing))
    _, s2 = split_chronological(d)
    ys = np.array(list(p.s2_history.values()))
    X = design_matrix(s2.intervals, ys, timing, p.impute_ll, p.reference_id)
    assert np.std(X @ p.regressor.weights) < 0.5 * np.std(ys)


def test_train_needs_twenty_intervals():
    with pytest.raises(TLRError):
        train(dataset_from_dense([np.ones((2, 2))] * 19))


def test_default_features_warn_on_collinearity():
    data = small_two_regime(T=60)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        train(data.dataset, TrainConfig())
    assert any(issubclass(w.category, RankDeficientWarning) for w in caught)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import mann_whitney
from tlr import harness
from tlr.data import IntervalMatrix, dataset_from_dense
from tlr.scoring import score_sequence


def test_all_zero_and_all_one_probabilities():
    for value, expected in ((0.0, 0), (1.0, 12)):
        d = harness.sample_dataset([np.full((3, 4), value)], [0] * 5)
        assert all(b.nnz == expected for b in d)


def test_empirical_density():
    d = harness.sample_dataset([np.full((20, 50), 0.3)], [0] * 100, seed=4)
    assert sum(b.nnz for b in d) / 1e5 == pytest.approx(0.3, abs=0.01)


def test_bad_probabilities():
    with pytest.raises(ValueError):
        harness.sample_dataset([np.full((2, 2), 1.5)], [0])
    with pytest.raises(ValueError):
        harness.generate_synthetic(harness.SyntheticSpec(density=0.9))


def test_spec_validation():
    with pytest.raises(ValueError):
        harness.SyntheticSpec(n=2, m=2, rank=3)
    with pytest.raises(ValueError):
        harness.SyntheticSpec(regimes=((1.0,),))
    with pytest.raises(ValueError):
        harness.SyntheticSpec(regimes=((1, 1, 1),) * 3)


def test_generation_is_seeded():
    spec = harness.SyntheticSpec(n=30, m=30, T=10, density=0.02)
    a = harness.generate_synthetic(spec)
    b = harness.generate_synthetic(spec)
    assert [x.entries for x in a.dataset] == [x.entries for x in b.dataset]
    c = harness.generate_synthetic(harness.SyntheticSpec(n=30, m=30, T=10, density=0.02,
                                                         seed=1))
    assert [x.entries for x in a.dataset] != [x.entries for x in c.dataset]


def test_regimes_follow_the_clock():
    data = harness.generate_synthetic(harness.SyntheticSpec(n=30, m=30, T=48, density=0.02))
    np.testing.assert_array_equal(data.regime[:24], [1] * 12 + [0] * 12)
    assert np.linalg.matrix_rank(data.pi_bar, tol=1e-10) == 3
    assert data.pi_bar.shape == (30, 30)


def test_inject_full_and_count():
    b = IntervalMatrix(0, [], [], 100, 100)
    assert harness.inject_random_accesses(b, 1.0, 0).nnz == 10_000
    assert abs(harness.inject_random_accesses(b, 0.5, 1).nnz - 5000) <= 150
    assert harness.inject_random_accesses(b, 1e-9, 2).nnz == 0


@given(seed=st.integers(0, 1000), eps=st.floats(1e-3, 1.0))
@settings(max_examples=50, deadline=None)
def test_inject_keeps_existing_accesses(seed, eps):
    rng = np.random.default_rng(seed)
    r, c = np.nonzero(rng.random((8, 9)) < 0.3)
    b = IntervalMatrix(4, r, c, 8, 9, 123.0)
    out = harness.inject_random_accesses(b, eps, rng, shape=(10, 9))
    assert b.entries <= out.entries
    assert (out.interval_id, out.timestamp) == (4, 123.0)
    assert out.n_users == 10


def test_inject_rejects_bad_epsilon():
    b = IntervalMatrix(0, [], [], 2, 2)
    for eps in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            harness.inject_random_accesses(b, eps)


def test_swap_involution_and_identity(rng):
    d = dataset_from_dense([(rng.random((4, 4)) < 0.5) for _ in range(5)],
                           timestamps=[10.0, 20.0, 30.0, 40.0, 50.0])
    s = harness.swap_intervals(d, 1, 3)
    assert s.by_id(1).entries == d.by_id(3).entries
    assert s.by_id(1).timestamp == 20.0
    back = harness.swap_intervals(s, 1, 3)
    assert [b.entries for b in back] == [b.entries for b in d]
    same = dataset_from_dense([np.eye(3)] * 3)
    assert [b.entries for b in harness.swap_intervals(same, 0, 2)] == \
        [b.entries for b in same]
    with pytest.raises(KeyError):
        harness.swap_intervals(d, 1, 99)


def test_mean_baseline():
    np.testing.assert_array_equal(harness.mean_baseline_score([-5.0, -3.0, -7.0], -5.0),
                                  [0.0, 2.0, 2.0])
    assert len(set(harness.mean_baseline_score([-2.0] * 4, -3.0))) == 1


def test_roc_examples(rng):
    assert harness.roc_auc([3, 2, 1, 0], [1, 1, 0, 0]).auc == 1.0
    hand = harness.roc_auc([(0.9, True), (0.8, False), (0.7, True), (0.1, False)])
    assert hand.auc == 0.75
    s = rng.random(4000)
    assert harness.roc_auc(s, rng.random(4000) < 0.5).auc == pytest.approx(0.5, abs=0.05)
    with pytest.raises(ValueError):
        harness.roc_auc([1, 2], [1, 1])


def test_roc_curve_shape():
    c = harness.roc_auc([0.5, 0.5, 0.2, 0.9], [1, 0, 0, 1])
    assert c.points[0] == (0.0, 0.0) and c.points[-1] == (1.0, 1.0)
    # the tied pair contributes a single diagonal step
    assert len(c.points) == 4
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)


@given(data=st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=50))
@settings(max_examples=200, deadline=None)
def test_roc_equals_pair_counting(data):
    scores = [s for s, _ in data]
    labels = [y for _, y in data]
    if all(labels) or not any(labels):
        return
    assert harness.roc_auc(scores, labels).auc == float(mann_whitney(scores, labels))


def test_gap_shrinks_with_T():
    spec = harness.gap_spec()
    gaps = harness.generalization_gap(spec, [10, 100_000], trials=20, seed=3)
    assert np.median(gaps[100_000]) < 0.05 * np.median(gaps[10])


def test_gap_at_true_model_is_variance_error():
    spec = harness.gap_spec(10, 10)
    pibar = harness.regime_matrices(spec)[0]
    gaps = harness.generalization_gap(spec, [30], trials=3, seed=5)
    rng = np.random.default_rng([5, 30])
    for g in gaps[30]:
        counts = rng.binomial(30, pibar)
        # any 30 binary intervals with these cell counts have the same empirical loss
        intervals = [(counts > t).astype(float) for t in range(30)]
        emp = np.mean([np.mean((pibar - b) ** 2) for b in intervals])
        assert g == pytest.approx(abs(np.mean(pibar * (1 - pibar)) - emp), rel=1e-9)


def test_gap_rejects_large_trace_norm():
    spec = harness.gap_spec(10, 10)
    with pytest.raises(ValueError):
        harness.generalization_gap(spec, [5], trials=1, model=np.ones((10, 10)), gamma=1.0)


def test_swapped_intervals_stand_out(small_setup):
    s = small_setup
    reg = s.test_regime
    a = int(np.nonzero(reg == 0)[0][3])
    b = int(np.nonzero(reg == 1)[0][3])
    ids = s.test.ids
    swapped = harness.swap_intervals(s.test, ids[a], ids[b])
    lls = list(s.clean_lls)
    lls[a], lls[b] = lls[b], lls[a]
    devs = np.array([x.deviation for x in score_sequence(swapped.intervals, lls, s.pipeline)])
    typical = np.median(np.delete(devs, [a, b, a + 1, b + 1]))
    assert devs[a] > 3 * typical and devs[b] > 3 * typical


def test_same_regime_swap_stays_quiet(small_setup):
    s = small_setup
    day = np.nonzero(s.test_regime == 0)[0]
    a, b = int(day[2]), int(day[5])
    ids = s.test.ids
    swapped = harness.swap_intervals(s.test, ids[a], ids[b])
    lls = list(s.clean_lls)
    lls[a], lls[b] = lls[b], lls[a]
    devs = np.array([x.deviation for x in score_sequence(swapped.intervals, lls, s.pipeline)])
    assert max(devs[a], devs[b]) < np.quantile(devs, 0.95)


def test_experiment_reports(tmp_path, small_setup):
    res = harness.run_injection_experiment(small_setup, [0.1], repetitions=3)
    assert res.auc("0.1", "TLR") == 1.0
    res.write_report(tmp_path / "r.csv")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "run_id,param,method,auc" and len(rows) == 1 + 6 + 2
    res.write_roc_points(tmp_path / "roc")
    assert sorted(p.name for p in (tmp_path / "roc").iterdir()) == \
        ["roc_0.1_MEAN.dat", "roc_0.1_TLR.dat"]


def test_experiments_are_deterministic(small_setup):
    a = harness.run_swap_experiment(small_setup, repetitions=3, seed=4)
    b = harness.run_swap_experiment(small_setup, repetitions=3, seed=4)
    assert a.rows == b.rows

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tsforge.dataset import SequenceCorpus, SyntheticSpec, generate_synthetic, split_per_class
from tsforge.diffusion import DiffusionConfig
from tsforge.evaluation import (Classifier, ClassifierConfig, FidStats, NumericalError,
                                avg_fid_over_classes, confusion_matrix, evaluate_classifier, fid,
                                fid_from_stats, first_frame_generator, jitter, real_split_fid,
                                run_table1_matrix, run_uplift_experiment, time_warp,
                                traditional_augment, train_classifier)


# FID ----------------------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(3, 30), st.integers(1, 6)),
              elements=st.floats(-100, 100, allow_nan=False)))
def test_fid_self_is_zero(x):
    assert fid(x, x) < 1e-6


def test_scalar_gaussian_closed_form():
    a = FidStats(np.array([0.0]), np.array([[1.0]]))
    b = FidStats(np.array([1.0]), np.array([[1.0]]))
    assert abs(fid_from_stats(a, b) - 1.0) < 1e-12


def test_mean_shift_equal_covariance():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(200, 5))
    cov = np.cov(a, rowvar=False)
    delta = np.array([0.5, -1.0, 2.0, 0.0, 0.25])
    s1 = FidStats(a.mean(0), cov)
    s2 = FidStats(a.mean(0) + delta, cov)
    assert abs(fid_from_stats(s1, s2) - delta @ delta) < 1e-9
    assert abs(fid(a, a + delta) - delta @ delta) < 1e-9


def test_fid_symmetric_and_non_negative():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(40, 6))
    b = rng.normal(1.0, 2.0, size=(60, 6))
    assert abs(fid(a, b) - fid(b, a)) < 1e-8
    assert fid(a, b) > 0


def test_scaled_covariance_closed_form():
    # N(0, I) against N(0, 4I): d * (1 + 4 - 2 * 2) = d
    a = FidStats(np.zeros(3), np.eye(3))
    b = FidStats(np.zeros(3), 4 * np.eye(3))
    assert abs(fid_from_stats(a, b, eps=0.0) - 3.0) < 1e-12


def test_fid_input_errors():
    with pytest.raises(ValueError):
        FidStats.from_samples(np.zeros((1, 3)))
    with pytest.raises(NumericalError):
        FidStats.from_samples(np.array([[0.0], [np.nan]]))


def test_rank_deficient_covariance_is_finite():
    a = np.zeros((10, 4))
    a[:, 0] = np.arange(10)
    assert np.isfinite(fid(a, a + 1))


# averaged FID ----------------------------------------------------------------------------------

def _two_class(seed=0, n=20, d=3):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(0, 1, (n, d)), rng.normal(3, 1, (n, d))])
    return x, np.repeat([0, 1], n)


def test_single_repetition_full_set_equals_fid():
    real, rl = _two_class(0)
    gen, gl = _two_class(1)
    res = avg_fid_over_classes(real, rl, gen, gl, 2, repetitions=1, fraction=1.0)
    for c in range(2):
        assert abs(res["per_class"][c] - fid(real[rl == c], gen[gl == c])) < 1e-12
    assert res["rep_variance"] == 0.0


def test_avg_fid_deterministic_and_reports_variance():
    real, rl = _two_class(0)
    gen, gl = _two_class(1)
    a = avg_fid_over_classes(real, rl, gen, gl, 2, repetitions=10, seed=3)
    b = avg_fid_over_classes(real, rl, gen, gl, 2, repetitions=10, seed=3)
    assert a == b
    assert a["rep_variance"] > 0 and a["repetitions"] == 10


def test_avg_fid_too_few_samples():
    real, rl = _two_class(0)
    with pytest.raises(ValueError):
        avg_fid_over_classes(real, rl, real[:2], np.array([0, 0]), 2, repetitions=2)


def _corpus_from_frames(x, labels):
    return SequenceCorpus(x[:, None, :], labels, np.ones(len(x), int), int(labels.max()) + 1)


def test_real_split_identical_halves_is_zero():
    base = np.random.default_rng(0).normal(size=(1, 3))
    dup = _corpus_from_frames(np.repeat(base, 10, axis=0), np.zeros(10, int))
    assert real_split_fid(dup, 0) < 1e-6


def test_real_split_positive_deterministic_and_size_check():
    c = generate_synthetic(SyntheticSpec(class_count=3, samples_per_class=20), seed=0)
    v = real_split_fid(c, 1)
    assert v > 0 and v == real_split_fid(c, 1)
    small = generate_synthetic(SyntheticSpec(class_count=2, samples_per_class=3), seed=0)
    with pytest.raises(ValueError):
        real_split_fid(small)


# first frames and the six-arm matrix ---------------------------------------------------------------

@pytest.fixture(scope="module")
def small_corpus():
    return generate_synthetic(SyntheticSpec(class_count=3, samples_per_class=12, channels=3), seed=2)


def test_split_fid_below_untrained_generator(small_corpus):
    gen, gl, _ = first_frame_generator(small_corpus, "unit_interval", DiffusionConfig(epochs=0), 20, 0)
    untrained = avg_fid_over_classes(small_corpus.first_frames(), small_corpus.labels, gen, gl,
                                     3, repetitions=5)["mean"]
    assert 0 < real_split_fid(small_corpus) < untrained


def test_generated_frames_in_original_range(small_corpus):
    gen, gl, hist = first_frame_generator(small_corpus, "signed_unit",
                                          DiffusionConfig(epochs=5, target="eps"), 4, 0)
    assert gen.shape == (12, 3) and list(np.bincount(gl)) == [4, 4, 4]
    real = small_corpus.samples
    assert gen.min() >= real.min() - 1e-9 and gen.max() <= real.max() + 1e-9
    assert len(hist) == 5


def test_table1_structure(small_corpus):
    rep = run_table1_matrix(small_corpus, DiffusionConfig(epochs=3, hidden=8), per_class=5,
                            repetitions=2)
    arms = [r["arm"] for r in rep["rows"]]
    assert len(arms) == 6 and len(set(arms)) == 6
    assert all(r["avg_fid"] >= 0 for r in rep["rows"])
    lines = rep["csv"].strip().splitlines()
    assert len(lines) == 8 and lines[-1].startswith("real_split,")


# augmentation ---------------------------------------------------------------------------------

def test_jitter_keeps_padding_and_scale():
    rng = np.random.default_rng(0)
    seq = np.zeros((64, 2))
    out = jitter(seq, 40, rng, 0.03)
    assert np.all(out[40:] == out[39])
    assert abs(out[:40].std() - 0.03) < 0.01


def test_time_warp_identity_at_zero_strength():
    seq = np.random.default_rng(0).normal(size=(20, 2))
    out, L = time_warp(seq, 20, np.random.default_rng(1), strength=0.0)
    np.testing.assert_allclose(out, seq, atol=1e-12)
    assert L == 20


def test_time_warp_monotone_and_padded():
    seq = np.cumsum(np.ones((30, 1)), axis=0)
    out, L = time_warp(seq, 25, np.random.default_rng(2))
    assert np.all(np.diff(out[:, 0]) >= -1e-12)
    assert np.all(out[L:] == out[L - 1])


def test_traditional_augment_matched_size():
    c = generate_synthetic(SyntheticSpec(class_count=3, samples_per_class=5), seed=0)
    aug = traditional_augment(c, 25, seed=1)
    assert aug.n == 75 and list(aug.class_counts()) == [25, 25, 25]
    again = traditional_augment(c, 25, seed=1)
    np.testing.assert_array_equal(aug.samples, again.samples)


# classifier probe ------------------------------------------------------------------------------

def test_confusion_matrix_counts():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 2], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]


def test_classifier_learns_separable_classes():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(0, 0.1, (30, 8, 2)), rng.normal(1, 0.1, (30, 8, 2))])
    c = SequenceCorpus(x, np.repeat([0, 1], 30), np.full(60, 8), 2)
    clfs = train_classifier(c, ClassifierConfig(epochs=20, repeats=2))
    res = evaluate_classifier(clfs, c)
    assert res["accuracy"] == 1.0
    assert np.sum(res["confusion"]) == 120


def test_classifier_input_size_and_class_checks():
    clf = Classifier(8, 2, 3, ClassifierConfig(), 0)
    assert clf.inputs == 4
    with pytest.raises(ValueError):
        clf.predict(np.zeros((1, 12, 2)))
    c = SequenceCorpus(np.zeros((2, 8, 2)), [0, 1], [8, 8], 2)
    with pytest.raises(ValueError):
        evaluate_classifier(clf, c)


def test_uplift_report_structure():
    c = generate_synthetic(SyntheticSpec(class_count=3, samples_per_class=8, channels=2), seed=0)
    train, test = split_per_class(c, 0.5)
    cfg = ClassifierConfig(epochs=2, repeats=1)
    rep = run_uplift_experiment(train, test, {"w=3": traditional_augment(train, 4, 5)},
                                traditional_augment(train, 4, 6), cfg)
    assert set(rep["arms"]) == {"no_aug", "traditional", "w=3"}
    assert [r["method"] for r in rep["table3"]["rows"]] == ["traditional", "w=3"]
    assert rep["table2"]["rows"][0]["increase"] is None
    assert 0 <= rep["similarity"]["w=3"]["accuracy"] <= 1
    with pytest.raises(ValueError):
        run_uplift_experiment(train, test, {"bad": SequenceCorpus(np.zeros((1, 3, 2)), [0], [3], 3)},
                              None, cfg)

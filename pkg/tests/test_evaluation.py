import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitaae import evaluation as ev
from gaitaae.errors import EmptySequence, SegmentTooLong, SingleClass


def pairwise_auc(scores, labels):
    """Mann-Whitney count over all (abnormal, normal) pairs."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def sweep_roc(scores, labels):
    """(FPR, TPR) at every threshold, flagging score >= t, plus the empty set."""
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    pts = {(0.0, 0.0)}
    for t in set(scores):
        tp = sum(1 for s, l in zip(scores, labels) if s >= t and l == 1)
        fp = sum(1 for s, l in zip(scores, labels) if s >= t and l == 0)
        pts.add((fp / n_neg, tp / n_pos))
    return sorted(pts)


def sweep_eer(scores, labels):
    """Walk the swept vertices and interpolate where FNR crosses FPR."""
    pts = sweep_roc(scores, labels)
    prev = None
    for fpr, tpr in pts:
        gap = (1 - tpr) - fpr
        if gap == 0:
            return fpr
        if gap < 0:
            pf, pt = prev
            pgap = (1 - pt) - pf
            lam = pgap / (pgap - gap)
            return pf + lam * (fpr - pf)
        prev = (fpr, tpr)
    raise AssertionError("no crossing")


def random_set(rng, n=None, ties=False):
    n = n or int(rng.integers(4, 120))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    scores = rng.normal(size=n) + 0.8 * labels
    if ties:
        scores = np.round(scores, 1)
    return ev.ScoredSet(scores, labels)


def test_roc_perfect_separation_passes_corner():
    s = ev.ScoredSet([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    roc = ev.roc_curve(s)
    assert any((roc == [0.0, 1.0]).all(axis=1))
    assert ev.auc(s) == 1.0 and ev.eer(s) == 0.0


def test_roc_constant_scores_is_diagonal():
    roc = ev.roc_curve(ev.ScoredSet(np.full(6, 0.3), [0, 1, 0, 1, 1, 0]))
    np.testing.assert_array_equal(roc, [[0, 0], [1, 1]])
    assert ev.auc(ev.ScoredSet(np.full(6, 0.3), [0, 1, 0, 1, 1, 0])) == 0.5


@pytest.mark.parametrize("ties", [False, True])
def test_roc_matches_threshold_sweep(ties):
    rng = np.random.default_rng(1 + ties)
    for _ in range(20):
        s = random_set(rng, ties=ties)
        got = [tuple(p) for p in ev.roc_curve(s)]
        assert got == sweep_roc(list(s.scores), list(s.labels))


@pytest.mark.parametrize("ties", [False, True])
def test_auc_and_eer_match_brute_force(ties):
    rng = np.random.default_rng(10 + ties)
    for _ in range(30):
        s = random_set(rng, ties=ties)
        assert ev.auc(s) == pytest.approx(pairwise_auc(s.scores, s.labels), abs=1e-12)
        assert ev.eer(s) == pytest.approx(sweep_eer(list(s.scores), list(s.labels)), abs=1e-9)


def test_shuffled_labels_give_chance_auc():
    rng = np.random.default_rng(3)
    n = 4000
    s = ev.ScoredSet(rng.normal(size=n), rng.permutation(np.r_[np.zeros(n // 2), np.ones(n // 2)]))
    assert abs(ev.auc(s) - 0.5) < 3 / np.sqrt(n)


def test_reversed_separation_after_orientation():
    s = ev.ScoredSet([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1])
    flip, raw = ev.orient(s)
    assert flip and raw == 0.0
    flipped = ev.ScoredSet(-s.scores, s.labels)
    assert ev.auc(flipped) == 1.0 and ev.eer(flipped) == 0.0


def test_single_class_rejected():
    with pytest.raises(SingleClass):
        ev.auc(ev.ScoredSet([0.1, 0.2], [1, 1]))
    with pytest.raises(ValueError):
        ev.ScoredSet([0.1], [2])


@pytest.mark.parametrize("use_numba", [True, False])
def test_roc_kernels_agree(use_numba):
    rng = np.random.default_rng(4)
    for _ in range(10):
        s = random_set(rng, 300, ties=True)
        order = np.argsort(-s.scores, kind="mergesort")
        ref = ev._roc_counts_numpy(s.scores[order], s.labels[order])
        got = ev.roc_counts(s, use_numba=use_numba)
        np.testing.assert_array_equal(got[0], ref[0])
        np.testing.assert_array_equal(got[1], ref[1])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_metric_ranges(seed, ties):
    s = random_set(np.random.default_rng(seed), ties=ties)
    flip, _ = ev.orient(s)
    if flip:
        s = ev.ScoredSet(-s.scores, s.labels)
    assert 0.5 <= ev.auc(s) <= 1.0
    # a ROC that crosses the diagonal can have AUC > 0.5 yet EER > 0.5; the
    # two polarities still split the error rate between them
    e, e_rev = ev.eer(s), ev.eer(ev.ScoredSet(-s.scores, s.labels))
    assert 0.0 <= min(e, e_rev) <= 0.5
    if not ties:
        assert e + e_rev == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_invariant_under_monotone_maps(seed):
    s = random_set(np.random.default_rng(seed))
    mapped = ev.ScoredSet(np.exp(3 * s.scores), s.labels)
    assert ev.auc(s) == ev.auc(mapped)


def window_loop(x, delta, sliding):
    out = []
    step = 1 if sliding else delta
    start = 0
    while start + delta <= len(x):
        out.append(sum(x[start:start + delta]) / delta)
        start += step
    return out


def test_aggregate_examples():
    x = np.arange(10, dtype=float)
    np.testing.assert_array_equal(ev.aggregate(x, 1), x)
    assert ev.aggregate(x, 10).tolist() == [ev.sequence_score(x)]
    np.testing.assert_allclose(ev.aggregate(x, 3), [1.0, 4.0, 7.0])  # remainder dropped
    with pytest.raises(SegmentTooLong):
        ev.aggregate(x, 11)
    with pytest.raises(EmptySequence):
        ev.sequence_score([])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=80), st.integers(1, 80), st.booleans())
def test_aggregate_matches_window_loop(x, delta, sliding):
    if delta > len(x):
        return
    got = ev.aggregate(x, delta, "sliding" if sliding else "none")
    np.testing.assert_allclose(got, window_loop(x, delta, sliding), atol=1e-9)


def test_eval_config_names():
    assert ev.EvalConfig("segment", 60).name == "segment60"
    assert ev.EvalConfig("segment", 10, "sliding").name == "sliding10"
    assert ev.EvalConfig("sequence").name == "sequence"
    with pytest.raises(ValueError):
        ev.EvalConfig("bogus")


def test_level_scores_pools_sequences():
    seqs = [np.arange(6.0), np.arange(6.0) + 10]
    s = ev.level_scores(seqs, [0, 1], ev.EvalConfig("segment", 3))
    np.testing.assert_array_equal(s.scores, [1, 4, 11, 14])
    np.testing.assert_array_equal(s.labels, [0, 0, 1, 1])
    s = ev.level_scores(seqs, [0, 1], ev.EvalConfig("sequence"))
    np.testing.assert_array_equal(s.scores, [2.5, 12.5])


def test_evaluate_epoch_range_uses_given_orientation():
    seqs = [np.full(4, 1.0), np.full(4, 0.0)]  # abnormal scored lower
    labels = [0, 1]
    cfg = ev.EvalConfig("frame")
    auto = ev.evaluate_epoch_range([seqs, seqs], labels, cfg, epochs=[7, 8])
    assert auto.flipped == [True, True] and auto.auc == 1.0 and auto.epochs == [7, 8]
    fixed = ev.evaluate_epoch_range([seqs], labels, cfg, orientation=[False])
    assert fixed.auc == 0.0 and fixed.eer == 1.0
    assert auto.auc_std == 0.0

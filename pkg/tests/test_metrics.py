import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_topk, pairwise_auc
from ripplenet.metrics import (
    PredictionRecord,
    accuracy,
    accuracy_from_arrays,
    auc,
    auc_from_arrays,
    rank_items,
    topk_metrics,
)


def records(labels, scores):
    return [PredictionRecord(0, i, y, s) for i, (y, s) in enumerate(zip(labels, scores))]


def test_auc_separated():
    assert auc(records([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1])) == 1.0


def test_auc_reversed():
    assert auc(records([1, 1, 0, 0], [0.1, 0.2, 0.8, 0.9])) == 0.0


def test_auc_all_ties():
    assert auc(records([1, 0, 1, 0, 0], [0.4] * 5)) == 0.5


def test_auc_single_class():
    with pytest.raises(ValueError):
        auc(records([1, 1], [0.2, 0.3]))


def test_auc_matches_pairwise(rng):
    labels = rng.integers(0, 2, 200)
    scores = np.round(rng.random(200), 2)  # rounding forces ties
    assert auc_from_arrays(labels, scores) == pytest.approx(pairwise_auc(labels.tolist(), scores.tolist()), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 20)), min_size=2, max_size=60))
def test_auc_invariant_under_monotone_map(pairs):
    labels = np.array([y for y, _ in pairs])
    if labels.min() == labels.max():
        return
    scores = np.array([s for _, s in pairs], dtype=float)
    assert auc_from_arrays(labels, scores) == auc_from_arrays(labels, np.exp(scores / 4) * 3 + 1)


def test_accuracy_cases():
    labels = [1, 0, 1, 0]
    assert accuracy(records(labels, [0.9, 0.1, 0.6, 0.4])) == 1.0
    assert accuracy(records(labels, [0.1, 0.9, 0.4, 0.6])) == 0.0
    assert accuracy(records(labels, [0.9, 0.1, 0.6, 0.7])) == 0.75


def test_accuracy_threshold_inclusive():
    assert accuracy_from_arrays([1, 0], [0.5, 0.49]) == 1.0


def test_accuracy_empty():
    with pytest.raises(ValueError):
        accuracy_from_arrays([], [])


def test_rank_items_breaks_ties_by_id():
    assert rank_items({3: 0.5, 1: 0.5, 2: 0.9, 0: 0.1}, 3) == [2, 1, 3]


def test_topk_all_correct():
    scores = {0: {1: 0.9, 2: 0.8, 3: 0.1}}
    m = topk_metrics(scores, {0: {1, 2}}, 2)
    assert (m.precision, m.recall, m.f1, m.users) == (1.0, 1.0, 1.0, 1)


def test_topk_zero_hits():
    scores = {0: {1: 0.1, 2: 0.2, 3: 0.9, 4: 0.8}}
    m = topk_metrics(scores, {0: {1, 2}}, 2)
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)


def test_topk_skips_users_without_positives():
    m = topk_metrics({0: {1: 0.5}, 1: {1: 0.5}}, {0: {1}}, 1)
    assert m.users == 1


def test_topk_rejects_bad_k():
    with pytest.raises(ValueError):
        topk_metrics({}, {}, 0)


def test_topk_matches_oracle(rng):
    scores, positives = {}, {}
    for u in range(20):
        cand = rng.choice(50, 30, replace=False)
        scores[u] = {int(v): float(np.round(rng.random(), 1)) for v in cand}
        positives[u] = set(rng.choice(cand, int(rng.integers(1, 6)), replace=False).tolist())
    for k in (1, 5, 10):
        per_user = naive_topk(scores, positives, k)
        m = topk_metrics(scores, positives, k)
        assert m.precision == pytest.approx(np.mean([p for p, _ in per_user.values()]), abs=1e-15)
        assert m.recall == pytest.approx(np.mean([r for _, r in per_user.values()]), abs=1e-15)
        for u, (p, r) in per_user.items():
            assert p * k == pytest.approx(r * len(positives[u]), abs=1e-12)

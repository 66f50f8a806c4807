import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmadc.evaluation import ScoredExample, auc_of, macro_ovr_auc, recording_auc, roc_auc
from oracles import pairwise_auc


def test_perfect_separation():
    assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0


def test_pairwise_example():
    assert roc_auc([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75


def test_all_ties():
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_single_class_rejected():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        roc_auc([0.1, np.nan], [0, 1])


binary_sets = st.integers(2, 12).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 5).map(lambda v: v / 5), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)
    .filter(lambda ls: 0 < sum(ls) < len(ls))))


@given(binary_sets)
@settings(max_examples=400)
def test_matches_pairwise_oracle(data):
    scores, labels = data
    assert roc_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)


@given(binary_sets)
def test_complement(data):
    scores, labels = data
    assert roc_auc(scores, labels) + roc_auc(-np.array(scores), labels) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(100))
def test_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 40))
    scores = rng.normal(size=n)
    labels = rng.permutation(np.arange(n) % 2)
    base = roc_auc(scores, labels)
    for f in (np.exp, lambda s: 3 * s + 7, np.arctan, lambda s: s ** 3):
        assert roc_auc(f(scores), labels) == base


def test_macro_perfect_and_uniform():
    labels = np.array([0, 1, 2, 0, 1, 2])
    assert macro_ovr_auc(np.eye(3)[labels], labels) == 1.0
    assert macro_ovr_auc(np.full((6, 3), 1 / 3), labels) == 0.5


def test_macro_handcrafted():
    probs = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7],
                      [0.3, 0.4, 0.3], [0.5, 0.1, 0.4], [0.2, 0.3, 0.5]])
    labels = [0, 1, 2, 1, 2, 0]
    want = np.mean([pairwise_auc(probs[:, c], [l == c for l in labels]) for c in range(3)])
    assert macro_ovr_auc(probs, labels) == pytest.approx(want, abs=1e-12)


def test_macro_missing_class():
    with pytest.raises(ValueError):
        macro_ovr_auc(np.full((4, 3), 1 / 3), [0, 1, 0, 1])


def test_recording_auc_uses_impaired_column():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    assert recording_auc(probs, [0, 1, 0, 1]) == 1.0


def test_scored_examples():
    ex = [ScoredExample(0.9, 1, "a"), ScoredExample(0.4, 1, "b"),
          ScoredExample(0.6, 0, "c"), ScoredExample(0.1, 0, "d")]
    assert auc_of(ex) == 0.75

"""ROC AUC in the Mann-Whitney form (ties count one half)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ScoredExample:
    score: object  # float, or a class-probability vector
    label: int
    recording_id: str = ""


def roc_auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted 1/2.

    ``labels`` are truthy for positives.  Rank-sum form, O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    pos = np.asarray(labels).astype(bool).ravel()
    if scores.shape != pos.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both positive and negative examples")
    ranks = rankdata(scores)  # average ranks for ties
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def macro_ovr_auc(probs, labels) -> float:
    """Mean over classes of the one-vs-rest AUC of that class's probability column."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = probs.shape[1]
    missing = sorted(set(range(n_classes)) - set(labels.tolist()))
    if missing:
        raise ValueError(f"classes {missing} absent from labels")
    return float(np.mean([roc_auc(probs[:, c], labels == c) for c in range(n_classes)]))


def recording_auc(probs, labels) -> float:
    """Binary AUC on p(class 1) for two classes, macro one-vs-rest otherwise."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("expected an (N, C) probability matrix")
    if probs.shape[1] == 2:
        return roc_auc(probs[:, 1], np.asarray(labels) == 1)
    return macro_ovr_auc(probs, labels)


def auc_of(examples) -> float:
    """AUC over :class:`ScoredExample` items (scalar scores or probability vectors)."""
    scores = [np.atleast_1d(np.asarray(e.score, dtype=np.float64)) for e in examples]
    labels = [e.label for e in examples]
    if scores and scores[0].size > 1:
        return recording_auc(np.stack(scores), labels)
    return roc_auc(np.concatenate(scores), labels)

"""Accuracy, macro-F1 and exact pairwise AUROC, plus per-case evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UndefinedMetricError
from .prompts import CASES, MissingCase


def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError(f"need equal, non-empty inputs; got {preds.shape} and {labels.shape}")
    return float(np.mean(preds == labels))


def f1_macro(preds, labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over bit-vector predictions; 0/0 counts as 0."""
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    p = np.asarray(preds, dtype=bool).reshape(-1, num_classes)
    y = np.asarray(labels, dtype=bool).reshape(-1, num_classes)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} != label shape {y.shape}")
    tp = (p & y).sum(axis=0)
    fp = (p & ~y).sum(axis=0)
    fn = (~p & y).sum(axis=0)
    denom = 2 * tp + fp + fn
    # 2PR/(P+R) == 2TP/(2TP+FP+FN)
    f1 = np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    return float(f1.mean())


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC over all positive/negative pairs, ties count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative label")
    diff = pos[:, None] - neg[None, :]
    wins = (diff > 0).sum() + 0.5 * (diff == 0).sum()
    return float(wins / (pos.size * neg.size))


METRICS = ("accuracy", "f1_macro", "auroc")


@dataclass
class Evaluation:
    metric: str
    overall: float
    per_case: dict[MissingCase, float] = field(default_factory=dict)
    counts: dict[MissingCase, int] = field(default_factory=dict)


def _score(metric: str, logits: np.ndarray, labels: list, num_classes: int) -> float:
    if metric == "accuracy":
        return accuracy(np.argmax(logits, axis=1), labels)
    if metric == "f1_macro":
        return f1_macro(logits > 0.0, labels, num_classes)
    if metric == "auroc":
        # binary task: score = margin of class 1 (or the sole logit)
        score = logits[:, -1] - logits[:, 0] if logits.shape[1] > 1 else logits[:, 0]
        return auroc(score, labels)
    raise ValueError(f"unknown metric {metric!r}")


def evaluate(model, samples: Sequence, metric: str = "accuracy") -> Evaluation:
    """Score ``model`` on case-labelled ``samples`` overall and per missing case.

    ``model`` needs a ``logits(sample) -> 1-D array`` method.
    """
    if not samples:
        raise ValueError("empty test set")
    logits = np.stack([model.logits(s) for s in samples])
    labels = [s.label for s in samples]
    c = logits.shape[1]
    result = Evaluation(metric, _score(metric, logits, labels, c))
    for case in CASES:
        idx = [i for i, s in enumerate(samples) if s.case is case]
        if not idx:
            continue
        result.counts[case] = len(idx)
        try:
            result.per_case[case] = _score(metric, logits[idx], [labels[i] for i in idx], c)
        except UndefinedMetricError:
            result.per_case[case] = float("nan")
    return result

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from misprompt.data import gen_synthetic
from misprompt.errors import UndefinedMetricError
from misprompt.metrics import accuracy, auroc, evaluate, f1_macro
from misprompt.prompts import CASES, MissingCase, PromptMode

from conftest import mixed_samples, tiny_model


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([1, 0], [0, 1]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75
    with pytest.raises(ValueError):
        accuracy([], [])


def test_f1_examples():
    y = [[1, 0], [0, 1], [1, 1]]
    assert f1_macro(y, y, 2) == 1.0
    # class 1 never predicted and never present: 0/0 counts as 0
    assert f1_macro([[1, 0]], [[1, 0]], 2) == 0.5
    # class 0: TP/FP/FN = 1/1/0, class 1: 1/0/1
    preds, labels = [[1, 1], [1, 0]], [[1, 1], [0, 1]]
    assert f1_macro(preds, labels, 2) == pytest.approx(2 / 3, abs=1e-6)
    with pytest.raises(ValueError):
        f1_macro([], [], 0)


def test_auroc_examples():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auroc([0.5] * 6, [0, 1] * 3) == 0.5
    assert auroc([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1]) == 1.0
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])


scores_labels = st.integers(2, 30).flatmap(lambda n: st.tuples(
    st.lists(st.integers(-80, 80).map(lambda k: k / 8), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@settings(max_examples=100, deadline=None)
@given(scores_labels)
def test_auroc_monotone_invariance_and_antisymmetry(sl):
    s, y = np.array(sl[0]), np.array(sl[1])
    assume(0 < y.sum() < len(y))
    a = auroc(s, y)
    assert auroc(np.exp(s / 3) * 2 + 1, y) == a
    if len(set(s.tolist())) == len(s):
        assert a + auroc(-s, y) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    n, c = int(rng.integers(2, 20)), int(rng.integers(1, 5))
    p, y = rng.integers(0, 2, size=(n, c)), rng.integers(0, 2, size=(n, c))
    perm = rng.permutation(n)
    assert f1_macro(p[perm], y[perm], c) == f1_macro(p, y, c)
    assert accuracy(p[perm, 0], y[perm, 0]) == accuracy(p[:, 0], y[:, 0])


def test_evaluate_complete_only_has_one_case():
    model = tiny_model(PromptMode.ATTENTION)
    ev = evaluate(model, gen_synthetic(8, seed=0))
    assert list(ev.per_case) == [MissingCase.COMPLETE] and ev.counts[MissingCase.COMPLETE] == 8


def test_evaluate_deterministic_and_weighted():
    model = tiny_model(PromptMode.INPUT, seed=3)
    data = mixed_samples(15, seed=3)
    a, b = evaluate(model, data), evaluate(model, data)
    assert a == b
    weighted = sum(a.per_case[c] * a.counts[c] for c in CASES) / len(data)
    assert a.overall == pytest.approx(weighted, abs=1e-12)


def test_evaluate_auroc_and_f1():
    model = tiny_model(PromptMode.ATTENTION, num_classes=2)
    data = mixed_samples(12, seed=1, classes=2)
    assert 0.0 <= evaluate(model, data, "auroc").overall <= 1.0
    multi = [replace(s, label=(s.label, 1 - s.label)) for s in data]
    ev = evaluate(model, multi, "f1_macro")
    assert 0.0 <= ev.overall <= 1.0 and set(ev.per_case) == set(CASES)
    with pytest.raises(ValueError):
        evaluate(model, [], "accuracy")

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmfall.errors import ContractError, UndefinedMetricError
from mmfall.metrics import auc_roc, binary_metrics, confusion_matrix, evaluate_predictions, roc_curve


def pairwise_auc(p, y):
    pos = [s for s, t in zip(p, y) if t == 1]
    neg = [s for s, t in zip(p, y) if t != 1]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return total / (len(pos) * len(neg))


def test_binary_examples():
    m = binary_metrics([0.9, 0.1], [1, 0])
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)
    m = binary_metrics([0.1, 0.2, 0.3], [1, 0, 1])
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
    m = binary_metrics([0.9, 0.8, 0.4, 0.1], [1, 0, 1, 0])
    assert (m.tp, m.fp, m.fn, m.tn) == (1, 1, 1, 1)
    assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)
    with pytest.raises(ContractError):
        binary_metrics([], [])


def test_threshold_is_inclusive():
    assert binary_metrics([0.5], [1]).tp == 1
    assert binary_metrics([0.5], [1], threshold=0.6).fn == 1


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_f1_properties(pairs):
    p, y = zip(*pairs)
    m = binary_metrics(p, y)
    if m.recall == 0:
        assert m.f1 == 0
    assert (m.f1 == 1.0) == (m.precision == 1.0 and m.recall == 1.0)
    assert sum(map(sum, m.confusion)) == len(p)


def test_auc_examples():
    assert auc_roc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc_roc([0.4] * 5, [1, 0, 1, 0, 0]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auc_roc([0.1, 0.2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 1)), min_size=2, max_size=200))
def test_auc_matches_pairwise_oracle(pairs):
    p, y = zip(*pairs)
    if len(set(y)) < 2:
        return
    p = [v / 8 for v in p]   # coarse grid forces plenty of ties
    assert auc_roc(p, y) == pytest.approx(pairwise_auc(p, y), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=2, max_size=80))
def test_roc_points_monotone(pairs):
    p, y = zip(*pairs)
    if len(set(y)) < 2:
        return
    pts = np.array(roc_curve(p, y))
    assert (np.diff(pts, axis=0) >= 0).all()
    assert tuple(pts[0]) == (0.0, 0.0) and tuple(pts[-1]) == (1.0, 1.0)


def test_confusion_examples():
    np.testing.assert_array_equal(confusion_matrix([0, 1, 5], [0, 1, 5]), np.diag([1, 1, 0, 0, 0, 1]))
    assert not confusion_matrix([], []).any()
    c = confusion_matrix([0, 1, 1], [0, 0, 1])
    assert (c[0, 0], c[0, 1], c[1, 1], c.sum()) == (1, 1, 1, 3)
    with pytest.raises(ContractError):
        confusion_matrix([6], [0])


def test_report_serialisation(tmp_path):
    rep = evaluate_predictions([0.9, 0.2, 0.7], [1, 0, 0], act_pred=[3, 0, 1], y_act=[3, 0, 0], loss=0.25)
    d = json.loads(rep.to_json())
    assert d["auc_roc"] == 1.0 and d["n_samples"] == 3 and d["loss"] == 0.25
    assert sum(map(sum, d["confusion_activity"])) == 3
    rep.write_roc_csv(tmp_path / "roc.csv")
    rows = list(csv.reader(open(tmp_path / "roc.csv")))
    assert rows[0] == ["fpr", "tpr"] and len(rows) == len(rep.roc_points) + 1
    single = evaluate_predictions([0.1, 0.2], [0, 0])
    assert single.auc_roc is None and single.roc_points == []

"""Evaluation metrics and the serialisable evaluation report."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, UndefinedMetricError


@dataclass
class BinaryMetrics:
    precision: float
    recall: float
    f1: float
    confusion: list        # [[TN, FP], [FN, TP]]; rows are the truth

    @property
    def tp(self) -> int:
        return self.confusion[1][1]

    @property
    def fp(self) -> int:
        return self.confusion[0][1]

    @property
    def fn(self) -> int:
        return self.confusion[1][0]

    @property
    def tn(self) -> int:
        return self.confusion[0][0]


def _ratio(num, den) -> float:
    return float(num) / float(den) if den else 0.0


def binary_metrics(p, y, threshold: float = 0.5) -> BinaryMetrics:
    """Precision, recall and F1 with ``p >= threshold`` counted as positive.

    Empty denominators yield 0.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if p.size == 0:
        raise ContractError("binary_metrics needs at least one sample")
    pred = p >= threshold
    truth = y == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    return BinaryMetrics(precision, recall, f1, [[tn, fp], [fn, tp]])


def roc_curve(p, y) -> list[tuple[float, float]]:
    """ROC points from a sweep over the unique scores, highest first.

    Starts at (0, 0) and ends at (1, 1); tied scores move both rates in one
    step, which is what gives tied pairs half credit under the trapezoid.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y != 1))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC/AUC needs both classes present")
    order = np.argsort(-p, kind="mergesort")
    ps, ys = p[order], (y[order] == 1)
    tps = np.cumsum(ys)
    fps = np.cumsum(~ys)
    last = np.r_[np.nonzero(np.diff(ps))[0], ps.size - 1]   # last index of each score group
    fpr = np.r_[0.0, fps[last] / n_neg]
    tpr = np.r_[0.0, tps[last] / n_pos]
    return list(zip(fpr.tolist(), tpr.tolist()))


def auc_roc(p, y) -> float:
    pts = np.array(roc_curve(p, y))
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


def confusion_matrix(pred, truth, n_classes: int = 6) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if pred.shape != truth.shape:
        raise ContractError(f"pred/truth lengths differ: {pred.size} vs {truth.size}")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ContractError(f"{name} holds class indices outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return counts


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    auc_roc: float | None
    threshold: float
    confusion_fall: list
    confusion_activity: list | None
    roc_points: list
    n_samples: int
    loss: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write_json(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def write_roc_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr"])
            for fpr, tpr in self.roc_points:
                w.writerow([repr(fpr), repr(tpr)])


def evaluate_predictions(p_fall, y_fall, act_pred=None, y_act=None, threshold: float = 0.5,
                         loss: float | None = None) -> EvalReport:
    bm = binary_metrics(p_fall, y_fall, threshold)
    try:
        roc = roc_curve(p_fall, y_fall)
        auc = auc_roc(p_fall, y_fall)
    except UndefinedMetricError:
        roc, auc = [], None
    conf_act = None
    if act_pred is not None:
        conf_act = confusion_matrix(act_pred, y_act).tolist()
    return EvalReport(precision=bm.precision, recall=bm.recall, f1=bm.f1, auc_roc=auc,
                      threshold=float(threshold), confusion_fall=bm.confusion,
                      confusion_activity=conf_act, roc_points=[list(pt) for pt in roc],
                      n_samples=int(np.asarray(y_fall).size), loss=loss)

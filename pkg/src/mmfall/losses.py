"""Training objectives: focal loss, BCE, cross-entropy and their weighted sum."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autograd import Tensor, as_tensor
from .errors import ConfigError, ContractError

P_MIN = 1e-7
P_MAX = 1.0 - 1e-7


@dataclass
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 0.3
    alpha: float = 0.25
    gamma: float = 2.0
    main_loss: str = "focal"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("LossConfig.lambda1/lambda2 must be non-negative")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"LossConfig.alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"LossConfig.gamma must be non-negative, got {self.gamma}")
        if self.main_loss not in ("focal", "bce"):
            raise ConfigError(f"LossConfig.main_loss must be 'focal' or 'bce', got {self.main_loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown loss config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


def _binary_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise ContractError(f"binary labels must be 0 or 1, got {np.unique(y)}")
    return y.astype(np.float64)


def _reduce(per_sample: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return per_sample.mean()
    if reduction == "sum":
        return per_sample.sum()
    if reduction == "none":
        return per_sample
    raise ConfigError(f"unknown reduction {reduction!r}")


def focal_loss(p, y, alpha: float = 0.25, gamma: float = 2.0, reduction: str = "mean") -> Tensor:
    """``-alpha_t (1 - p_t)^gamma log(p_t)`` averaged over samples.

    ``alpha_t`` is ``alpha`` for positives and ``1 - alpha`` for negatives;
    ``p`` is clamped to ``[1e-7, 1 - 1e-7]`` before the log.
    """
    p = as_tensor(p).clip(P_MIN, P_MAX)
    y = _binary_labels(y)
    p_t = p * y + (1.0 - p) * (1.0 - y)
    alpha_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    per = -((1.0 - p_t) ** gamma) * p_t.log() * alpha_t
    return _reduce(per, reduction)


def binary_cross_entropy(p, y, reduction: str = "mean") -> Tensor:
    p = as_tensor(p).clip(P_MIN, P_MAX)
    y = _binary_labels(y)
    per = -(p.log() * y + (1.0 - p).log() * (1.0 - y))
    return _reduce(per, reduction)


def cross_entropy(logits, y, reduction: str = "mean") -> Tensor:
    """Mean negative log-softmax of the true class (log-sum-exp stabilised)."""
    logits = as_tensor(logits)
    y = np.asarray(y)
    n_classes = logits.shape[-1]
    if y.shape != logits.shape[:-1]:
        raise ContractError(f"labels {y.shape} do not match logits {logits.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes or not np.issubdtype(y.dtype, np.integer)):
        raise ContractError(f"class indices must be integers in [0, {n_classes}), got {np.unique(y)}")
    onehot = np.eye(n_classes)[y]
    per = -(logits.log_softmax(axis=-1) * onehot).sum(axis=-1)
    return _reduce(per, reduction)


def _mixed(fn, y_a, y_b, lam):
    """Per-sample ``lam * fn(y_a) + (1 - lam) * fn(y_b)``, mean-reduced."""
    if y_b is None or lam is None or np.all(lam == 1.0):
        return fn(y_a).mean()
    lam = np.asarray(lam, dtype=np.float64)
    return (fn(y_a) * lam + fn(y_b) * (1.0 - lam)).mean()


def composite_loss(output, labels, cfg: LossConfig) -> Tensor:
    """``lambda1 * main + lambda2 * aux`` where main is focal or BCE per ``cfg``.

    ``labels`` needs ``y_fall`` and ``y_act``; when it also carries
    ``lam``/``y_fall_b``/``y_act_b`` (mixup), each term is the
    lam-weighted combination of the losses against both label sets.
    Terms with zero weight, and the aux term of a model without an
    activity head, are left out entirely.
    """
    lam = getattr(labels, "lam", None)
    total = None
    if cfg.lambda1 != 0.0:
        if output.p_fall is None:
            raise ContractError("main loss weighted but the model has no fall head")
        if cfg.main_loss == "focal":
            def main(y):
                return focal_loss(output.p_fall, y, cfg.alpha, cfg.gamma, reduction="none")
        else:
            def main(y):
                return binary_cross_entropy(output.p_fall, y, reduction="none")
        term = _mixed(main, labels.y_fall, getattr(labels, "y_fall_b", None), lam)
        total = term if cfg.lambda1 == 1.0 else term * cfg.lambda1
    if cfg.lambda2 != 0.0 and output.activity_logits is not None:
        def aux(y):
            return cross_entropy(output.activity_logits, np.asarray(y), reduction="none")
        term = _mixed(aux, labels.y_act, getattr(labels, "y_act_b", None), lam)
        term = term if cfg.lambda2 == 1.0 else term * cfg.lambda2
        total = term if total is None else total + term
    if total is None:
        raise ContractError("composite loss has no active term")
    return total


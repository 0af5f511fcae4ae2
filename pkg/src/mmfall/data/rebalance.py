"""Minority-class rebalancing of the training partition."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..errors import ConfigError, RebalanceError
from .splits import DatasetSplit


def _classes(y):
    y = np.asarray(y)
    labels, counts = np.unique(y, return_counts=True)
    if labels.size < 2:
        raise RebalanceError("rebalancing needs both classes; the minority class is empty")
    minority = labels[np.argmin(counts)]
    return minority, int(counts.min()), int(counts.max())


def _n_needed(n_major: int, target_ratio: float) -> int:
    if target_ratio < 1.0:
        raise ConfigError(f"target_ratio is majority:minority and must be >= 1, got {target_ratio}")
    return math.ceil(n_major / target_ratio)


def oversample(windows, target_ratio: float = 1.0, seed: int = 0) -> list:
    """Duplicate random minority windows until majority/minority <= ``target_ratio``."""
    y = [w.y_fall for w in windows]
    minority, n_min, n_maj = _classes(y)
    extra = _n_needed(n_maj, target_ratio) - n_min
    if extra <= 0:
        return list(windows)
    pool = [w for w in windows if w.y_fall == minority]
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(pool), size=extra)
    return list(windows) + [pool[i] for i in picks]


def smote(X: np.ndarray, y: np.ndarray, target_ratio: float = 1.0, k: int = 5, seed: int = 0):
    """Synthetic minority oversampling on feature rows.

    Each synthetic row is ``x + u * (neighbour - x)`` with ``u ~ U(0, 1)`` and
    the neighbour drawn from the ``k`` nearest minority rows of ``x``
    (Euclidean, ``x`` itself excluded).  Returns the augmented ``(X, y)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    minority, n_min, n_maj = _classes(y)
    extra = _n_needed(n_maj, target_ratio) - n_min
    if extra <= 0:
        return X.copy(), y.copy()
    M = X[y == minority]
    rng = np.random.default_rng(seed)
    if len(M) == 1:
        neighbours = np.zeros((1, 1), dtype=np.int64)
    else:
        kk = min(k, len(M) - 1)
        d2 = ((M[:, None, :] - M[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(d2, np.inf)
        neighbours = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    base = rng.integers(len(M), size=extra)
    pick = neighbours[base, rng.integers(neighbours.shape[1], size=extra)]
    u = rng.random((extra, 1))
    synth = M[base] + u * (M[pick] - M[base])
    return np.vstack([X, synth]), np.concatenate([y, np.full(extra, minority, dtype=y.dtype)])


def rebalance(train_windows, mode: str = "none", target_ratio: float = 1.0, k: int = 5, seed: int = 0,
              sample_rate_hz: float = 200.0):
    """Rebalance training windows.

    ``none`` and ``oversample`` return windows; ``smote`` works in the
    handcrafted feature space and returns ``(X, y)`` feature rows.
    """
    if mode == "none":
        return list(train_windows)
    if mode == "oversample":
        return oversample(train_windows, target_ratio, seed)
    if mode == "smote":
        from ..baselines import feature_matrix
        X = feature_matrix(train_windows, sample_rate_hz)
        y = np.array([w.y_fall for w in train_windows])
        return smote(X, y, target_ratio, k, seed)
    raise ConfigError(f"unknown rebalance mode {mode!r}")


def rebalance_split(split: DatasetSplit, mode: str = "oversample", target_ratio: float = 1.0,
                    seed: int = 0) -> DatasetSplit:
    """Return a copy of ``split`` with only the training partition rebalanced."""
    if mode == "smote":
        raise ConfigError("smote yields feature rows, not windows; call rebalance() on the training set")
    return replace(split, train=rebalance(split.train, mode, target_ratio, seed=seed),
                   val=list(split.val), test=list(split.test))

"""Classical comparison methods: the 2 g threshold rule and KNN over handcrafted features."""

from __future__ import annotations

import csv
from functools import lru_cache

import numpy as np

from .data.windows import SensorWindow
from .errors import ContractError

FALL = 1
NO_FALL = 0

CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz", "acc_mag")
STATS = ("mean", "std", "max", "min", "rms", "skew", "kurtosis", "median", "q1", "q3", "iqr",
         "range", "cv", "dominant_freq_hz", "band_low", "band_mid", "band_high")
FEATURE_NAMES = tuple(f"{c}_{s}" for c in CHANNELS for s in STATS)
LOW_HZ = 1.0
MID_HZ = 5.0


def threshold_detect(w: SensorWindow, threshold_g: float = 2.0) -> int:
    """FALL iff the peak acceleration magnitude reaches ``threshold_g`` (inclusive)."""
    return FALL if float(np.max(np.linalg.norm(w.A, axis=1))) >= threshold_g else NO_FALL


@lru_cache(maxsize=8)
def _dft_matrix(T: int) -> np.ndarray:
    """Rows k = 0..T//2 of the DFT: X_k = sum_n x_n exp(-2 pi i k n / T)."""
    k = np.arange(T // 2 + 1)[:, None]
    n = np.arange(T)[None, :]
    return np.exp(-2j * np.pi * k * n / T)


def spectrum(x: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided power spectrum ``(freqs, power)`` by direct DFT.

    Interior bins are doubled so that the bins account for the full
    two-sided energy.  A constant signal has exactly zero non-DC power.
    """
    T = x.shape[0]
    freqs = np.arange(T // 2 + 1) * fs / T
    power = np.abs(_dft_matrix(T) @ x) ** 2
    if np.ptp(x) == 0:
        power[1:] = 0.0
    double = np.ones_like(power)
    double[1:(T + 1) // 2] = 2.0
    return freqs, power * double


def band_energies(x: np.ndarray, fs: float) -> tuple[float, float, float]:
    """Energy ratios in [0, 1), [1, 5] and (5, fs/2] Hz; an all-zero signal counts as low."""
    freqs, power = spectrum(x, fs)
    low = power[freqs < LOW_HZ].sum()
    mid = power[(freqs >= LOW_HZ) & (freqs <= MID_HZ)].sum()
    high = power[freqs > MID_HZ].sum()
    total = low + mid + high
    if total == 0.0:
        return 1.0, 0.0, 0.0
    return float(low / total), float(mid / total), float(high / total)


def dominant_frequency(x: np.ndarray, fs: float) -> float:
    """Frequency of the strongest non-DC bin; lowest bin wins ties, 0 when there is no AC energy."""
    freqs, power = spectrum(x, fs)
    if power.size < 2 or power[1:].max() == 0.0:
        return 0.0
    return float(freqs[1 + int(np.argmax(power[1:]))])


def channel_features(x: np.ndarray, fs: float) -> list[float]:
    mean = float(x.mean())
    constant = np.ptp(x) == 0
    std = 0.0 if constant else float(x.std(ddof=1))
    d = x - mean
    m2 = float(np.mean(d ** 2))
    if constant or m2 == 0.0:
        skew = kurt = 0.0
    else:
        skew = float(np.mean(d ** 3) / m2 ** 1.5)
        kurt = float(np.mean(d ** 4) / m2 ** 2 - 3.0)
    q1, median, q3 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    mx, mn = float(x.max()), float(x.min())
    # a mean at rounding-noise level would make cv explode; treat it as zero
    cv = 0.0 if abs(mean) <= 1e-12 * max(1.0, float(np.abs(x).max())) else std / abs(mean)
    low, mid, high = band_energies(x, fs)
    return [mean, std, mx, mn, float(np.sqrt(np.mean(x ** 2))), skew, kurt, median, q1, q3,
            q3 - q1, mx - mn, cv, dominant_frequency(x, fs), low, mid, high]


def extract_features(w: SensorWindow, sample_rate_hz: float = 200.0) -> np.ndarray:
    """Handcrafted feature vector in :data:`FEATURE_NAMES` order."""
    if w.A.shape[0] < 4:
        raise ContractError(f"feature extraction needs T >= 4, got {w.A.shape[0]}")
    if not (np.isfinite(w.A).all() and np.isfinite(w.G).all()):
        raise ContractError("feature extraction got non-finite motion samples")
    cols = [w.A[:, 0], w.A[:, 1], w.A[:, 2], w.G[:, 0], w.G[:, 1], w.G[:, 2], np.linalg.norm(w.A, axis=1)]
    return np.array([v for c in cols for v in channel_features(np.asarray(c, dtype=np.float64), sample_rate_hz)])


def feature_matrix(windows, sample_rate_hz: float = 200.0) -> np.ndarray:
    return np.stack([extract_features(w, sample_rate_hz) for w in windows])


def write_feature_csv(path, X: np.ndarray, y=None):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(list(FEATURE_NAMES) + (["y_fall"] if y is not None else []))
        for i, row in enumerate(X):
            wr.writerow([repr(float(v)) for v in row] + ([int(y[i])] if y is not None else []))


class Standardizer:
    """z-score using training statistics; zero-variance columns keep unit scale."""

    def __init__(self, X: np.ndarray):
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def knn_classify(train_features, train_labels, query, k: int = 5, standardize: bool = True):
    """Majority vote among the ``k`` nearest training rows; ties go to FALL.

    ``query`` may be one row or a matrix; returns an int or an int array.
    Equal distances are ordered by training index.
    """
    X = np.asarray(train_features, dtype=np.float64)
    y = np.asarray(train_labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError("knn_classify needs a non-empty 2-D training matrix")
    if not 1 <= k <= X.shape[0]:
        raise ContractError(f"k={k} must lie in [1, {X.shape[0]}]")
    Q = np.asarray(query, dtype=np.float64)
    single = Q.ndim == 1
    Q = np.atleast_2d(Q)
    if standardize:
        z = Standardizer(X)
        X, Q = z(X), z(Q)
    d2 = ((Q[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    votes = (y[nearest] == FALL).sum(axis=1)
    pred = np.where(2 * votes >= k, FALL, NO_FALL)
    return int(pred[0]) if single else pred

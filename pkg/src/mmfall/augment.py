"""Training-time augmentation of motion windows.

jitter, scale, rotate_xy and time_shift touch A and G only; mixup blends
whole windows (physio included) and keeps both label sets.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .data.windows import Batch, SensorWindow
from .errors import ConfigError, DimensionError

KINDS = ("jitter", "scale", "rotate_xy", "time_shift")
LAM_EPS = 1e-6                                   # keeps the mixup weight strictly inside (0, 1)


@dataclass
class AugmentConfig:
    jitter_sigma: float = 0.03
    scale_sigma: float = 0.1
    rotation_range_deg: float = 30.0
    shift_max: int = 10
    mixup_alpha: float = 0.2
    per_transform_prob: float = 0.5
    enabled: bool = True
    use_jitter: bool = True
    use_scale: bool = True
    use_rotate: bool = True
    use_shift: bool = True
    use_mixup: bool = True

    def __post_init__(self):
        for name in ("jitter_sigma", "scale_sigma", "rotation_range_deg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if int(self.shift_max) != self.shift_max or self.shift_max < 0:
            raise ConfigError(f"shift_max must be a non-negative integer, got {self.shift_max}")
        if not 0.0 <= self.per_transform_prob <= 1.0:
            raise ConfigError(f"per_transform_prob must lie in [0, 1], got {self.per_transform_prob}")
        if self.use_mixup and self.mixup_alpha <= 0:
            raise ConfigError(f"mixup_alpha must be > 0 when mixup is enabled, got {self.mixup_alpha}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown augment keys: {sorted(unknown)}")
        return cls(**d)

    def kind_enabled(self, kind: str) -> bool:
        flag = {"jitter": "use_jitter", "scale": "use_scale", "rotate_xy": "use_rotate",
                "time_shift": "use_shift", "mixup": "use_mixup"}[kind]
        return getattr(self, flag)


def rotate_xy(x: np.ndarray, theta: float) -> np.ndarray:
    """Rotate the (x, y) columns of a (T, 3) array by ``theta`` radians; z is copied."""
    c, s = np.cos(theta), np.sin(theta)
    out = x.copy()
    out[:, 0] = c * x[:, 0] - s * x[:, 1]
    out[:, 1] = s * x[:, 0] + c * x[:, 1]
    return out


def time_shift(x: np.ndarray, s: int) -> np.ndarray:
    """Shift along time by ``s`` steps (positive = later) with edge-value padding."""
    T = x.shape[0]
    if s == 0:
        return x.copy()
    s = max(-T, min(T, s))
    idx = np.clip(np.arange(T) - s, 0, T - 1)
    return x[idx]


def apply_augmentation(w: SensorWindow, kind: str, cfg: AugmentConfig, rng: np.random.Generator,
                       **fixed) -> SensorWindow:
    """Apply one motion transform.

    ``fixed`` may pin the random draw for testing: ``theta_deg`` for
    rotate_xy, ``shift`` for time_shift.
    """
    A, G = w.A, w.G
    if kind == "jitter":
        A = A + rng.normal(0.0, cfg.jitter_sigma, size=A.shape)
        G = G + rng.normal(0.0, cfg.jitter_sigma, size=G.shape)
    elif kind == "scale":
        A = A * rng.normal(1.0, cfg.scale_sigma, size=(1, 3))
        G = G * rng.normal(1.0, cfg.scale_sigma, size=(1, 3))
    elif kind == "rotate_xy":
        deg = fixed.get("theta_deg")
        if deg is None:
            deg = rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg)
        theta = np.deg2rad(deg)
        A, G = rotate_xy(A, theta), rotate_xy(G, theta)
    elif kind == "time_shift":
        s = fixed.get("shift")
        if s is None:
            s = int(rng.integers(-cfg.shift_max, cfg.shift_max + 1))
        A, G = time_shift(A, s), time_shift(G, s)
    else:
        raise ConfigError(f"unknown augmentation {kind!r}; expected one of {KINDS}")
    return w.replace(A=A, G=G)


def mixup(a: SensorWindow, b: SensorWindow, alpha: float, rng: np.random.Generator,
          lam: float | None = None):
    """Blend two windows as ``lam * a + (1 - lam) * b``, ``lam ~ Beta(alpha, alpha)``.

    Returns ``(window, lam, ((y_fall_a, y_act_a), (y_fall_b, y_act_b)))``; the
    blended window carries a's labels.  A drawn ``lam`` is clipped into
    ``[LAM_EPS, 1 - LAM_EPS]``; an explicit ``lam`` is used as given.
    """
    if a.A.shape != b.A.shape or a.G.shape != b.G.shape or a.P.shape != b.P.shape:
        raise DimensionError(f"mixup needs equal shapes, got {a.A.shape} and {b.A.shape}")
    if lam is None:
        lam = float(np.clip(rng.beta(alpha, alpha), LAM_EPS, 1.0 - LAM_EPS))
    blend = a.replace(A=lam * a.A + (1.0 - lam) * b.A, G=lam * a.G + (1.0 - lam) * b.G,
                      P=lam * a.P + (1.0 - lam) * b.P)
    return blend, lam, ((a.y_fall, a.y_act), (b.y_fall, b.y_act))


def augment_windows(windows, cfg: AugmentConfig, seed) -> Batch:
    """Augment a list of windows into a training batch.

    Window ``i`` uses the substream ``default_rng([*seed, i])``, so the
    result does not depend on how windows are grouped for processing.
    """
    seed = list(np.atleast_1d(seed))
    if not cfg.enabled or cfg.per_transform_prob == 0.0:
        return Batch.from_windows(windows)
    out, partners, lams = [], [], []
    for i, w in enumerate(windows):
        rng = np.random.default_rng(seed + [i])
        for kind in KINDS:
            if cfg.kind_enabled(kind) and rng.random() < cfg.per_transform_prob:
                w = apply_augmentation(w, kind, cfg, rng)
        partner, lam = w, 1.0
        if cfg.use_mixup and len(windows) > 1 and rng.random() < cfg.per_transform_prob:
            j = int(rng.integers(len(windows) - 1))
            partner = windows[j + (j >= i)]
            w, lam, _ = mixup(w, partner, cfg.mixup_alpha, rng)
        out.append(w)
        partners.append(partner)
        lams.append(lam)
    return Batch.from_windows(out, lam=lams, partners=partners)


def augment_batch(batch: Batch, cfg: AugmentConfig, rng: np.random.Generator) -> Batch:
    """Augment a stacked batch; the per-window substream seed is drawn from ``rng``."""
    if not cfg.enabled or cfg.per_transform_prob == 0.0:
        return batch
    seed = int(rng.integers(2**62))
    windows = [SensorWindow(A=batch.A[i], G=batch.G[i], P=batch.P[i], y_fall=int(batch.y_fall[i]),
                            y_act=int(batch.y_act[i]), subject_id="") for i in range(len(batch))]
    return augment_windows(windows, cfg, seed)

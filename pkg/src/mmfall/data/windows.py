"""Window and batch containers shared by the pipeline, model and training."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DimensionError

ACTIVITIES = ("stationary", "walking", "running", "falling", "lying", "sitting")
ACTIVITY_INDEX = {name: i for i, name in enumerate(ACTIVITIES)}
FALLING = ACTIVITY_INDEX["falling"]
N_ACTIVITIES = len(ACTIVITIES)

# heart rate (bpm), SpO2 (%), skin temperature (degC), GSR (uS)
PHYSIO_BASELINE = np.array([72.0, 97.0, 33.5, 2.0])


@dataclass
class SensorWindow:
    A: np.ndarray                  # (T, 3) acceleration in g
    G: np.ndarray                  # (T, 3) angular rate in deg/s
    P: np.ndarray                  # (4,) physiological snapshot
    y_fall: int
    y_act: int
    subject_id: str
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def T(self) -> int:
        return self.A.shape[0]

    def validate(self, T: int | None = None) -> "SensorWindow":
        if self.A.ndim != 2 or self.A.shape[1] != 3 or self.G.shape != self.A.shape:
            raise DimensionError(f"window motion shapes {self.A.shape}/{self.G.shape} are not (T, 3)")
        if T is not None and self.A.shape[0] != T:
            raise DimensionError(f"window length {self.A.shape[0]} != {T}")
        if self.P.shape != (4,):
            raise DimensionError(f"physio vector shape {self.P.shape} != (4,)")
        if not (np.isfinite(self.A).all() and np.isfinite(self.G).all() and np.isfinite(self.P).all()):
            raise ContractError(f"window from subject {self.subject_id!r} holds non-finite values")
        if self.y_fall not in (0, 1) or not 0 <= self.y_act < N_ACTIVITIES:
            raise ContractError(f"bad labels y_fall={self.y_fall} y_act={self.y_act}")
        if self.y_act == FALLING and self.y_fall != 1:
            raise ContractError("a window labelled 'falling' must have y_fall=1")
        return self

    def replace(self, **changes) -> "SensorWindow":
        kw = dict(A=self.A, G=self.G, P=self.P, y_fall=self.y_fall, y_act=self.y_act,
                  subject_id=self.subject_id, meta=dict(self.meta))
        kw.update(changes)
        return SensorWindow(**kw)


@dataclass
class Batch:
    """Stacked windows.

    ``lam`` together with the ``*_b`` label arrays carries mixup pairs:
    the loss for sample ``i`` is ``lam[i] * loss(y_a) + (1 - lam[i]) * loss(y_b)``.
    Without mixup ``lam`` is all ones and the ``*_b`` labels equal the primary ones.
    """

    A: np.ndarray        # (B, T, 3)
    G: np.ndarray        # (B, T, 3)
    P: np.ndarray        # (B, 4)
    y_fall: np.ndarray   # (B,) int
    y_act: np.ndarray    # (B,) int
    y_fall_b: np.ndarray
    y_act_b: np.ndarray
    lam: np.ndarray      # (B,) float

    def __len__(self):
        return self.A.shape[0]

    @property
    def mixed(self) -> bool:
        return bool(np.any(self.lam != 1.0))

    @classmethod
    def from_windows(cls, windows, lam=None, partners=None) -> "Batch":
        if not windows:
            raise ContractError("cannot build a batch from zero windows")
        A = np.stack([w.A for w in windows])
        G = np.stack([w.G for w in windows])
        P = np.stack([w.P for w in windows])
        yf = np.array([w.y_fall for w in windows], dtype=np.int64)
        ya = np.array([w.y_act for w in windows], dtype=np.int64)
        if partners is None:
            yf_b, ya_b = yf.copy(), ya.copy()
        else:
            yf_b = np.array([p.y_fall for p in partners], dtype=np.int64)
            ya_b = np.array([p.y_act for p in partners], dtype=np.int64)
        lam = np.ones(len(windows)) if lam is None else np.asarray(lam, dtype=np.float64)
        return cls(A, G, P, yf, ya, yf_b, ya_b, lam)

"""Raw recordings: SisFall / UCI-HAR ingestion, unit normalisation, windowing."""

from __future__ import annotations

import logging
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import (AlignmentError, ConfigError, ContractError, ImputationError, LabelingError,
                      NormalizationError, ParseError)
from .windows import ACTIVITY_INDEX, FALLING, PHYSIO_BASELINE, SensorWindow

log = logging.getLogger(__name__)

SISFALL_RATE_HZ = 200.0
UCIHAR_RATE_HZ = 50.0
ACC_COUNTS_PER_G = 16384.0
GYRO_COUNTS_PER_DPS = 131.0
FALL_HALF_WIDTH = 50          # samples either side of the impact peak labelled as the fall event

_A = ACTIVITY_INDEX
# SisFall ADL codes -> activity class.
SISFALL_ADL = {
    "D01": _A["walking"], "D02": _A["walking"], "D03": _A["running"], "D04": _A["running"],
    "D05": _A["walking"], "D06": _A["walking"], "D07": _A["sitting"], "D08": _A["sitting"],
    "D09": _A["sitting"], "D10": _A["sitting"], "D11": _A["sitting"], "D12": _A["lying"],
    "D13": _A["lying"], "D14": _A["lying"], "D15": _A["stationary"], "D16": _A["stationary"],
    "D17": _A["stationary"], "D18": _A["walking"], "D19": _A["running"],
}
# SisFall fall codes -> activity performed before the fall.
SISFALL_FALL_PRE = {
    "F01": _A["walking"], "F02": _A["walking"], "F03": _A["walking"], "F04": _A["walking"],
    "F05": _A["running"], "F06": _A["walking"], "F07": _A["walking"], "F08": _A["stationary"],
    "F09": _A["stationary"], "F10": _A["stationary"], "F11": _A["stationary"], "F12": _A["stationary"],
    "F13": _A["sitting"], "F14": _A["sitting"], "F15": _A["sitting"],
}
UCIHAR_LABELS = {
    1: ("WALKING", _A["walking"]), 2: ("WALKING_UPSTAIRS", _A["walking"]),
    3: ("WALKING_DOWNSTAIRS", _A["walking"]), 4: ("SITTING", _A["sitting"]),
    5: ("STANDING", _A["stationary"]), 6: ("LAYING", _A["lying"]),
}
_UCIHAR_BY_NAME = {name.lower(): (code, act) for code, (name, act) in UCIHAR_LABELS.items()}
_UCIHAR_BY_NAME.update({"standing": (5, _A["stationary"]), "lying": (6, _A["lying"])})

_SISFALL_NAME = re.compile(r"^([A-Za-z])(\d+)_([A-Za-z0-9]+)_([A-Za-z0-9]+)$")
_SPLIT = re.compile(r"[,;\s]+")


class SegmentationWarning(UserWarning):
    pass


@dataclass
class RawRecording:
    subject_id: str
    activity_code: str
    is_fall_trial: bool
    acc: np.ndarray
    gyro: np.ndarray
    sample_rate_hz: float
    physio: np.ndarray | None = None
    source: str = "sisfall"
    normalized: bool = False
    activity: int | None = None           # fixed activity class for the whole recording
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.acc = np.asarray(self.acc, dtype=np.float64)
        self.gyro = np.asarray(self.gyro, dtype=np.float64)
        if self.acc.ndim != 2 or self.acc.shape[1] != 3 or self.gyro.shape != self.acc.shape:
            raise AlignmentError(f"acc {self.acc.shape} and gyro {self.gyro.shape} must both be (N, 3)")
        if self.acc.shape[0] < 1:
            raise AlignmentError("a recording needs at least one sample")
        if not self.sample_rate_hz > 0:
            raise ContractError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    @property
    def n_samples(self) -> int:
        return self.acc.shape[0]


# -- parsing -------------------------------------------------------------------

def parse_sisfall(path, physio_path=None) -> RawRecording:
    """Read one SisFall trial file named ``<CODE>_<SUBJECT>_<TRIAL>.txt``.

    The first three numeric columns are accelerometer counts, the next three
    gyroscope counts; further columns and trailing delimiters are ignored.
    """
    path = Path(path)
    m = _SISFALL_NAME.match(path.stem)
    if not m:
        raise ParseError(f"{path.name}: file name does not match <CODE>_<SUBJECT>_<TRIAL>")
    prefix, number, subject, trial = m.groups()
    code = f"{prefix.upper()}{int(number):02d}"
    if prefix.upper() not in ("D", "F"):
        raise LabelingError(f"{path.name}: activity code {code!r} is neither an ADL (D) nor a fall (F)")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = [t for t in _SPLIT.split(line.strip()) if t]
            if not tokens:
                continue
            if len(tokens) < 6:
                raise ParseError(f"{path.name}: expected at least 6 columns, found {len(tokens)}", line=lineno)
            try:
                rows.append([float(t) for t in tokens[:6]])
            except ValueError:
                raise ParseError(f"{path.name}: non-numeric value in {tokens[:6]}", line=lineno) from None
    if not rows:
        raise ParseError(f"{path.name}: no data rows")
    data = np.array(rows)
    physio = None
    if physio_path is not None:
        physio = np.array([float(t) for t in _SPLIT.split(Path(physio_path).read_text().strip()) if t])
        if physio.shape != (4,):
            raise ParseError(f"{physio_path}: expected 4 physiological values, found {physio.size}")
    return RawRecording(subject_id=subject, activity_code=code, is_fall_trial=prefix.upper() == "F",
                        acc=data[:, :3], gyro=data[:, 3:6], sample_rate_hz=SISFALL_RATE_HZ,
                        physio=physio, source="sisfall",
                        provenance=[f"parse_sisfall:{path.name}:trial={trial}"])


def _ucihar_label(token: str):
    token = token.strip()
    try:
        code = int(float(token))
    except ValueError:
        key = token.lower()
        if key not in _UCIHAR_BY_NAME:
            raise LabelingError(f"unknown UCI-HAR activity label {token!r}") from None
        return _UCIHAR_BY_NAME[key]
    if code not in UCIHAR_LABELS:
        raise LabelingError(f"unknown UCI-HAR activity code {code}")
    return code, UCIHAR_LABELS[code][1]


def _find_axis_file(signals_dir: Path, stem: str) -> Path:
    hits = sorted(signals_dir.glob(f"{stem}*.txt"))
    if len(hits) != 1:
        raise AlignmentError(f"{signals_dir}: expected exactly one {stem}*.txt, found {len(hits)}")
    return hits[0]


def parse_ucihar(signals_dir, labels_path, subjects_path) -> list[RawRecording]:
    """Load UCI-HAR inertial signals (one recording per row).

    Uses ``total_acc_{x,y,z}`` (g, gravity included, matching SisFall units)
    and ``body_gyro_{x,y,z}`` converted from rad/s to deg/s.
    """
    signals_dir = Path(signals_dir)
    acc = [np.loadtxt(_find_axis_file(signals_dir, f"total_acc_{ax}"), ndmin=2) for ax in "xyz"]
    gyro = [np.loadtxt(_find_axis_file(signals_dir, f"body_gyro_{ax}"), ndmin=2) for ax in "xyz"]
    shapes = {a.shape for a in acc + gyro}
    if len(shapes) != 1:
        raise AlignmentError(f"UCI-HAR axis files disagree in shape: {sorted(shapes)}")
    n_rows = acc[0].shape[0]
    labels = [ln for ln in Path(labels_path).read_text().splitlines() if ln.strip()]
    subjects = [ln.strip() for ln in Path(subjects_path).read_text().splitlines() if ln.strip()]
    if len(labels) != n_rows or len(subjects) != n_rows:
        raise AlignmentError(f"row counts differ: signals {n_rows}, labels {len(labels)}, subjects {len(subjects)}")
    acc = np.stack(acc, axis=-1)
    gyro = np.rad2deg(np.stack(gyro, axis=-1))
    recs = []
    for i in range(n_rows):
        code, act = _ucihar_label(labels[i])
        recs.append(RawRecording(subject_id=f"uci{int(float(subjects[i])):02d}",
                                 activity_code=UCIHAR_LABELS[code][0], is_fall_trial=False,
                                 acc=acc[i], gyro=gyro[i], sample_rate_hz=UCIHAR_RATE_HZ,
                                 source="ucihar", normalized=True, activity=act,
                                 provenance=[f"parse_ucihar:row={i}", "gyro:rad/s->deg/s"]))
    return recs


# -- preprocessing ---------------------------------------------------------------

@dataclass
class PreprocessConfig:
    target_rate_hz: float | None = SISFALL_RATE_HZ
    target_length: int | None = None     # resample to exactly this many samples (overrides rate)


def normalize_units(rec: RawRecording) -> RawRecording:
    """Scale raw SisFall counts to g and deg/s.  Refuses to scale twice."""
    if rec.normalized:
        raise NormalizationError(f"recording {rec.subject_id}/{rec.activity_code} is already normalised")
    return replace(rec, acc=rec.acc / ACC_COUNTS_PER_G, gyro=rec.gyro / GYRO_COUNTS_PER_DPS,
                   normalized=True,
                   provenance=rec.provenance + [f"scale:acc/{ACC_COUNTS_PER_G},gyro/{GYRO_COUNTS_PER_DPS}"])


def impute_linear(x: np.ndarray, what: str = "channel") -> np.ndarray:
    """Fill non-finite samples by linear interpolation; edges hold the nearest finite value."""
    x = np.array(x, dtype=np.float64)
    cols = x.reshape(x.shape[0], -1)
    idx = np.arange(cols.shape[0])
    for j in range(cols.shape[1]):
        ok = np.isfinite(cols[:, j])
        if ok.all():
            continue
        if not ok.any():
            raise ImputationError(f"{what} column {j} has no finite samples")
        cols[:, j] = np.interp(idx, idx[ok], cols[ok, j])
    return cols.reshape(x.shape)


def _resample(x: np.ndarray, n_out: int) -> np.ndarray:
    n_in = x.shape[0]
    if n_out == n_in:
        return x
    src = np.linspace(0.0, 1.0, n_in) if n_in > 1 else np.zeros(1)
    dst = np.linspace(0.0, 1.0, n_out)
    return np.stack([np.interp(dst, src, x[:, j]) for j in range(x.shape[1])], axis=1)


def preprocess(rec: RawRecording, cfg: PreprocessConfig | None = None) -> RawRecording:
    cfg = cfg or PreprocessConfig()
    if not rec.normalized:
        rec = normalize_units(rec)
    steps = []
    if not (np.isfinite(rec.acc).all() and np.isfinite(rec.gyro).all()):
        rec = replace(rec, acc=impute_linear(rec.acc, "acc"), gyro=impute_linear(rec.gyro, "gyro"))
        steps.append("impute:linear")
    n = rec.n_samples
    if cfg.target_length is not None:
        n_out = int(cfg.target_length)
        rate = rec.sample_rate_hz * (n_out - 1) / (n - 1) if n > 1 else rec.sample_rate_hz
    elif cfg.target_rate_hz is not None and cfg.target_rate_hz != rec.sample_rate_hz:
        n_out = int(math.floor((n - 1) * cfg.target_rate_hz / rec.sample_rate_hz)) + 1
        rate = cfg.target_rate_hz
    else:
        n_out, rate = n, rec.sample_rate_hz
    if n_out != n:
        rec = replace(rec, acc=_resample(rec.acc, n_out), gyro=_resample(rec.gyro, n_out), sample_rate_hz=rate)
        steps.append(f"resample:{n}->{n_out}")
    return replace(rec, provenance=rec.provenance + steps)


# -- segmentation ---------------------------------------------------------------

def fall_peak(rec: RawRecording) -> int:
    return int(np.argmax(np.linalg.norm(rec.acc, axis=1)))


def sample_activities(rec: RawRecording) -> np.ndarray:
    """Per-sample activity class for a recording."""
    n = rec.n_samples
    if rec.activity is not None:
        return np.full(n, rec.activity, dtype=np.int64)
    code = rec.activity_code
    if rec.is_fall_trial:
        if code not in SISFALL_FALL_PRE:
            raise LabelingError(f"unknown fall code {code!r}")
        acts = np.full(n, SISFALL_FALL_PRE[code], dtype=np.int64)
        peak = fall_peak(rec)
        lo, hi = max(0, peak - FALL_HALF_WIDTH), min(n - 1, peak + FALL_HALF_WIDTH)
        acts[lo:hi + 1] = FALLING
        acts[hi + 1:] = ACTIVITY_INDEX["lying"]
        return acts
    if code not in SISFALL_ADL:
        raise LabelingError(f"unknown ADL code {code!r}")
    return np.full(n, SISFALL_ADL[code], dtype=np.int64)


def window_activity(acts: np.ndarray) -> int:
    """Majority activity; ties go to 'falling', then to the lower class index."""
    counts = np.bincount(acts, minlength=len(ACTIVITY_INDEX))
    best = counts.max()
    if counts[FALLING] == best:
        return FALLING
    return int(np.argmax(counts))


def n_windows(n: int, T: int, stride: int) -> int:
    return 0 if n < T else (n - T) // stride + 1


def segment_windows(rec: RawRecording, T: int = 100, overlap: float = 0.5) -> list[SensorWindow]:
    """Cut a normalised recording into overlapping windows; trailing partial windows are dropped."""
    if not rec.normalized:
        raise NormalizationError("segment_windows needs a normalised recording (run preprocess first)")
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must lie in [0, 1), got {overlap}")
    stride = max(1, int(round(T * (1.0 - overlap))))
    n = rec.n_samples
    if n < T:
        warnings.warn(f"recording {rec.subject_id}/{rec.activity_code} has {n} < {T} samples; no windows",
                      SegmentationWarning, stacklevel=2)
        return []
    acts = sample_activities(rec)
    physio = rec.physio if rec.physio is not None else PHYSIO_BASELINE
    peak = fall_peak(rec) if rec.is_fall_trial else None
    out = []
    for k in range(n_windows(n, T, stride)):
        s = k * stride
        y_fall = 0
        if peak is not None and s <= peak + FALL_HALF_WIDTH and s + T - 1 >= peak - FALL_HALF_WIDTH:
            y_fall = 1
        y_act = window_activity(acts[s:s + T])
        out.append(SensorWindow(A=rec.acc[s:s + T].copy(), G=rec.gyro[s:s + T].copy(),
                                P=np.array(physio, dtype=np.float64), y_fall=y_fall, y_act=y_act,
                                subject_id=rec.subject_id,
                                meta={"offset": s, "code": rec.activity_code, "source": rec.source}))
    return out


def load_sisfall_dir(root, T: int = 100, overlap: float = 0.5, cfg: PreprocessConfig | None = None):
    """Parse, preprocess and window every SisFall trial file below ``root``."""
    windows = []
    for path in sorted(Path(root).rglob("*.txt")):
        if not _SISFALL_NAME.match(path.stem):
            log.debug("skipping %s", path)
            continue
        sidecar = path.with_suffix(".physio")
        rec = parse_sisfall(path, sidecar if sidecar.exists() else None)
        windows += segment_windows(preprocess(rec, cfg), T, overlap)
    return windows


def load_ucihar_windows(signals_dir, labels_path, subjects_path, T: int = 100) -> list[SensorWindow]:
    """UCI-HAR rows linearly resampled to ``T`` samples, one window per row."""
    windows = []
    for rec in parse_ucihar(signals_dir, labels_path, subjects_path):
        windows += segment_windows(preprocess(rec, PreprocessConfig(target_length=T)), T, 0.5)
    return windows

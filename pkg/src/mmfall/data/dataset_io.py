"""Canonical windowed-dataset file: every SensorWindow field plus seed and provenance."""

from __future__ import annotations

import numpy as np

from ..errors import CheckpointError
from ..serialize import read_container, write_container
from .windows import SensorWindow

KIND = "mmfall-dataset"


def save_dataset(path, windows: list[SensorWindow], seed: int | None = None,
                 provenance: list | None = None) -> None:
    """Write ``windows`` to ``path``.

    ``provenance`` is a list of free-form step records (e.g. ``{"step":
    "normalize", "acc_divisor": 16384.0}``); per-window ``meta`` dicts are
    stored as well and must be JSON-serialisable.
    """
    if not windows:
        raise CheckpointError("refusing to write an empty dataset")
    meta = {
        "seed": seed,
        "provenance": list(provenance or []),
        "subject_ids": [w.subject_id for w in windows],
        "window_meta": [w.meta for w in windows],
        "T": int(windows[0].T),
    }
    arrays = {
        "A": np.stack([w.A for w in windows]),
        "G": np.stack([w.G for w in windows]),
        "P": np.stack([w.P for w in windows]),
        "y_fall": np.array([w.y_fall for w in windows], dtype=np.int64),
        "y_act": np.array([w.y_act for w in windows], dtype=np.int64),
    }
    write_container(path, KIND, meta, arrays)


def load_dataset(path) -> tuple[list[SensorWindow], dict]:
    """Return ``(windows, meta)``; every window is validated on load."""
    meta, arr = read_container(path, KIND)
    missing = {"A", "G", "P", "y_fall", "y_act"} - set(arr)
    if missing:
        raise CheckpointError(f"{path}: dataset lacks arrays {sorted(missing)}")
    n = arr["A"].shape[0]
    if len(meta["subject_ids"]) != n:
        raise CheckpointError(f"{path}: {len(meta['subject_ids'])} subject ids for {n} windows")
    windows = [
        SensorWindow(A=arr["A"][i], G=arr["G"][i], P=arr["P"][i], y_fall=int(arr["y_fall"][i]),
                     y_act=int(arr["y_act"][i]), subject_id=meta["subject_ids"][i],
                     meta=meta["window_meta"][i]).validate(meta["T"])
        for i in range(n)
    ]
    return windows, {k: meta[k] for k in ("seed", "provenance", "T")}

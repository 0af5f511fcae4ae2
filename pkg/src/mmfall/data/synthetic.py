"""Deterministic synthetic wearable-sensor windows for desk-scale experiments.

Every constant here defines the generator, not a measured property of
people.  Signals are sampled at 200 Hz; acceleration is in g (gravity
included), angular rate in deg/s.

ADL windows
    stationary  gravity + N(0, 0.05^2) per axis
    walking     2 Hz vertical oscillation of +-0.3 g plus lateral sway
    running     3 Hz vertical oscillation of +-0.8 g; some windows contain a
                heel-strike transient peaking at 2.1-2.8 g
    sitting     orientation ramp of 20-45 deg; some windows end in a hard
                landing peaking at 1.8-2.6 g
    lying       gravity along a horizontal axis, slow drift
Fall windows
    walking/standing prefix, a free-fall dip, an impact burst of 10-30
    samples whose peak magnitude is 3.2-6 g, a gyro spike of 150-400 deg/s,
    then horizontal post-impact stillness.  Heart rate rises 15-30 bpm and
    skin conductance by 0.8-2 uS.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .windows import ACTIVITY_INDEX, FALLING, SensorWindow

FS = 200.0
_ADL = ("stationary", "walking", "running", "sitting", "lying")


def _rot_x(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


class _Subject:
    def __init__(self, rng: np.random.Generator, sid: str):
        self.sid = sid
        tilt = np.deg2rad(rng.uniform(0, 10, size=2))
        self.R = _rot_x(tilt[0]) @ _rot_y(tilt[1])            # device mounting
        self.up = self.R @ np.array([0.0, 0.0, 1.0])
        self.cadence = rng.uniform(0.85, 1.15)
        self.hr = rng.uniform(62, 82)
        self.spo2 = rng.uniform(96, 99)
        self.temp = rng.uniform(32.8, 34.2)
        self.gsr = rng.uniform(1.2, 2.8)


def _noise(rng, T, sigma):
    return rng.normal(0.0, sigma, size=(T, 3))


def _physio(subj: _Subject, rng, activity: str) -> np.ndarray:
    hr = subj.hr + rng.normal(0, 3)
    gsr = subj.gsr + rng.normal(0, 0.2)
    if activity == "walking":
        hr += 10
    elif activity == "running":
        hr += rng.uniform(35, 55)
        gsr += rng.uniform(0.3, 0.8)
    elif activity == "falling":
        hr += rng.uniform(15, 30)
        gsr += rng.uniform(0.8, 2.0)
    spo2 = subj.spo2 + rng.normal(0, 0.3) - (rng.uniform(0, 1) if activity == "falling" else 0.0)
    temp = subj.temp + rng.normal(0, 0.15)
    return np.array([hr, spo2, temp, gsr])


def _gait(subj, rng, T, freq, amp, gyro_amp):
    t = np.arange(T) / FS
    f = freq * subj.cadence
    ph = rng.uniform(0, 2 * np.pi, size=3)
    lateral = subj.R @ np.array([1.0, 0.0, 0.0])
    A = (np.outer(1.0 + amp * np.sin(2 * np.pi * f * t + ph[0]), subj.up)
         + np.outer(0.25 * amp * np.sin(np.pi * f * t + ph[1]), lateral))
    G = np.zeros((T, 3))
    G[:, 1] = gyro_amp * np.sin(2 * np.pi * f * t + ph[2])
    G[:, 0] = 0.4 * gyro_amp * np.sin(np.pi * f * t + ph[1])
    return A, G


def _adl(subj: _Subject, rng, T: int, activity: str):
    if activity == "stationary":
        A = np.tile(subj.up, (T, 1)) + _noise(rng, T, 0.05)
        G = _noise(rng, T, 3.0)
    elif activity == "walking":
        A, G = _gait(subj, rng, T, 2.0, 0.3, 25.0)
        A += _noise(rng, T, 0.05)
        G += _noise(rng, T, 3.0)
    elif activity == "running":
        A, G = _gait(subj, rng, T, 3.0, 0.8, 60.0)
        A += _noise(rng, T, 0.05)
        G += _noise(rng, T, 5.0)
        if rng.random() < 0.35:                  # heel strike
            lo, hi = (5, T - 6) if T > 10 else (2, T - 2)
            at = int(rng.integers(lo, hi + 1))
            peak = rng.uniform(2.1, 2.8)
            for j, frac in zip(range(at - 2, at + 2), (0.6, 1.0, 0.7, 0.4)):
                A[j] = subj.up * max(peak * frac, np.linalg.norm(A[j]))
    elif activity == "sitting":
        start = int(rng.integers(0, T // 3))
        dur = int(rng.integers(30, 60))
        theta_end = np.deg2rad(rng.uniform(20, 45))
        idx = np.arange(T)
        theta = theta_end * np.clip((idx - start) / dur, 0.0, 1.0)
        A = np.stack([_rot_x(th) @ subj.up for th in theta]) + _noise(rng, T, 0.05)
        G = _noise(rng, T, 3.0)
        G[:, 0] += np.gradient(np.rad2deg(theta)) * FS
        if rng.random() < 0.3:                   # hard landing on the seat
            at = min(start + dur, T - 4)
            peak = rng.uniform(1.8, 2.6)
            for j, frac in zip(range(at, at + 4), (0.7, 1.0, 0.6, 0.3)):
                A[j] = A[j] / np.linalg.norm(A[j]) * max(peak * frac, 1.0)
    elif activity == "lying":
        drift = np.deg2rad(rng.uniform(-10, 10)) * np.linspace(0, 1, T)
        base = subj.R @ np.array([0.0, 1.0, 0.0])
        A = np.stack([_rot_x(d) @ base for d in drift]) + _noise(rng, T, 0.03)
        G = _noise(rng, T, 2.0)
    else:
        raise ConfigError(f"unknown ADL {activity!r}")
    return A, G


def _fall(subj: _Subject, rng, T: int):
    pre = "walking" if rng.random() < 0.6 else "stationary"
    A, G = _adl(subj, rng, T, pre)
    # impact onset between 25% and 55% of the window (25..55 at T=100)
    t0 = int(rng.integers(max(1, round(0.25 * T)), min(T - 1, round(0.55 * T)) + 1))
    ff = int(rng.integers(8, 16))                           # free-fall samples before impact
    dur = int(rng.integers(10, 31))                         # impact burst length
    peak = rng.uniform(3.2, 6.0)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    rest = subj.R @ (np.array([0.0, 1.0, 0.0]) if rng.random() < 0.5 else np.array([1.0, 0.0, 0.0]))

    s = max(0, t0 - ff)
    A[s:t0] = np.outer(np.linspace(1.0, rng.uniform(0.2, 0.4), t0 - s), subj.up) + _noise(rng, t0 - s, 0.05)
    env = np.sin(np.pi * (np.arange(dur) + 0.5) / dur)
    end = min(T, t0 + dur)
    n = end - t0
    A[t0:end] = np.outer(env[:n] * peak, direction) + np.outer(1.0 - env[:n], rest) + _noise(rng, n, 0.1)
    tail = T - end
    if tail > 0:
        ring = np.outer(0.3 * np.exp(-np.arange(tail) / 6.0) * np.sin(np.arange(tail) * 0.9), direction)
        A[end:] = rest + ring + _noise(rng, tail, 0.03)
    pk = t0 + int(np.argmax(env[:n]))
    A[pk] = direction * peak                                # exact peak: max |A| >= 3.2 g
    axis = int(rng.integers(3))
    spin = rng.uniform(150, 400) * np.sign(rng.normal())
    G[s:end, axis] += spin * np.sin(np.pi * np.linspace(0, 1, end - s))
    G[end:] = _noise(rng, tail, 2.0)
    return A, G, pk


def synth_generate(n_subjects: int = 40, windows_per_subject: int = 20, fall_fraction: float = 0.09,
                   seed: int = 0, T: int = 100, activities=_ADL) -> list[SensorWindow]:
    """Generate labelled windows for ``n_subjects`` virtual subjects.

    Each subject contributes ``round(windows_per_subject * fall_fraction)``
    fall windows (at least one); the rest are ADL windows drawn uniformly
    from ``activities``.
    """
    if not 0.0 < fall_fraction < 1.0:
        raise ConfigError(f"fall_fraction must lie in (0, 1), got {fall_fraction}")
    return _generate(n_subjects, windows_per_subject, fall_fraction, seed, T, activities, "S")


def synth_activity_windows(n_subjects: int = 30, windows_per_subject: int = 20, seed: int = 0,
                           T: int = 100, activities=_ADL) -> list[SensorWindow]:
    """Fall-free activity windows (a stand-in for an activity-recognition corpus)."""
    return _generate(n_subjects, windows_per_subject, 0.0, seed, T, activities, "U")


def _generate(n_subjects, wps, fall_fraction, seed, T, activities, prefix):
    if T < 4:
        raise ConfigError(f"synthetic windows need T >= 4, got {T}")
    out = []
    for s in range(n_subjects):
        sid = f"{prefix}{s:03d}"
        subj = _Subject(np.random.default_rng([seed, s, 0]), sid)
        n_fall = max(1, int(round(wps * fall_fraction))) if fall_fraction > 0 else 0
        kinds = ["falling"] * n_fall
        pick = np.random.default_rng([seed, s, 1]).integers(len(activities), size=wps - n_fall)
        kinds += [activities[i] for i in pick]
        order = np.random.default_rng([seed, s, 2]).permutation(len(kinds))
        for i, j in enumerate(order):
            kind = kinds[j]
            rng = np.random.default_rng([seed, s, 3, i])
            meta = {"kind": kind, "index": i}
            if kind == "falling":
                A, G, pk = _fall(subj, rng, T)
                meta["impact"] = pk
                y_fall, y_act = 1, FALLING
            else:
                A, G = _adl(subj, rng, T, kind)
                y_fall, y_act = 0, ACTIVITY_INDEX[kind]
            out.append(SensorWindow(A=A, G=G, P=_physio(subj, rng, kind), y_fall=y_fall, y_act=y_act,
                                    subject_id=sid, meta=meta))
    return out

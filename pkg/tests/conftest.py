import numpy as np
import pytest

from mmfall.data.windows import PHYSIO_BASELINE, SensorWindow
from mmfall.model import ModelConfig


def make_window(T=100, y_fall=0, y_act=0, subject="s0", seed=0, A=None):
    rng = np.random.default_rng(seed)
    if A is None:
        A = rng.normal(0.0, 0.1, size=(T, 3)) + np.array([0.0, 0.0, 1.0])
    return SensorWindow(A=np.asarray(A, dtype=np.float64), G=rng.normal(0.0, 10.0, size=(T, 3)),
                        P=PHYSIO_BASELINE + rng.normal(0.0, 1.0, size=4), y_fall=y_fall, y_act=y_act,
                        subject_id=subject)


def tiny_config(**kw):
    base = dict(window_len=12, kernel_sizes=(3, 5), conv_channels=4, physio_dim_out=3, lstm_layers=2,
                lstm_hidden=4, attn_heads=2, context_dim=6)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def separable_windows(n_subjects=6, per_subject=8, T=12, seed=0):
    """Falls carry a 4 g spike mid-window; everything else rests at 1 g."""
    out = []
    for s in range(n_subjects):
        for i in range(per_subject):
            fall = i % 4 == 0
            w = make_window(T=T, y_fall=int(fall), y_act=3 if fall else 0, subject=f"s{s}",
                            seed=seed * 1000 + s * 100 + i)
            if fall:
                w.A[T // 2 - 1:T // 2 + 1] = [0.0, 0.0, 4.0]
            out.append(w)
    return out

"""Single-threaded batch-1 inference latency benchmark."""

from __future__ import annotations

import json
import platform
import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .autograd import no_grad
from .data.windows import PHYSIO_BASELINE, Batch
from .errors import ContractError
from .model import ModelConfig, forward, load_checkpoint


@dataclass
class LatencyReport:
    platform_label: str
    batch_size: int
    warmup_iters: int
    measured_iters: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    max_ms: float
    throughput_per_s: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def default_platform_label() -> str:
    return f"{platform.system()} {platform.machine()} {platform.processor() or 'cpu'} (1 thread)"


def _fixed_window(config: ModelConfig, seed: int) -> Batch:
    rng = np.random.default_rng(seed)
    T = config.window_len
    A = rng.normal(0.0, 0.3, size=(1, T, 3)) + np.array([0.0, 0.0, 1.0])
    G = rng.normal(0.0, 20.0, size=(1, T, 3))
    P = PHYSIO_BASELINE[None, :] + rng.normal(0.0, 1.0, size=(1, 4))
    y = np.zeros(1, dtype=np.int64)
    return Batch(A, G, P, y, y, y, y, np.ones(1))


def summarize(times_ms, warmup: int, label: str) -> LatencyReport:
    t = np.asarray(times_ms, dtype=np.float64)
    mean = float(t.mean())
    return LatencyReport(platform_label=label, batch_size=1, warmup_iters=warmup, measured_iters=int(t.size),
                         mean_ms=mean, p50_ms=float(np.percentile(t, 50)), p95_ms=float(np.percentile(t, 95)),
                         max_ms=float(t.max()), throughput_per_s=1000.0 / mean)


def benchmark_latency(model, iters: int = 2000, warmup: int = 50, seed: int = 0,
                      platform_label: str | None = None) -> LatencyReport:
    """Time eval-mode forward passes of one fixed window.

    ``model`` is a checkpoint path or a ``(config, params)`` pair.  BLAS is
    pinned to one thread for the whole run; only the forward call is timed.
    """
    if iters < 100:
        raise ContractError(f"iters must be >= 100 for stable percentiles, got {iters}")
    if warmup < 0:
        raise ContractError(f"warmup must be >= 0, got {warmup}")
    if isinstance(model, tuple):
        config, params = model
    else:
        config, params, _ = load_checkpoint(model)
    batch = _fixed_window(config, seed)
    times = np.empty(iters)
    with threadpool_limits(limits=1), no_grad():
        for _ in range(warmup):
            forward(batch, params, config, training=False)
        for i in range(iters):
            t0 = time.perf_counter_ns()
            forward(batch, params, config, training=False)
            times[i] = (time.perf_counter_ns() - t0) / 1e6
    return summarize(times, warmup, platform_label or default_platform_label())

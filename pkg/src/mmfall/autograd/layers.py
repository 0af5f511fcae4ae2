"""Layer primitives built on :mod:`mmfall.autograd.tensor`.

Convolution, batch normalisation and the LSTM recurrence are fused ops: each
records a single graph node with a hand-written backward pass, which keeps
the Python overhead per forward at a few dozen nodes instead of thousands.
All of them are covered by finite-difference checks in the test-suite.

Sequence tensors are channel-last: ``(batch, time, channels)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DegenerateBatchError, DimensionError, NumericError
from .tensor import DTYPE, Tensor, as_tensor, grad_enabled, matmul

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x`` (any leading batch axes)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if x.ndim == 2:
        out = matmul(x, w)
    else:
        lead = x.shape[:-1]
        out = matmul(x.reshape(-1, x.shape[-1]), w).reshape(*lead, w.shape[1])
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
        out = out + b
    return out


def activation(x: Tensor, mode: str) -> Tensor:
    x = as_tensor(x)
    if mode == "relu":
        return x.relu()
    if mode == "sigmoid":
        return x.sigmoid()
    if mode == "tanh":
        return x.tanh()
    if mode == "softmax_lastdim":
        if x.ndim < 1:
            raise DimensionError("softmax needs rank >= 1")
        return x.softmax(axis=-1)
    raise ConfigError(f"unknown activation mode {mode!r}")


def conv1d_same(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Zero-padded 'same' cross-correlation along time.

    Parameters
    ----------
    x : Tensor
        ``(B, T, C_in)`` or ``(T, C_in)``.
    kernel : Tensor
        ``(C_out, C_in, k)`` with odd ``k``.
    bias : Tensor
        ``(C_out,)``.

    Returns
    -------
    Tensor
        ``(B, T, C_out)`` (or ``(T, C_out)`` for unbatched input).
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    c_out, c_in, k = kernel.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same needs an odd kernel size, got {k}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or xd.shape[2] != c_in:
        raise DimensionError(f"conv1d_same: input {x.shape} vs kernel {kernel.shape}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv1d_same: bias {bias.shape} vs kernel {kernel.shape}")
    B, T, _ = xd.shape
    pad = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (pad, pad), (0, 0)))
    cols = sliding_window_view(xp, k, axis=1).reshape(B * T, c_in * k)   # (B,T,C_in,k) flattened
    wmat = kernel.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T + bias.data).reshape(B, T, c_out)
    if squeeze:
        out = out[0]

    def back(g):
        g2 = g.reshape(B * T, c_out)
        gx = gk = gb = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, T, c_in, k)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + T, :] += dcols[..., j]
            gx = dxp[:, pad:pad + T, :]
            if squeeze:
                gx = gx[0]
        if kernel.requires_grad:
            gk = (g2.T @ cols).reshape(c_out, c_in, k)
        if bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gk, gb

    return Tensor._make(out, (x, kernel, bias), back, "conv1d_same")


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=DTYPE), np.ones(channels, dtype=DTYPE))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalisation over every non-channel axis.

    The channel axis is the last one.  In training mode the batch statistics
    are used and the running estimates in ``state`` are updated in place
    (unbiased variance, as in the usual convention); in eval mode the
    running estimates are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batch_norm: gamma/beta {gamma.shape}/{beta.shape} vs input {x.shape}")
    axes = tuple(range(x.ndim - 1))
    m = x.data.size // C
    if training:
        if m < 2:
            raise DegenerateBatchError(f"batch_norm in training mode needs >= 2 values per channel, got {m}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.running_mean *= 1.0 - state.momentum
        state.running_mean += state.momentum * mean
        state.running_var *= 1.0 - state.momentum
        state.running_var += state.momentum * var * (m / (m - 1))
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean) * inv_std
    out = xhat * gamma.data + beta.data

    def back(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            if training:
                gx = inv_std / m * (m * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
            else:
                gx = gxhat * inv_std
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        return gx, gg, gb

    return Tensor._make(out, (x, gamma, beta), back, "batch_norm")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask


def lstm_sequence(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over a whole sequence.

    Gate columns of ``w_ih`` (``D x 4H``), ``w_hh`` (``H x 4H``) and ``bias``
    are ordered input, forget, output, candidate.  Initial hidden and cell
    states are zero.  With ``reverse=True`` the recurrence runs from the last
    timestep to the first; outputs stay aligned with input time indices.

    Returns ``(B, T, H)``.
    """
    x, w_ih, w_hh, bias = (as_tensor(t) for t in (x, w_ih, w_hh, bias))
    if x.ndim != 3 or x.shape[2] != w_ih.shape[0]:
        raise DimensionError(f"lstm: input {x.shape} vs w_ih {w_ih.shape}")
    H = w_hh.shape[0]
    if w_ih.shape[1] != 4 * H or w_hh.shape != (H, 4 * H) or bias.shape != (4 * H,):
        raise DimensionError(f"lstm: inconsistent gate shapes {w_ih.shape}, {w_hh.shape}, {bias.shape}")
    B, T, D = x.shape
    X = x.data
    U = w_hh.data
    # sigmoid(z) = (1 + tanh(z / 2)) / 2: halving the sigmoid-gate columns up
    # front lets each step activate all four gates with a single tanh.
    half = np.ones(4 * H)
    half[:3 * H] = 0.5
    xp = (X.reshape(B * T, D) @ w_ih.data + bias.data).reshape(B, T, 4 * H) * half
    U_half = U * half
    steps = range(T - 1, -1, -1) if reverse else range(T)
    record = x.requires_grad or w_ih.requires_grad or w_hh.requires_grad or bias.requires_grad
    record = record and grad_enabled()

    out = np.empty((B, T, H), dtype=DTYPE)
    h = np.zeros((B, H), dtype=DTYPE)
    c = np.zeros((B, H), dtype=DTYPE)
    if record:
        gates = np.empty((B, T, 4 * H), dtype=DTYPE)   # activated i, f, o, g
        cells = np.empty((B, T, H), dtype=DTYPE)
        tanh_c = np.empty((B, T, H), dtype=DTYPE)
    a = np.empty((B, 4 * H), dtype=DTYPE)
    for t in steps:
        np.tanh(np.add(xp[:, t], h @ U_half, out=a), out=a)
        a[:, :3 * H] *= 0.5
        a[:, :3 * H] += 0.5
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        tc = np.tanh(c)
        h = a[:, 2 * H:3 * H] * tc
        out[:, t] = h
        if record:
            gates[:, t] = a
            cells[:, t] = c
            tanh_c[:, t] = tc
    if not np.isfinite(out).all():
        bad = next(t for t in steps if not np.isfinite(out[:, t]).all())
        raise NumericError(f"lstm produced non-finite state at timestep {bad}", coordinate=bad)

    if not record:
        return Tensor(out)

    def back(gout):
        dz_all = np.empty((B, T, 4 * H), dtype=DTYPE)
        h_prev_all = np.zeros((B, T, H), dtype=DTYPE)
        dh_next = np.zeros((B, H), dtype=DTYPE)
        dc_next = np.zeros((B, H), dtype=DTYPE)
        order = list(steps)
        for n in range(T - 1, -1, -1):
            t = order[n]
            tp = order[n - 1] if n > 0 else None
            i = gates[:, t, :H]
            f = gates[:, t, H:2 * H]
            o = gates[:, t, 2 * H:3 * H]
            g = gates[:, t, 3 * H:]
            c_prev = cells[:, tp] if tp is not None else 0.0
            if tp is not None:
                h_prev_all[:, t] = out[:, tp]
            tc = tanh_c[:, t]
            dh = gout[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dz_all[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = do * o * (1.0 - o)
            dz[:, 3 * H:] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dh_next = dz @ U.T
        dz2 = dz_all.reshape(B * T, 4 * H)
        gx = (dz2 @ w_ih.data.T).reshape(B, T, D) if x.requires_grad else None
        gwi = X.reshape(B * T, D).T @ dz2 if w_ih.requires_grad else None
        gwh = h_prev_all.reshape(B * T, H).T @ dz2 if w_hh.requires_grad else None
        gb = dz2.sum(axis=0) if bias.requires_grad else None
        return gx, gwi, gwh, gb

    return Tensor._make(out, (x, w_ih, w_hh, bias), back, "lstm")


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor):
    """``softmax(q kᵀ / sqrt(d_k)) v`` over the last two axes.

    Returns ``(attended, weights)``; ``weights`` is a Tensor so callers can
    differentiate through it if needed.
    """
    d_k = q.shape[-1]
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d_k))
    weights = scores.softmax(axis=-1)
    return matmul(weights, v), weights

"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericError
from .tensor import Tensor

# Relative errors are taken against max(|analytic|, |numeric|, MAGNITUDE_FLOOR)
# so that coordinates with vanishing gradient are judged on absolute error.
MAGNITUDE_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst: tuple | None = None          # (tensor index, flat index, analytic, numeric)
    details: list = field(default_factory=list, repr=False)


def _evaluate(f, where):
    out = f()
    val = out.data if isinstance(out, Tensor) else np.asarray(out)
    if val.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {val.shape}")
    val = float(val.reshape(-1)[0])
    if not np.isfinite(val):
        raise NumericError(f"non-finite function value at coordinate {where}", coordinate=where)
    return val


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], epsilon: float = 1e-4,
               tolerance: float = 1e-3, n_coords: int = 100, seed: int = 0,
               min_per_tensor: int = 2) -> GradCheckReport:
    """Compare backprop gradients of ``f`` with central differences.

    ``f`` takes no arguments and must rebuild its graph from the current
    contents of ``inputs`` on every call (it is evaluated twice per checked
    coordinate).  Any randomness inside ``f`` (dropout) must be reseeded per
    call.  At least ``n_coords`` coordinates are sampled, spread so that each
    input tensor receives ``min_per_tensor`` of them where it has that many.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    root = f()
    if not isinstance(root, Tensor) or root.size != 1:
        raise ContractError("grad_check needs f to return a scalar Tensor")
    if not np.isfinite(root.data).all():
        raise NumericError("non-finite function value at the base point", coordinate=None)
    root.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    coords = []
    for i, t in enumerate(inputs):
        take = min(t.size, min_per_tensor)
        coords += [(i, int(j)) for j in rng.choice(t.size, size=take, replace=False)]
    sizes = np.array([t.size for t in inputs], dtype=float)
    total = int(sizes.sum())
    remaining = max(0, min(n_coords, total) - len(coords))
    chosen = set(coords)
    while remaining > 0:
        i = int(rng.choice(len(inputs), p=sizes / sizes.sum()))
        j = int(rng.integers(inputs[i].size))
        if (i, j) in chosen:
            if len(chosen) >= total:
                break
            continue
        chosen.add((i, j))
        coords.append((i, j))
        remaining -= 1

    worst = None
    max_err = 0.0
    details = []
    for i, j in coords:
        flat = inputs[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + epsilon
        fp = _evaluate(f, (i, j))
        flat[j] = orig - epsilon
        fm = _evaluate(f, (i, j))
        flat[j] = orig
        numeric = (fp - fm) / (2.0 * epsilon)
        a = analytic[i].reshape(-1)[j]
        err = abs(a - numeric) / max(abs(a), abs(numeric), MAGNITUDE_FLOOR)
        details.append((i, j, a, numeric, err))
        if err >= max_err:
            max_err = err
            worst = (i, j, a, numeric)
    return GradCheckReport(max_rel_err=max_err, passed=max_err < tolerance,
                           n_checked=len(coords), worst=worst, details=details)

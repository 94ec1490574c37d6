"""Dense kernels, distances, AdamW and the warm-up cosine schedule.

Matrices are plain 2-D numpy arrays (float32 in normal use, float64 when
gradient checking). Dot products and sums are accumulated in float64 and
cast back to the input dtype.

The distance kernels come from the compiled ``clan._kernels`` extension
when it is importable, otherwise from ``clan._kernels_py``. Set
``CLAN_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError, ScheduleRangeError

if os.environ.get("CLAN_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _backend
    BACKEND = "python"
else:
    try:
        from . import _kernels as _backend
        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as _backend
        BACKEND = "python"

from . import _kernels_py

METRICS = ("squared_euclidean", "cosine")


def get_backend(name=None):
    """Return the kernel module by name (``"compiled"``/``"python"``), default active."""
    if name is None:
        return _backend
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def _float_dtype(*arrays):
    dt = np.result_type(*arrays)
    return dt if dt in (np.float32, np.float64) else np.dtype(np.float32)


def as_matrix(x, dtype=None):
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {x.shape}")
    return np.ascontiguousarray(x, dtype=dtype or _float_dtype(x))


def matmul(a, b):
    """Matrix product with float64 accumulation; result keeps the input float dtype."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out_dtype = _float_dtype(a, b)
    out = a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)
    return out.astype(out_dtype, copy=False)


def _pair_operands(a, b):
    dtype = _float_dtype(np.asarray(a), np.asarray(b))
    a = as_matrix(a, dtype)
    b = as_matrix(b, dtype)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"row width mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def _check_nonzero_rows(*mats):
    for m in mats:
        norms = np.sqrt(np.einsum("ij,ij->i", m.astype(np.float64), m.astype(np.float64)))
        bad = np.flatnonzero(norms == 0.0)
        if bad.size:
            raise DegenerateInputError(
                f"cosine distance undefined for zero-norm rows (first at index {bad[0]})"
            )


def pairwise_sq_euclidean(a, b, backend=None):
    a, b = _pair_operands(a, b)
    return get_backend(backend).sq_euclidean(a, b)


def pairwise_cosine_distance(a, b, backend=None):
    """``1 - cos(a_i, b_j)`` for every row pair, in ``[0, 2]``.

    Evaluated as half the squared distance between unit rows, so equal
    directions give exactly zero.
    """
    a, b = _pair_operands(a, b)
    _check_nonzero_rows(a, b)
    return get_backend(backend).cosine(a, b)


def pairwise_distance(a, b, metric, backend=None):
    if metric == "squared_euclidean":
        return pairwise_sq_euclidean(a, b, backend)
    if metric == "cosine":
        return pairwise_cosine_distance(a, b, backend)
    raise ValueError(f"unknown metric {metric!r}")


def min_distance(queries, base, metric, backend=None):
    """Distance from each query row to its nearest row of ``base`` (exhaustive scan)."""
    queries, base = _pair_operands(queries, base)
    if base.shape[0] == 0:
        raise DimensionError("nearest-neighbour scan over an empty base set")
    kern = get_backend(backend)
    if metric == "squared_euclidean":
        return kern.min_sq_euclidean(queries, base)
    if metric == "cosine":
        _check_nonzero_rows(queries, base)
        return kern.min_cosine(queries, base)
    raise ValueError(f"unknown metric {metric!r}")


def pairwise_distance_grad(a, b, weights, metric):
    """Gradients of ``sum_ij weights[i, j] * d(a_i, b_j)`` w.r.t. ``a`` and ``b``.

    Computed in float64.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (a.shape[0], b.shape[0]):
        raise DimensionError(f"weight shape {w.shape} does not match ({a.shape[0]}, {b.shape[0]})")
    if metric == "squared_euclidean":
        ga = 2.0 * (w.sum(axis=1)[:, None] * a - w @ b)
        gb = 2.0 * (w.sum(axis=0)[:, None] * b - w.T @ a)
        return ga, gb
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        if np.any(na == 0.0) or np.any(nb == 0.0):
            raise DegenerateInputError("cosine distance undefined for zero-norm rows")
        ah = a / na[:, None]
        bh = b / nb[:, None]
        ws = w * (ah @ bh.T)
        ga = -(w @ bh - ws.sum(axis=1)[:, None] * ah) / na[:, None]
        gb = -(w.T @ ah - ws.sum(axis=0)[:, None] * bh) / nb[:, None]
        return ga, gb
    raise ValueError(f"unknown metric {metric!r}")


@dataclass
class AdamWState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            **hyper,
        )


def adamw_step(params, grads, state, lr):
    """One decoupled-weight-decay Adam update, in place on ``params`` and ``state``.

    Returns ``params`` for convenience.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch in adamw_step: {p.shape}, {g.shape}, {m.shape}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        g64 = np.asarray(g, dtype=np.float64)
        m64 = b1 * m.astype(np.float64) + (1.0 - b1) * g64
        v64 = b2 * v.astype(np.float64) + (1.0 - b2) * g64 * g64
        m[...] = m64
        v[...] = v64
        p64 = p.astype(np.float64) * (1.0 - lr * state.weight_decay)
        p64 -= lr * (m64 / bias1) / (np.sqrt(v64 / bias2) + state.epsilon)
        p[...] = p64
    return params


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float
    warmup_steps: int
    total_steps: int
    final_lr: float = 0.0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.final_lr < 0:
            raise ValueError("final_lr must be non-negative")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps")

    @classmethod
    def from_fraction(cls, base_lr, total_steps, warmup_fraction=0.1, final_lr=0.0):
        return cls(base_lr, int(round(warmup_fraction * total_steps)), total_steps, final_lr)


def lr_at(schedule, step):
    """Linear warm-up to ``base_lr`` then half-cosine decay to ``final_lr``."""
    if step < 0 or step > schedule.total_steps:
        raise ScheduleRangeError(f"step {step} outside [0, {schedule.total_steps}]")
    w, total = schedule.warmup_steps, schedule.total_steps
    if step < w:
        return schedule.base_lr * step / w
    if step == w or total == w:
        return schedule.base_lr
    progress = (step - w) / (total - w)
    return schedule.final_lr + 0.5 * (schedule.base_lr - schedule.final_lr) * (
        1.0 + math.cos(math.pi * progress)
    )

"""Numeric inner-loop kernels with numba and pure-numpy backends.

The numba path is used when numba imports cleanly and the environment
variable ``SENSERAG_NUMBA`` is not set to ``0``/``false``/``off``. Both
backends are importable side by side (``*_numpy`` / ``*_numba``) so tests
and ``benchmarks/bench_kernels.py`` can compare them directly.

Timestamps are int64 epoch milliseconds; a negative value marks a timeless
row (static infrastructure) that passes every time window.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None
    NUMBA_AVAILABLE = False


def _env_enabled() -> bool:
    return os.environ.get("SENSERAG_NUMBA", "1").strip().lower() not in ("0", "false", "off")


NUMBA_ENABLED = NUMBA_AVAILABLE and _env_enabled()


# --- pure numpy backend ---

def radius_time_mask_numpy(xs, ys, ts, cx, cy, r2, t0, t1):
    """Boolean mask: squared distance to (cx, cy) <= r2 and ts within [t0, t1]."""
    dx = xs - cx
    dy = ys - cy
    in_time = (ts < 0) | ((ts >= t0) & (ts <= t1))
    return (dx * dx + dy * dy <= r2) & in_time


def step_distances_numpy(pred, gt):
    """Per-step Euclidean distances for stacked trajectories.

    pred, gt: float64 arrays of shape (n, h, 2). Returns (n, h).
    """
    diff = pred - gt
    return np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)


def median3_numpy(values):
    """3-point median filter with edge replication."""
    n = values.shape[0]
    if n < 3:
        return values.copy()
    padded = np.empty(n + 2, dtype=values.dtype)
    padded[0] = values[0]
    padded[1:-1] = values
    padded[-1] = values[-1]
    stacked = np.stack((padded[:-2], padded[1:-1], padded[2:]))
    return np.median(stacked, axis=0)


def minmax_unit_scale_numpy(values):
    """Min-max scale to [0, 1]; constant arrays map to 0.5."""
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.full(values.shape, 0.5, dtype=np.float64)
    return (values - lo) / (hi - lo)


# --- numba backend ---

if NUMBA_AVAILABLE:

    @njit(cache=True)
    def radius_time_mask_numba(xs, ys, ts, cx, cy, r2, t0, t1):
        n = xs.shape[0]
        out = np.empty(n, dtype=np.bool_)
        for i in range(n):
            dx = xs[i] - cx
            dy = ys[i] - cy
            in_time = ts[i] < 0 or (t0 <= ts[i] <= t1)
            out[i] = in_time and (dx * dx + dy * dy <= r2)
        return out

    @njit(cache=True)
    def step_distances_numba(pred, gt):
        n, h = pred.shape[0], pred.shape[1]
        out = np.empty((n, h), dtype=np.float64)
        for i in range(n):
            for j in range(h):
                dx = pred[i, j, 0] - gt[i, j, 0]
                dy = pred[i, j, 1] - gt[i, j, 1]
                out[i, j] = np.sqrt(dx * dx + dy * dy)
        return out

    @njit(cache=True)
    def median3_numba(values):
        # edge replication makes median(x0, x0, x1) == x0, so endpoints stay put
        n = values.shape[0]
        out = values.copy()
        for i in range(1, n - 1):
            a, b, c = values[i - 1], values[i], values[i + 1]
            out[i] = max(min(a, b), min(max(a, b), c))
        return out

    @njit(cache=True)
    def minmax_unit_scale_numba(values):
        lo = values[0]
        hi = values[0]
        for i in range(values.shape[0]):
            v = values[i]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        out = np.empty(values.shape[0], dtype=np.float64)
        if hi == lo:
            out[:] = 0.5
            return out
        span = hi - lo
        for i in range(values.shape[0]):
            out[i] = (values[i] - lo) / span
        return out

else:  # pragma: no cover
    radius_time_mask_numba = None
    step_distances_numba = None
    median3_numba = None
    minmax_unit_scale_numba = None


if NUMBA_ENABLED:
    radius_time_mask = radius_time_mask_numba
    step_distances = step_distances_numba
    median3 = median3_numba
    minmax_unit_scale = minmax_unit_scale_numba
else:
    radius_time_mask = radius_time_mask_numpy
    step_distances = step_distances_numpy
    median3 = median3_numpy
    minmax_unit_scale = minmax_unit_scale_numpy


def active_backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def warmup() -> None:
    """Trigger JIT compilation so first real queries are not charged for it."""
    if not NUMBA_ENABLED:
        return
    xs = np.zeros(2)
    ts = np.zeros(2, dtype=np.int64)
    radius_time_mask(xs, xs, ts, 0.0, 0.0, 1.0, np.int64(0), np.int64(1))
    step_distances(np.zeros((1, 1, 2)), np.zeros((1, 1, 2)))
    median3(np.zeros(4))
    minmax_unit_scale(np.zeros(3))

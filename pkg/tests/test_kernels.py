import os
import subprocess
import sys

import numpy as np
import pytest

from senserag import kernels

needs_numba = pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not importable")


def random_points(rng, n):
    xs = rng.uniform(-1000, 1000, n)
    ys = rng.uniform(-1000, 1000, n)
    ts = rng.integers(-1, 10_000, n).astype(np.int64)
    return xs, ys, ts


@needs_numba
class TestBackendEquivalence:
    def test_radius_time_mask(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            xs, ys, ts = random_points(rng, 500)
            cx, cy = rng.uniform(-1000, 1000, 2)
            r2 = float(rng.uniform(0, 500) ** 2)
            t0, t1 = sorted(rng.integers(0, 10_000, 2))
            a = kernels.radius_time_mask_numpy(xs, ys, ts, cx, cy, r2,
                                               np.int64(t0), np.int64(t1))
            b = kernels.radius_time_mask_numba(xs, ys, ts, cx, cy, r2,
                                               np.int64(t0), np.int64(t1))
            assert np.array_equal(a, b)

    def test_step_distances(self):
        rng = np.random.default_rng(7)
        pred = rng.uniform(-100, 100, (40, 10, 2))
        gt = rng.uniform(-100, 100, (40, 10, 2))
        a = kernels.step_distances_numpy(pred, gt)
        b = kernels.step_distances_numba(pred, gt)
        assert np.array_equal(a, b)

    def test_median3(self):
        rng = np.random.default_rng(9)
        for n in (1, 2, 3, 4, 17, 100):
            values = rng.uniform(-10, 10, n)
            assert np.array_equal(kernels.median3_numpy(values),
                                  kernels.median3_numba(values))

    def test_minmax_unit_scale(self):
        rng = np.random.default_rng(11)
        for values in (rng.uniform(-5, 5, 30), np.full(8, 3.25)):
            assert np.array_equal(kernels.minmax_unit_scale_numpy(values),
                                  kernels.minmax_unit_scale_numba(values))


class TestEnvFlagSelection:
    def backend_with_env(self, value):
        env = dict(os.environ)
        if value is None:
            env.pop("SENSERAG_NUMBA", None)
        else:
            env["SENSERAG_NUMBA"] = value
        out = subprocess.run(
            [sys.executable, "-c",
             "from senserag import kernels; print(kernels.active_backend())"],
            capture_output=True, text=True, env=env, check=True)
        return out.stdout.strip()

    def test_disabled_by_env(self):
        assert self.backend_with_env("0") == "numpy"
        assert self.backend_with_env("off") == "numpy"

    @needs_numba
    def test_enabled_by_default(self):
        assert self.backend_with_env(None) == "numba"
        assert self.backend_with_env("1") == "numba"


def test_warmup_is_idempotent():
    kernels.warmup()
    kernels.warmup()


def test_timeless_sentinel_passes_any_window():
    xs = np.array([0.0, 0.0])
    ys = np.array([0.0, 0.0])
    ts = np.array([-1, 5_000], dtype=np.int64)
    mask = kernels.radius_time_mask(xs, ys, ts, 0.0, 0.0, 1.0,
                                    np.int64(100), np.int64(200))
    assert mask.tolist() == [True, False]

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from searchmorph import _accel, kernels

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba unavailable")


def _inputs(seed, b=2, c=3, h=5, w=7, p=40, dtype=np.float64):
    rng = np.random.default_rng(seed)
    img = rng.normal(size=(b, c, h, w)).astype(dtype)
    # include out-of-range, exact-edge and integer coordinates
    x = rng.uniform(-2, w + 1, size=(b, p)).astype(dtype)
    y = rng.uniform(-2, h + 1, size=(b, p)).astype(dtype)
    x[:, :4] = [0, w - 1, 2, -0.5]
    y[:, :4] = [0, h - 1, 3, h - 0.5]
    return img, x, y


@needs_numba
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), h=st.integers(1, 6), w=st.integers(1, 6))
def test_gather_parity(seed, h, w):
    img, x, y = _inputs(seed, h=h, w=w)
    np.testing.assert_allclose(kernels.bilinear_gather_numba(img, x, y),
                               kernels.bilinear_gather_numpy(img, x, y), atol=1e-12)


@needs_numba
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), h=st.integers(1, 6), w=st.integers(1, 6))
def test_scatter_parity(seed, h, w):
    img, x, y = _inputs(seed, h=h, w=w)
    g = np.random.default_rng(seed + 1).normal(size=(2, 3, x.shape[1]))
    for a, b in zip(kernels.bilinear_scatter_numba(g, img, x, y),
                    kernels.bilinear_scatter_numpy(g, img, x, y)):
        np.testing.assert_allclose(a, b, atol=1e-10)


@needs_numba
def test_float32_parity():
    img, x, y = _inputs(3, h=16, w=16, p=500, dtype=np.float32)
    np.testing.assert_allclose(kernels.bilinear_gather_numba(img, x, y),
                               kernels.bilinear_gather_numpy(img, x, y), atol=1e-5)


def test_scatter_is_gather_adjoint():
    # <gather(img), g> == <img, scatter(g)>
    img, x, y = _inputs(7)
    g = np.random.default_rng(8).normal(size=(2, 3, x.shape[1]))
    gimg, _, _ = kernels.bilinear_scatter(g, img, x, y, need_coords=False)
    lhs = np.sum(kernels.bilinear_gather(img, x, y) * g)
    assert lhs == pytest.approx(np.sum(img * gimg), rel=1e-10)


def test_integer_coordinates_read_pixels():
    img = np.arange(12.0).reshape(1, 1, 3, 4)
    ys, xs = np.meshgrid(np.arange(3.0), np.arange(4.0), indexing="ij")
    out = kernels.bilinear_gather(img, xs.reshape(1, -1), ys.reshape(1, -1))
    np.testing.assert_array_equal(out.reshape(3, 4), img[0, 0])


def test_env_flag_selects_numpy():
    code = "from searchmorph import _accel; print(_accel.USE_NUMBA)"
    env = {**os.environ, "SEARCHMORPH_NUMBA": "0"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "False"


@needs_numba
def test_benchmark_runs(monkeypatch):
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "benchmarks"))
    import bench_kernels
    monkeypatch.setattr(bench_kernels, "CASES", {"tiny": (2, 1, 8, 8, 16)})
    (row,) = bench_kernels.run(1)
    assert row[0] == "tiny" and all(t > 0 for t in row[1:])

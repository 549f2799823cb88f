import os
import subprocess
import sys

import numpy as np
import pytest

from artifact import _kernels as K

needs_numba = pytest.mark.skipif(K.numba is None, reason="numba not installed")


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def _parzen_args(rng, m=30, k=40, d=3):
    return (rng.random((m, d)), rng.random((k, d)), rng.uniform(0.05, 0.5, (k, d)),
            np.log(np.full(k, 1.0 / k)), np.zeros(d), np.ones(d))


@needs_numba
def test_parzen_agrees(rng):
    args = _parzen_args(rng)
    np.testing.assert_allclose(K.parzen_logpdf_numba(*args), K.parzen_logpdf_numpy(*args), rtol=1e-10)


def test_parzen_is_normalised(rng):
    # one truncated kernel in 1-D integrates to 1 on the box
    x = np.linspace(0, 1, 20001)[:, None]
    lp = K.parzen_logpdf_numpy(x, np.array([[0.1]]), np.array([[0.3]]), np.array([0.0]), np.zeros(1), np.ones(1))
    assert np.trapezoid(np.exp(lp), x[:, 0]) == pytest.approx(1.0, rel=1e-6)


@needs_numba
def test_crossings_agree(rng):
    t = np.linspace(0, 1e-2, 5000)
    y = np.sin(2 * np.pi * 1e3 * t) + 0.05 * rng.standard_normal(t.size)
    np.testing.assert_allclose(K.rising_crossings_numba(t, y, 0.0), K.rising_crossings_numpy(t, y, 0.0))


def test_crossings_of_clean_sine():
    t = np.linspace(0, 1e-2, 10001)
    c = K.rising_crossings_numpy(t, np.sin(2 * np.pi * 1e3 * t + 0.1), 0.0)
    assert np.diff(c) == pytest.approx(np.full(len(c) - 1, 1e-3), rel=1e-6)


@needs_numba
def test_downsample_agrees(rng):
    x = np.linspace(0, 1, 12345)
    y = rng.standard_normal(x.size)
    a, b = K.minmax_downsample_numba(x, y, 500), K.minmax_downsample_numpy(x, y, 500)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_downsample_keeps_extremes(rng):
    x = np.linspace(0, 1, 10000)
    y = rng.standard_normal(x.size)
    px, py = K.minmax_downsample_numpy(x, y, 100)
    assert len(px) <= 200
    assert py.max() == y.max() and py.min() == y.min()
    short = K.minmax_downsample_numpy(x[:50], y[:50], 100)
    np.testing.assert_array_equal(short[1], y[:50])


def test_numpy_fallback_flag():
    env = dict(os.environ, ARTIFACT_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from artifact import _kernels as K; print(K.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"

"""Hot numeric kernels, compiled with numba when available.

Set ``ARTIFACT_NO_NUMBA=1`` to force the pure-numpy implementations. Both
paths are always importable as ``<name>_numpy`` / ``<name>_numba`` so tests
and the benchmark can compare them directly.
"""

import math
import os

import numpy as np
from scipy.special import ndtr

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _flag_off(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = numba is not None and not _flag_off("ARTIFACT_NO_NUMBA")


# ------------------------------------------------------------------ Parzen


def parzen_logpdf_numpy(x, centers, sigmas, log_weights, low, high):
    """Log-density of a truncated product-Gaussian mixture.

    x: (m, d) points; centers, sigmas: (k, d); log_weights: (k,);
    low, high: (d,) truncation bounds. Returns (m,).
    """
    z = (x[:, None, :] - centers[None, :, :]) / sigmas[None, :, :]
    a = (low[None, :] - centers) / sigmas
    b = (high[None, :] - centers) / sigmas
    mass = np.maximum(ndtr(b) - ndtr(a), 1e-300)
    comp = -0.5 * z * z - np.log(sigmas)[None] - _LOG_SQRT_2PI - np.log(mass)[None]
    lp = log_weights[None, :] + comp.sum(axis=2)
    top = lp.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(lp - top).sum(axis=1, keepdims=True)))[:, 0]


def _parzen_logpdf_loops(x, centers, sigmas, log_weights, low, high):
    m, d = x.shape
    k = centers.shape[0]
    log_norm = np.empty(k)
    for j in range(k):
        acc = 0.0
        for t in range(d):
            s = sigmas[j, t]
            a = (low[t] - centers[j, t]) / s / _SQRT2
            b = (high[t] - centers[j, t]) / s / _SQRT2
            mass = 0.5 * (math.erf(b) - math.erf(a))
            if mass < 1e-300:
                mass = 1e-300
            acc += math.log(s) + _LOG_SQRT_2PI + math.log(mass)
        log_norm[j] = log_weights[j] - acc
    out = np.empty(m)
    lp = np.empty(k)
    for i in range(m):
        top = -np.inf
        for j in range(k):
            q = 0.0
            for t in range(d):
                z = (x[i, t] - centers[j, t]) / sigmas[j, t]
                q += z * z
            v = log_norm[j] - 0.5 * q
            lp[j] = v
            if v > top:
                top = v
        s = 0.0
        for j in range(k):
            s += math.exp(lp[j] - top)
        out[i] = top + math.log(s)
    return out


# ------------------------------------------------------- rising crossings


def rising_crossings_numpy(t, y, level):
    """Interpolated times where y crosses level going upward."""
    below = y[:-1] < level
    above = y[1:] >= level
    idx = np.nonzero(below & above)[0]
    y0, y1 = y[idx], y[idx + 1]
    frac = (level - y0) / (y1 - y0)
    return t[idx] + frac * (t[idx + 1] - t[idx])


def _rising_crossings_loops(t, y, level):
    n = y.shape[0]
    out = np.empty(n)
    c = 0
    for i in range(n - 1):
        if y[i] < level and y[i + 1] >= level:
            frac = (level - y[i]) / (y[i + 1] - y[i])
            out[c] = t[i] + frac * (t[i + 1] - t[i])
            c += 1
    return out[:c]


# -------------------------------------------------- min/max downsampling


def minmax_downsample_numpy(x, y, buckets):
    """Keep the min and max sample of each bucket, in time order.

    At most 2*buckets points survive; peaks are never lost.
    """
    n = x.shape[0]
    if n <= 2 * buckets:
        return x.copy(), y.copy()
    edges = (np.arange(buckets + 1, dtype=np.int64) * n) // buckets
    keep = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        seg = y[lo:hi]
        i, j = lo + int(np.argmin(seg)), lo + int(np.argmax(seg))
        keep.extend(sorted({i, j}))
    idx = np.asarray(keep, dtype=np.int64)
    return x[idx], y[idx]


def _minmax_downsample_loops(x, y, buckets):
    n = x.shape[0]
    if n <= 2 * buckets:
        return x.copy(), y.copy()
    ox = np.empty(2 * buckets)
    oy = np.empty(2 * buckets)
    c = 0
    for b in range(buckets):
        lo = (b * n) // buckets
        hi = ((b + 1) * n) // buckets
        if hi <= lo:
            continue
        imin = lo
        imax = lo
        for i in range(lo + 1, hi):
            if y[i] < y[imin]:
                imin = i
            if y[i] > y[imax]:
                imax = i
        first, second = (imin, imax) if imin <= imax else (imax, imin)
        ox[c] = x[first]
        oy[c] = y[first]
        c += 1
        if second != first:
            ox[c] = x[second]
            oy[c] = y[second]
            c += 1
    return ox[:c], oy[:c]


if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
    parzen_logpdf_numba = _jit(_parzen_logpdf_loops)
    rising_crossings_numba = _jit(_rising_crossings_loops)
    minmax_downsample_numba = _jit(_minmax_downsample_loops)
else:  # pragma: no cover
    parzen_logpdf_numba = _parzen_logpdf_loops
    rising_crossings_numba = _rising_crossings_loops
    minmax_downsample_numba = _minmax_downsample_loops


def _f64(*arrays):
    return [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]


def parzen_logpdf(x, centers, sigmas, log_weights, low, high):
    args = _f64(x, centers, sigmas, log_weights, low, high)
    if USE_NUMBA:
        return parzen_logpdf_numba(*args)
    return parzen_logpdf_numpy(*args)


def rising_crossings(t, y, level):
    t, y = _f64(t, y)
    if USE_NUMBA:
        return rising_crossings_numba(t, y, float(level))
    return rising_crossings_numpy(t, y, float(level))


def minmax_downsample(x, y, buckets):
    x, y = _f64(x, y)
    if USE_NUMBA:
        return minmax_downsample_numba(x, y, int(buckets))
    return minmax_downsample_numpy(x, y, int(buckets))


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"

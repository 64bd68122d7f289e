"""Numba-compiled inner loops.

Every function here has a vectorized counterpart in ``_np.py`` with the same
signature; ``kernels`` picks one of the two at import time.
"""
import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


CF_EPS = 1e-16
CF_TINY = 1e-300
CF_MAXIT = 300


@njit(cache=True)
def _betacf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < CF_TINY:
        d = CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < CF_TINY:
            d = CF_TINY
        c = 1.0 + aa / c
        if abs(c) < CF_TINY:
            c = CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < CF_TINY:
            d = CF_TINY
        c = 1.0 + aa / c
        if abs(c) < CF_TINY:
            c = CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < CF_EPS:
            break
    return h


@njit(cache=True)
def _sym_beta_cdf_scalar(alpha, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    flip = x > 0.5
    if flip:
        x = 1.0 - x
    lfront = (math.lgamma(2.0 * alpha) - 2.0 * math.lgamma(alpha)
              + alpha * math.log(x) + alpha * math.log1p(-x))
    # for a == b the continued fraction converges on x <= 0.5
    val = math.exp(lfront) * _betacf(alpha, alpha, x) / alpha
    if flip:
        return 1.0 - val
    return val


@njit(cache=True)
def sym_beta_cdf(alpha, x):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = _sym_beta_cdf_scalar(alpha, x[i])
    return out


@njit(cache=True)
def _bisect_lower_half(alpha, u, max_iter, xtol):
    lo = 0.0
    hi = 0.5
    mid = 0.25
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if _sym_beta_cdf_scalar(alpha, mid) < u:
            lo = mid
        else:
            hi = mid
        if hi - lo <= xtol * hi:
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def sym_beta_ppf(alpha, u, max_iter, xtol):
    out = np.empty(u.shape[0])
    for i in range(u.shape[0]):
        ui = u[i]
        if ui <= 0.0:
            out[i] = 0.0
        elif ui >= 1.0:
            out[i] = 1.0
        elif ui == 0.5 or alpha == 1.0:
            out[i] = ui
        elif ui > 0.5:
            out[i] = 1.0 - _bisect_lower_half(alpha, 1.0 - ui, max_iter, xtol)
        else:
            out[i] = _bisect_lower_half(alpha, ui, max_iter, xtol)
    return out


@njit(cache=True)
def fft_rows(x, twiddle, inverse):
    """In-place iterative radix-2 transform of each row of a 2-D complex array."""
    m, n = x.shape
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            for r in range(m):
                tmp = x[r, i]
                x[r, i] = x[r, j]
                x[r, j] = tmp
    size = 2
    while size <= n:
        half = size // 2
        stride = n // size
        for r in range(m):
            for start in range(0, n, size):
                for k in range(half):
                    w = twiddle[k * stride]
                    if inverse:
                        w = w.conjugate()
                    a = x[r, start + k]
                    b = x[r, start + k + half] * w
                    x[r, start + k] = a + b
                    x[r, start + k + half] = a - b
        size *= 2
    if inverse:
        for r in range(m):
            for i in range(n):
                x[r, i] = x[r, i] / n
    return x

"""Pure-numpy versions of the ``_jit`` kernels, vectorized across elements."""
import math

import numpy as np

from lossmix._jit import CF_EPS, CF_MAXIT, CF_TINY


def _clip_tiny(v):
    return np.where(np.abs(v) < CF_TINY, CF_TINY, v)


def _betacf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 / _clip_tiny(1.0 - qab * x / qap)
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d_new = 1.0 / _clip_tiny(1.0 + aa * d)
        c_new = _clip_tiny(1.0 + aa / c)
        h_new = h * d_new * c_new
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d_new = 1.0 / _clip_tiny(1.0 + aa * d_new)
        c_new = _clip_tiny(1.0 + aa / c_new)
        delta = d_new * c_new
        h_new = h_new * delta
        # frozen lanes keep the value they converged to
        d = np.where(active, d_new, d)
        c = np.where(active, c_new, c)
        h = np.where(active, h_new, h)
        active &= ~(np.abs(delta - 1.0) < CF_EPS)
        if not active.any():
            break
    return h


def sym_beta_cdf(alpha, x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    lo = x <= 0.0
    hi = x >= 1.0
    inner = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    xi = x[inner]
    flip = xi > 0.5
    xs = np.where(flip, 1.0 - xi, xi)
    lfront = (math.lgamma(2.0 * alpha) - 2.0 * math.lgamma(alpha)
              + alpha * np.log(xs) + alpha * np.log1p(-xs))
    val = np.exp(lfront) * _betacf(alpha, alpha, xs) / alpha
    out[inner] = np.where(flip, 1.0 - val, val)
    return out


def _bisect_lower_half(alpha, u, max_iter, xtol):
    lo = np.zeros_like(u)
    hi = np.full_like(u, 0.5)
    active = np.ones(u.shape, dtype=bool)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = sym_beta_cdf(alpha, mid) < u
        lo = np.where(active & below, mid, lo)
        hi = np.where(active & ~below, mid, hi)
        active &= ~(hi - lo <= xtol * hi)
        if not active.any():
            break
    return 0.5 * (lo + hi)


def sym_beta_ppf(alpha, u, max_iter, xtol):
    u = np.asarray(u, dtype=np.float64)
    out = u.copy()
    out[u <= 0.0] = 0.0
    out[u >= 1.0] = 1.0
    if alpha == 1.0:
        return out
    upper = (u > 0.5) & (u < 1.0)
    lower = (u > 0.0) & (u < 0.5)
    if lower.any():
        out[lower] = _bisect_lower_half(alpha, u[lower], max_iter, xtol)
    if upper.any():
        out[upper] = 1.0 - _bisect_lower_half(alpha, 1.0 - u[upper], max_iter, xtol)
    return out


_BITREV = {}


def _bit_reverse(n):
    idx = _BITREV.get(n)
    if idx is None:
        bits = n.bit_length() - 1
        idx = np.zeros(n, dtype=np.intp)
        for b in range(bits):
            idx |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
        _BITREV[n] = idx
    return idx


def fft_rows(x, twiddle, inverse):
    m, n = x.shape
    y = x[:, _bit_reverse(n)]
    tw = twiddle.conj() if inverse else twiddle
    size = 2
    while size <= n:
        half = size // 2
        blocks = y.reshape(m, n // size, size)
        w = tw[:: n // size][:half]
        a = blocks[:, :, :half]
        b = blocks[:, :, half:] * w
        y = np.concatenate([a + b, a - b], axis=2).reshape(m, n)
        size *= 2
    if inverse:
        y = y / n
    x[:] = y
    return x

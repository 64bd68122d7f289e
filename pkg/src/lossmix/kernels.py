"""Backend selection for the numeric hot loops.

Set ``LOSSMIX_NO_JIT=1`` to force the vectorized numpy path; otherwise the
numba kernels are used whenever numba imports.
"""
import os

import numpy as np

from lossmix import _jit, _np

PPF_MAX_ITER = 200
PPF_XTOL = 1e-12


def _select():
    flag = os.environ.get("LOSSMIX_NO_JIT", "").strip().lower()
    if flag in ("1", "true", "yes", "on") or not _jit.HAVE_NUMBA:
        return "numpy", _np
    return "numba", _jit


BACKEND, _impl = _select()

_TWIDDLES = {}


def twiddles(n):
    tw = _TWIDDLES.get(n)
    if tw is None:
        tw = np.exp(-2j * np.pi * np.arange(n // 2) / n)
        _TWIDDLES[n] = tw
    return tw


def fft_rows(x, inverse=False, impl=None):
    """Transform each row of the 2-D complex128 array ``x`` in place."""
    impl = impl or _impl
    return impl.fft_rows(x, twiddles(x.shape[1]), bool(inverse))


def sym_beta_cdf(alpha, x, impl=None):
    impl = impl or _impl
    return impl.sym_beta_cdf(float(alpha), np.ascontiguousarray(x, dtype=np.float64))


def sym_beta_ppf(alpha, u, impl=None):
    impl = impl or _impl
    return impl.sym_beta_ppf(float(alpha), np.ascontiguousarray(u, dtype=np.float64),
                             PPF_MAX_ITER, PPF_XTOL)


def get_impl(name):
    """Return the kernel module for ``"numba"`` or ``"numpy"``."""
    if name == "numba":
        return _jit
    if name == "numpy":
        return _np
    raise ValueError(f"unknown backend {name!r}")

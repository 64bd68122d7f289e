"""Finite-difference checks of every training objective on tiny seeded instances."""
import numpy as np

from lossmix import autodiff as ad
from lossmix.losses import REGIMES
from lossmix.nn import make_denoiser, make_rho_mlp
from lossmix.trainer import Model, batch_objective


def tiny_instance(seed=0, batch=5, frames=3, bins=4, hidden=5, bottleneck=3, width=4):
    """Small model plus an odd-sized batch, so the leftover-ERM path is exercised too."""
    rng = np.random.default_rng(seed)
    den = make_denoiser(bins, rng, hidden=hidden, bottleneck=bottleneck)
    rho = make_rho_mlp(bottleneck, rng, width=width)
    for net in (den, rho):
        for layer in net.layers:
            layer.bias[:] = rng.normal(scale=0.3, size=layer.bias.shape)
    noisy = rng.normal(size=(batch, frames, bins))
    clean = rng.normal(size=(batch, frames, bins))
    lam = rng.uniform(0.05, 0.95, size=batch // 2)
    return Model(den, rho, C=5.0), noisy, clean, lam


def _flip_largest(grads):
    out = {k: v.copy() for k, v in grads.items()}
    name = max(out, key=lambda k: np.abs(out[k]).max())
    i = int(np.argmax(np.abs(out[name])))
    out[name].flat[i] = -out[name].flat[i]
    return out


def check_objectives(seed=0, step=1e-6, kind="lsd", regimes=REGIMES, inject_bug=None):
    """GradCheckReport per regime. ``inject_bug`` names a regime whose analytic
    gradient gets one sign flipped (negative control)."""
    model, noisy, clean, lam = tiny_instance(seed)
    reports = {}
    for regime in regimes:
        params = model.params() if regime.startswith("learnable") else model.denoiser.params()

        def fn(tape, pv, regime=regime):
            return batch_objective(tape, regime, model, noisy, clean, lam, kind, param_vars=pv)

        transform = _flip_largest if regime == inject_bug else None
        reports[regime] = ad.gradient_check(fn, params, step, transform=transform)
    return reports

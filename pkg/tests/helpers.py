"""Shared utilities for the test modules."""

import numpy as np

from lossmix import autodiff as ad
from lossmix.losses import mix_inputs
from lossmix.trainer import (Model, TrainConfig, batch_grads, erm_on_inputs, l2_penalty_grads,
                             make_optimizer, optimizer_step)


def collapse_gap(regime, noisy, clean, seed=0, l2_weight=0.0, lam_value=1.0):
    """Largest parameter difference after one step: regime at fixed lambda vs ERM on the mixed inputs.

    Only denoiser parameters are compared; for learnable regimes the rho-MLP
    update is returned separately so callers can check that it is zero.
    """
    cfg = TrainConfig(regime=regime, seed=seed, l2_weight=l2_weight, batch_size=len(noisy))
    model = Model.build(cfg, noisy.shape[-1])
    reference = model.copy()
    n_pairs = len(noisy) // 2
    lam = np.full(n_pairs, lam_value)

    _, grads = batch_grads(cfg, model, noisy, clean, lam)
    optimizer_step(make_optimizer(cfg), model.params(), grads)

    tape = ad.Tape()
    inputs = mix_inputs(noisy[0::2], noisy[1::2], lam)
    targets = clean[0::2]
    loss = erm_on_inputs(tape, reference, inputs, targets, cfg.loss)
    ref_grads = ad.backward(tape, loss)
    ref_params = reference.denoiser.params()
    ref_grads = l2_penalty_grads(ref_params, {k: ref_grads[k] for k in ref_params}, l2_weight)
    optimizer_step(make_optimizer(cfg), ref_params, ref_grads)

    after = model.denoiser.params()
    gap = max(float(np.max(np.abs(after[k] - ref_params[k]))) for k in after)
    rho_move = 0.0
    if model.rho_net is not None:
        start = Model.build(cfg, noisy.shape[-1]).rho_net.params()
        rho_move = max(float(np.max(np.abs(v - start[k]))) for k, v in model.rho_net.params().items())
    return gap, rho_move

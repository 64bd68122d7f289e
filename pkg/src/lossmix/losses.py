"""Loss family and the ERM / label / loss / learnable mixup objectives.

Spectrogram-shaped tensors are (frames, bins) for a single sample or
(batch, frames, bins) for a stack; per-sample losses reduce the last two
axes, so a stack yields one loss per sample.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from lossmix import autodiff as ad
from lossmix.mixing import phi_eval_differentiable
from lossmix.nn import Network
from lossmix.samples import SamplePair, VirtualSample

LOSS_KINDS = ("mse", "cross_entropy", "lsd")
REGIMES = ("erm", "label-mixup", "loss-mixup", "learnable-label-mixup", "learnable-loss-mixup")


def _shape(x):
    return x.shape if isinstance(x, ad.Var) else np.shape(x)


def per_sample_loss(kind, prediction, target):
    """Loss reduced over the last two axes; leading axes are kept."""
    if _shape(prediction) != _shape(target):
        raise ValueError(f"{kind} loss: prediction shape {_shape(prediction)} "
                         f"!= target shape {_shape(target)}")
    if len(_shape(prediction)) < 2:
        raise ValueError(f"{kind} loss expects (rows, cols) inputs, got {_shape(prediction)}")
    if kind == "mse":
        return ad.mean(ad.square(prediction - target), axis=(-2, -1))
    if kind == "lsd":
        # mean over frames of the RMS log-spectral deviation
        frame_rms = ad.sqrt(ad.mean(ad.square(prediction - target), axis=-1))
        return ad.mean(frame_rms, axis=-1)
    if kind == "cross_entropy":
        tv = target.value if isinstance(target, ad.Var) else np.asarray(target)
        if np.any(tv < -1e-12) or not np.allclose(tv.sum(axis=-1), 1.0, atol=1e-9):
            raise ValueError("cross-entropy targets must be non-negative rows summing to 1")
        logp = ad.log_softmax(prediction, axis=-1)
        return -ad.mean(ad.sum(logp * target, axis=-1), axis=-1)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def loss_eval(kind, prediction, target):
    """Scalar loss: mean of the per-sample losses."""
    if not isinstance(prediction, ad.Var):
        prediction = ad.Tape().constant(prediction)
    return ad.mean(per_sample_loss(kind, prediction, target))


def make_virtual_sample(pair_j, pair_k, lam):
    if pair_j.noisy.shape != pair_k.noisy.shape:
        raise ValueError(f"cannot mix inputs of shapes {pair_j.noisy.shape} and {pair_k.noisy.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return VirtualSample(lam * pair_j.noisy + (1.0 - lam) * pair_k.noisy,
                         pair_j.clean, pair_k.clean, float(lam))


def _per_sample_weight(lam, ndim):
    """Reshape a per-pair lambda (array or node) to broadcast over (frames, bins)."""
    if isinstance(lam, ad.Var):
        return ad.reshape(lam, lam.shape + (1,) * (ndim - lam.ndim)) if lam.ndim else lam
    lam = np.asarray(lam, dtype=np.float64)
    return lam.reshape(lam.shape + (1,) * (ndim - lam.ndim)) if lam.ndim else lam


def mix_inputs(x_j, x_k, lam):
    w = _per_sample_weight(lam, np.ndim(x_j))
    return w * x_j + (1.0 - w) * x_k


def erm_objective(prediction, target, kind):
    return per_sample_loss(kind, prediction, target)


def loss_mixup_objective(prediction, s_j, s_k, lam, kind):
    """lam * l(f(x~), s_j) + (1 - lam) * l(f(x~), s_k), per sample."""
    return lam * per_sample_loss(kind, prediction, s_j) + (1.0 - lam) * per_sample_loss(kind, prediction, s_k)


def label_mixup_objective(prediction, s_j, s_k, lam, kind):
    """l(f(x~), lam * s_j + (1 - lam) * s_k), per sample."""
    w = _per_sample_weight(lam, len(_shape(prediction)))
    return per_sample_loss(kind, prediction, w * s_j + (1.0 - w) * s_k)


def learnable_loss_mixup_objective(prediction, embedding, s_j, s_k, lam, phi, kind, bound=None):
    if embedding is None:
        raise ValueError("learnable mixup needs the denoiser embedding")
    weight = phi_eval_differentiable(prediction.tape, phi, lam, embedding, bound)
    return loss_mixup_objective(prediction, s_j, s_k, weight, kind)


def learnable_label_mixup_objective(prediction, embedding, s_j, s_k, lam, phi, kind, bound=None):
    if embedding is None:
        raise ValueError("learnable mixup needs the denoiser embedding")
    weight = phi_eval_differentiable(prediction.tape, phi, lam, embedding, bound)
    return label_mixup_objective(prediction, s_j, s_k, weight, kind)


@dataclass
class EquivalenceReport:
    kind: str
    trials: int
    max_rel_gap: float
    worst_seed: int
    gaps: list = field(default_factory=list, repr=False)

    def to_json(self):
        d = asdict(self)
        d.pop("gaps")
        return json.dumps(d, sort_keys=True)


def _flat_grads(grads):
    return np.concatenate([g.ravel() for _, g in sorted(grads.items())])


def _tiny_instance(kind, rng, n_pairs=3, rows=3, n_in=4, hidden=6, n_out=3):
    net = Network.build([n_in, hidden, n_out], ["leaky_relu", "linear"], rng, name="tiny")
    for layer in net.layers:
        layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
    x_j = rng.normal(size=(n_pairs, rows, n_in))
    x_k = rng.normal(size=(n_pairs, rows, n_in))
    if kind == "cross_entropy":
        s_j = rng.dirichlet(np.ones(n_out), size=(n_pairs, rows))
        s_k = rng.dirichlet(np.ones(n_out), size=(n_pairs, rows))
    else:
        s_j = rng.normal(size=(n_pairs, rows, n_out))
        s_k = rng.normal(size=(n_pairs, rows, n_out))
    lam = rng.uniform(0.05, 0.95, size=n_pairs)
    return net, mix_inputs(x_j, x_k, lam), s_j, s_k, lam


def _objective_grads(net, x, s_j, s_k, lam, kind, objective):
    tape = ad.Tape()
    bound = net.bind(tape)
    h = tape.constant(x)
    for layer, (w, b) in zip(net.layers, bound):
        h = ad.matmul(h, w) + b
        if layer.activation == "leaky_relu":
            h = ad.leaky_relu(h, layer.slope)
    return _flat_grads(ad.backward(tape, ad.mean(objective(h, s_j, s_k, lam, kind))))


def equivalence_report(kind, n_trials, rng):
    """Largest relative gap between label-mixup and loss-mixup parameter gradients.

    Each trial draws a fresh tiny network and batch; the gap is
    ||g_label - g_loss|| / max(||g_label||, ||g_loss||, 1e-12).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    seeds = rng.integers(0, 2**31 - 1, size=n_trials)
    gaps = []
    for seed in seeds:
        inst = _tiny_instance(kind, np.random.default_rng(int(seed)))
        g_label = _objective_grads(*inst, kind, label_mixup_objective)
        g_loss = _objective_grads(*inst, kind, loss_mixup_objective)
        denom = max(np.linalg.norm(g_label), np.linalg.norm(g_loss), 1e-12)
        gaps.append(float(np.linalg.norm(g_label - g_loss) / denom))
    worst = int(np.argmax(gaps))
    return EquivalenceReport(kind, int(n_trials), gaps[worst], int(seeds[worst]), gaps)

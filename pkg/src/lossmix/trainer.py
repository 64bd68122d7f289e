"""Optimizers, the five training regimes, evaluation and the ablation harness."""
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from lossmix import autodiff as ad
from lossmix.config import config_hash
from lossmix.errors import NumericError
from lossmix.losses import (REGIMES, erm_objective, label_mixup_objective,
                            learnable_label_mixup_objective, learnable_loss_mixup_objective,
                            loss_mixup_objective, mix_inputs, per_sample_loss)
from lossmix.mixing import MixingDistribution, MixingFunction, NeuralRho, phi_eval
from lossmix.nn import forward_denoiser, make_denoiser, make_rho_mlp
from lossmix.samples import stack
from lossmix.signal import DataConfig, make_dataset

log = logging.getLogger(__name__)

ABLATION_REGIMES = ("erm", "learnable-label-mixup", "loss-mixup", "learnable-loss-mixup")
# full-scale VCTK PESQ per regime; context for ablation tables only
REFERENCE_PESQ = {"erm": 3.18, "learnable-label-mixup": 3.10,
                  "loss-mixup": 3.20, "learnable-loss-mixup": 3.26}
PHI_QUARTILES = (0.25, 0.5, 0.75)


@dataclass
class TrainConfig:
    regime: str = "learnable-loss-mixup"
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    loss: str = "lsd"
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    l2_weight: float = 1e-4
    beta_alpha: float = 0.4
    rho_C: float = 5.0
    mlp_width: int = 32
    hidden: int = 32
    bottleneck: int = 16
    leaky_slope: float = 0.2
    detach_embedding: bool = False
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if isinstance(self.data, dict):
            self.data = DataConfig(**self.data)
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; valid: {', '.join(REGIMES)}")
        if self.regime != "erm" and self.batch_size < 2:
            raise ValueError("mixup regimes need batch_size >= 2 to form pairs")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def learnable(self):
        return self.regime.startswith("learnable")

    def to_dict(self):
        d = asdict(self)
        d["data"] = self.data.to_dict()
        return d

    def hash(self):
        return config_hash(self.to_dict())


# -- optimizers --------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    epsilon: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def _check_finite(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient", parameter=name)


def adam_step(state, params, grads):
    """Bias-corrected Adam update of ``params`` in place."""
    _check_finite(grads)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params


def sgd_step(state, params, grads):
    _check_finite(grads)
    state.step += 1
    for name, p in params.items():
        p -= state.learning_rate * grads[name]
    return params


def optimizer_step(state, params, grads):
    return (adam_step if state.kind == "adam" else sgd_step)(state, params, grads)


def make_optimizer(cfg):
    return OptimizerState(cfg.optimizer, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)


# -- model -------------------------------------------------------------------

class Model:
    """Denoiser plus, for learnable regimes, the rho-MLP behind phi."""

    def __init__(self, denoiser, rho_net=None, C=5.0):
        self.denoiser = denoiser
        self.rho_net = rho_net
        self.phi = MixingFunction(NeuralRho(rho_net, C)) if rho_net is not None else None

    @classmethod
    def build(cls, cfg, n_bins):
        rng = np.random.default_rng([cfg.seed, 0])
        den = make_denoiser(n_bins, rng, cfg.hidden, cfg.bottleneck, cfg.leaky_slope)
        rho = make_rho_mlp(cfg.bottleneck, rng, cfg.mlp_width, cfg.leaky_slope) if cfg.learnable else None
        return cls(den, rho, cfg.rho_C)

    def networks(self):
        return [n for n in (self.denoiser, self.rho_net) if n is not None]

    def params(self):
        out = {}
        for net in self.networks():
            out.update(net.params())
        return out

    def copy(self):
        return Model(self.denoiser.copy(), self.rho_net.copy() if self.rho_net else None,
                     self.phi.rho.C if self.phi else 5.0)


def batch_objective(tape, regime, model, noisy, clean, lam=None, kind="lsd",
                    detach_embedding=False, param_vars=None):
    """Scalar training objective of one batch (no l2 term).

    Mixup regimes pair rows (0, 1), (2, 3), ... of the batch with one lambda
    per pair; an odd trailing sample contributes a plain ERM term. The
    result averages over pairs plus leftover.
    """
    den_bound = model.denoiser.bind(tape, param_vars)
    if regime == "erm":
        out = forward_denoiser(model.denoiser, noisy, tape, den_bound)
        return ad.mean(erm_objective(out.prediction, clean, kind))

    n_pairs = noisy.shape[0] // 2
    if n_pairs == 0:
        # a lone trailing sample cannot be mixed
        out = forward_denoiser(model.denoiser, noisy, tape, den_bound)
        return ad.mean(erm_objective(out.prediction, clean, kind))
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (n_pairs,):
        raise ValueError(f"expected {n_pairs} lambdas, got shape {lam.shape}")
    x_j, x_k = noisy[0:2 * n_pairs:2], noisy[1:2 * n_pairs:2]
    s_j, s_k = clean[0:2 * n_pairs:2], clean[1:2 * n_pairs:2]
    inputs = mix_inputs(x_j, x_k, lam)
    leftover = noisy.shape[0] > 2 * n_pairs
    if leftover:
        inputs = np.concatenate([inputs, noisy[-1:]])
    out = forward_denoiser(model.denoiser, inputs, tape, den_bound)
    pred = out.prediction[:n_pairs] if leftover else out.prediction

    if regime == "loss-mixup":
        terms = loss_mixup_objective(pred, s_j, s_k, lam, kind)
    elif regime == "label-mixup":
        terms = label_mixup_objective(pred, s_j, s_k, lam, kind)
    else:
        emb = out.embedding[:n_pairs] if leftover else out.embedding
        if detach_embedding:
            emb = emb.detach()
        rho_bound = model.rho_net.bind(tape, param_vars)
        fn = (learnable_loss_mixup_objective if regime == "learnable-loss-mixup"
              else learnable_label_mixup_objective)
        terms = fn(pred, emb, s_j, s_k, lam, model.phi, kind, rho_bound)
    if leftover:
        terms = ad.concat([terms, erm_objective(out.prediction[n_pairs:], clean[-1:], kind)])
    return ad.mean(terms)


def erm_on_inputs(tape, model, inputs, targets, kind="lsd", param_vars=None):
    """Plain ERM objective on given (already mixed) inputs."""
    out = forward_denoiser(model.denoiser, inputs, tape, model.denoiser.bind(tape, param_vars))
    return ad.mean(erm_objective(out.prediction, targets, kind))


def mixing_distribution(regime, beta_alpha):
    if regime in ("loss-mixup", "label-mixup"):
        return MixingDistribution("beta", beta_alpha)
    return MixingDistribution("uniform")


def l2_penalty_grads(params, grads, weight):
    """Add the gradient of ``weight * sum(theta ** 2)``."""
    if weight == 0:
        return grads
    return {k: g + 2.0 * weight * params[k] for k, g in grads.items()}


def batch_grads(cfg, model, noisy, clean, lam):
    tape = ad.Tape()
    loss = batch_objective(tape, cfg.regime, model, noisy, clean, lam, cfg.loss, cfg.detach_embedding)
    grads = ad.backward(tape, loss)
    params = model.params()
    for k, p in params.items():
        grads.setdefault(k, np.zeros_like(p))
    grads = l2_penalty_grads(params, grads, cfg.l2_weight)
    return float(loss.value), grads


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_lsd: float = float("nan")
    mean_phi_at_quartiles: list = None
    wall_ms: float = 0.0


def train_epoch(cfg, model, train_pairs, optimizer, rng, force_lambda=None):
    """One shuffled pass over ``train_pairs``; returns the mean batch objective.

    ``force_lambda`` pins every drawn lambda (test hook).
    """
    if not train_pairs:
        raise ValueError("empty training set")
    noisy_all, clean_all = stack(train_pairs)
    dist = mixing_distribution(cfg.regime, cfg.beta_alpha)
    order = rng.permutation(len(train_pairs))
    losses = []
    params = model.params()
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        lam = None
        if cfg.regime != "erm":
            n_pairs = len(idx) // 2
            u = rng.random(n_pairs)
            lam = np.full(n_pairs, float(force_lambda)) if force_lambda is not None else dist.ppf(u)
        loss, grads = batch_grads(cfg, model, noisy_all[idx], clean_all[idx], lam)
        optimizer_step(optimizer, params, grads)
        losses.append(loss)
    return float(np.mean(losses))


def evaluate(net, split, kind="lsd"):
    """Mean per-sample loss of the denoiser on clean targets; no mixing."""
    if not split:
        raise ValueError("cannot evaluate on an empty split")
    noisy, clean = stack(split)
    tape = ad.Tape()
    pred = forward_denoiser(net, noisy, tape).prediction
    return float(np.mean(per_sample_loss(kind, pred, clean).value))


def mean_phi_at_quartiles(model, split):
    """phi at lam = 0.25, 0.5, 0.75 averaged over the split's embeddings."""
    if model.phi is None or not split:
        return None
    noisy, _ = stack(split)
    emb = forward_denoiser(model.denoiser, noisy, ad.Tape()).embedding.value
    return [float(np.mean(phi_eval(model.phi, np.full(len(emb), q), emb))) for q in PHI_QUARTILES]


@dataclass
class TrainingReport:
    config: dict
    config_hash: str
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    aborted: bool = False
    error: str = ""

    def jsonl_lines(self):
        """Deterministic per-epoch lines; wall-clock timings are left to the summary."""
        lines = []
        for r in self.records:
            d = {"epoch": r.epoch, "train_loss": r.train_loss, "val_lsd": r.val_lsd,
                 "mean_phi_at_quartiles": r.mean_phi_at_quartiles, "config_hash": self.config_hash}
            lines.append(json.dumps(d, sort_keys=True))
        return lines

    def summary_dict(self):
        return {"config": self.config, "config_hash": self.config_hash, "aborted": self.aborted,
                "error": self.error, "summary": self.summary,
                "wall_ms": [r.wall_ms for r in self.records]}


def train(cfg, dataset=None, force_lambda=None):
    """Train per ``cfg``; returns ``(model, report)``.

    Numeric failures stop training early and are recorded in the report.
    """
    dataset = dataset if dataset is not None else make_dataset(cfg.data)
    n_bins = dataset.train[0].noisy.shape[-1]
    model = Model.build(cfg, n_bins)
    optimizer = make_optimizer(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    report = TrainingReport(cfg.to_dict(), cfg.hash())
    val = dataset.val or dataset.train
    initial = evaluate(model.denoiser, val, cfg.loss)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        try:
            loss = train_epoch(cfg, model, dataset.train, optimizer, rng, force_lambda)
        except NumericError as exc:
            log.error("epoch %d aborted: %s", epoch, exc)
            report.aborted, report.error = True, str(exc)
            break
        rec = EpochRecord(epoch, loss, evaluate(model.denoiser, val, cfg.loss),
                          mean_phi_at_quartiles(model, val))
        rec.wall_ms = (time.perf_counter() - t0) * 1e3
        report.records.append(rec)
        log.info("epoch %d  train %.4f  val %.4f", epoch, rec.train_loss, rec.val_lsd)
    report.summary = {
        "regime": cfg.regime,
        "epochs_completed": len(report.records),
        "initial_val_lsd": initial,
        "final_train_loss": report.records[-1].train_loss if report.records else None,
        "final_val_lsd": report.records[-1].val_lsd if report.records else initial,
        "test_lsd": evaluate(model.denoiser, dataset.test, cfg.loss) if dataset.test else None,
        "mean_phi_at_quartiles": mean_phi_at_quartiles(model, val),
        "n_params": int(np.sum([n.n_params() for n in model.networks()])),
    }
    return model, report


# -- ablation -----------------------------------------------------------------

@dataclass
class AblationResult:
    rows: list  # (regime, seed, final_val_lsd)
    aggregates: dict
    config_hash: str
    dataset_seed: int

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["regime", "seed", "final_val_lsd"])
            for regime, seed, val in self.rows:
                w.writerow([regime, seed, f"{val:.6g}"])
            fh.write(f"# config_hash={self.config_hash}\n")
            fh.write("# reference (full-scale VCTK, PESQ, higher is better): "
                     + ", ".join(f"{k}={v:.2f}" for k, v in REFERENCE_PESQ.items()) + "\n")

    def to_dict(self):
        return {"config_hash": self.config_hash, "dataset_seed": self.dataset_seed,
                "rows": [{"regime": r, "seed": s, "final_val_lsd": v} for r, s, v in self.rows],
                "aggregates": self.aggregates,
                "ordering_by_mean_val_lsd": sorted(self.aggregates, key=lambda k: self.aggregates[k]["mean"]),
                "reference_full_scale_pesq": REFERENCE_PESQ}


def run_ablation(base_cfg, seeds=(0, 1, 2), regimes=ABLATION_REGIMES, dataset=None):
    """Train every regime under every seed on one shared dataset.

    Orders are reported, never asserted: desk-scale results need not follow
    the full-scale ranking.
    """
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    dataset = dataset if dataset is not None else make_dataset(base_cfg.data)
    rows = []
    for regime in regimes:
        for seed in seeds:
            cfg = TrainConfig(**{**base_cfg.to_dict(), "regime": regime, "seed": int(seed)})
            _, report = train(cfg, dataset)
            if report.aborted:
                raise NumericError(f"ablation run failed: {report.error}", regime=regime, seed=seed)
            rows.append((regime, int(seed), float(report.summary["final_val_lsd"])))
    aggregates = {}
    for regime in regimes:
        vals = np.array([v for r, _, v in rows if r == regime])
        aggregates[regime] = {"mean": float(vals.mean()),
                              "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                              "n": int(len(vals))}
    return AblationResult(rows, aggregates, base_cfg.hash(), base_cfg.data.seed)

"""Mixing distributions, mixing functions and the pathwise gradient estimator.

A mixing function phi maps [0, 1] onto [0, 1] with phi(1) = 1,
phi(1 - lam) = 1 - phi(lam) and phi non-decreasing. Any such phi can be
written through a non-decreasing rho with rho(0) = 0 as

    phi(lam) = rho(lam) / (rho(lam) + rho(1 - lam)),

which is how every phi in this module is built.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np

from lossmix import autodiff as ad
from lossmix import kernels
from lossmix.errors import NumericError
from lossmix.nn import Network, forward_mlp

CDF_TOL = 1e-10


@dataclass(frozen=True)
class MixingDistribution:
    kind: str = "uniform"  # "uniform" or "beta" (symmetric Beta(alpha, alpha))
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "beta"):
            raise ValueError(f"unknown mixing distribution {self.kind!r}")
        if self.kind == "beta" and not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"Beta concentration must be positive and finite, got {self.alpha}")

    def ppf(self, u):
        if self.kind == "uniform":
            return np.asarray(u, dtype=np.float64) if np.ndim(u) else float(u)
        return beta_inverse_cdf(self.alpha, u)


def sample_lambda(dist, rng, size=None):
    """Draw lam by pushing uniform draws through the inverse CDF.

    Going through a uniform draw means callers can reuse the same random
    numbers across distributions.
    """
    return dist.ppf(rng.random(size))


def beta_cdf(alpha, x):
    """Regularized incomplete beta I_x(alpha, alpha)."""
    scalar = np.ndim(x) == 0
    out = kernels.sym_beta_cdf(alpha, np.atleast_1d(x))
    return float(out[0]) if scalar else out


def beta_inverse_cdf(alpha, u):
    """Quantile of the symmetric Beta(alpha, alpha) by bisection.

    Raises NumericError if the bisection result misses the target
    probability by more than 1e-10, plus whatever the CDF moves across one
    float spacing at the result. Near the endpoints with small alpha that
    spacing dominates, and no representable x can do better.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    scalar = np.ndim(u) == 0
    u_arr = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if np.any((u_arr < 0) | (u_arr > 1)) or not np.all(np.isfinite(u_arr)):
        raise ValueError("u must lie in [0, 1]")
    x = kernels.sym_beta_ppf(alpha, u_arr)
    at_x = kernels.sym_beta_cdf(alpha, x)
    miss = np.abs(at_x - u_arr)
    ulp_jump = np.maximum(np.abs(kernels.sym_beta_cdf(alpha, np.nextafter(x, 1.0)) - at_x),
                          np.abs(kernels.sym_beta_cdf(alpha, np.nextafter(x, 0.0)) - at_x))
    if np.any(miss > CDF_TOL + ulp_jump):
        i = int(np.argmax(miss))
        raise NumericError("Beta inverse CDF did not converge", alpha=alpha, u=float(u_arr[i]),
                           x=float(x[i]), residual=float(miss[i]))
    return float(x[0]) if scalar else x


# -- rho families -----------------------------------------------------------

@dataclass(frozen=True)
class IdentityRho:
    needs_embedding = False

    def __call__(self, lam, embedding=None):
        return np.asarray(lam, dtype=np.float64)


@dataclass(frozen=True)
class PowerRho:
    """rho(lam) = lam ** c; convex for c > 1, concave for c < 1."""

    c: float
    needs_embedding = False

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"power exponent must be positive, got {self.c}")

    def __call__(self, lam, embedding=None):
        return _pow(np.asarray(lam, dtype=np.float64), self.c)


@dataclass(frozen=True, eq=False)
class NeuralRho:
    """rho(lam; e) = lam ** gamma(e) with gamma = C ** (2 sigmoid(MLP(e)) - 1).

    gamma lies in (1/C, C), so rho is convex or concave depending on which
    side of 1 the MLP pushes it; rho(0) = 0 and monotonicity hold by
    construction.
    """

    net: Network
    C: float = 5.0
    needs_embedding = True

    def __post_init__(self):
        if not self.C > 1:
            raise ValueError(f"NeuralRho needs C > 1, got {self.C}")

    def exponent(self, embedding):
        tape = ad.Tape()
        return _exponent_node(tape, forward_mlp(self.net, embedding, tape), self.C).value

    def __call__(self, lam, embedding=None):
        if embedding is None:
            raise ValueError("NeuralRho needs an embedding")
        return _pow(np.asarray(lam, dtype=np.float64), self.exponent(embedding))


def _pow(lam, gamma):
    # exp/log form so the tape path reproduces the same floating-point values
    with np.errstate(divide="ignore"):
        return np.exp(gamma * np.log(lam))


def neural_rho_exponent(mlp_output, C):
    """gamma = C ** (2 sigmoid(m) - 1), in (1/C, C)."""
    if not C > 1:
        raise ValueError(f"C must exceed 1, got {C}")
    tape = ad.Tape()
    out = _exponent_node(tape, tape.constant(mlp_output), C).value
    return float(out) if np.ndim(out) == 0 else out


def _exponent_node(tape, m, C):
    return ad.exp((2.0 * ad.sigmoid(m) - 1.0) * math.log(C))


@dataclass(frozen=True, eq=False)
class MixingFunction:
    rho: object

    def __call__(self, lam, embedding=None):
        return phi_eval(self, lam, embedding)


def phi_eval(phi, lam, embedding=None):
    """phi(lam) = rho(lam) / (rho(lam) + rho(1 - lam)), endpoints by limit."""
    rho = phi.rho
    if rho.needs_embedding != (embedding is not None):
        raise ValueError("embedding must be given exactly when rho is neural")
    if isinstance(rho, NeuralRho):
        tape = ad.Tape()
        out = phi_eval_differentiable(tape, phi, lam, tape.constant(embedding)).value
        return float(out) if np.ndim(out) == 0 else out
    lam_arr = np.asarray(lam, dtype=np.float64)
    r1 = rho(lam_arr)
    r2 = rho(1.0 - lam_arr)
    denom = r1 + r2
    with np.errstate(invalid="ignore", divide="ignore"):
        out = r1 / denom
    bad = ~(denom > np.finfo(float).tiny) | ~np.isfinite(out)
    if np.any(bad):
        limit = np.where(lam_arr > 0.5, 1.0, np.where(lam_arr < 0.5, 0.0, 0.5))
        out = np.where(bad, limit, out)
    out = np.where(lam_arr <= 0.0, 0.0, np.where(lam_arr >= 1.0, 1.0, out))
    return float(out) if out.ndim == 0 else out


def phi_from_exponent(gamma, lam):
    """Tape node for the power-family phi with exponent node ``gamma``.

    ``lam`` is data (no gradient). Endpoint entries are constants 0 / 1 so
    log(0) never enters the backward pass.
    """
    tape = gamma.tape
    lam = np.asarray(lam, dtype=np.float64)
    endpoint = (lam <= 0.0) | (lam >= 1.0)
    safe = np.where(endpoint, 0.5, lam)
    r1 = ad.exp(gamma * np.log(safe))
    r2 = ad.exp(gamma * np.log(1.0 - safe))
    phi = r1 / (r1 + r2)
    if not endpoint.any():
        return phi
    limit = np.broadcast_to(np.where(lam >= 1.0, 1.0, 0.0), phi.shape)
    return ad.where(np.broadcast_to(endpoint, phi.shape), tape.constant(limit), phi)


def phi_eval_differentiable(tape, phi, lam, embedding, bound=None):
    """phi(lam; embedding) as a tape node, gradients flowing to the rho-MLP and embedding."""
    rho = phi.rho
    if not isinstance(rho, NeuralRho):
        raise ValueError("differentiable phi needs a neural rho")
    if embedding is None:
        raise ValueError("missing embedding for neural rho")
    m = forward_mlp(rho.net, embedding, tape, bound)
    return phi_from_exponent(_exponent_node(tape, m, rho.C), lam)


def power_phi_node(c, lam):
    """Power-rho phi with the exponent ``c`` a tape node."""
    return phi_from_exponent(c, lam)


def reparam_gradient_estimate(objective, alpha, n_samples, rng, phi_node=power_phi_node):
    """Pathwise Monte Carlo estimate of d/d alpha E_{lam ~ p(alpha)} L(lam).

    lam ~ p(alpha) is realised as phi_alpha(u) with u ~ U(0, 1), so the
    gradient is the average of d/d alpha L(phi_alpha(u_i)) over the draws.
    ``objective`` maps a node of shaped lambdas to per-sample losses and
    must be built from tape operations. Returns ``(gradient, u)``; reusing
    ``u`` gives common random numbers for finite-difference checks.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    u = rng.random(n_samples) if isinstance(rng, np.random.Generator) \
        else np.random.default_rng(rng).random(n_samples)
    tape = ad.Tape()
    a = tape.param("alpha", np.asarray(alpha, dtype=np.float64))
    losses = tape.lift(objective(phi_node(a, u)))
    grads = ad.backward(tape, ad.mean(losses))
    g = grads["alpha"]
    return (float(g) if g.ndim == 0 else g), u


def phi_curve_table(phi, n_points, embedding=None):
    """Evenly spaced (lam, phi(lam)) pairs, both endpoints included."""
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    lam = np.linspace(0.0, 1.0, int(n_points))
    vals = np.atleast_1d(phi_eval(phi, lam, embedding))
    return [(float(a), float(b)) for a, b in zip(lam, vals)]


def write_curve_csv(path, table):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "phi"])
        for lam, val in table:
            w.writerow([f"{lam:.6g}", f"{val:.6g}"])


def parse_rho(spec):
    """``identity`` or ``pow:<c>`` -> rho instance."""
    s = spec.strip().lower()
    if s in ("identity", "id"):
        return IdentityRho()
    if s.startswith("pow:"):
        try:
            c = float(s[4:])
        except ValueError:
            raise ValueError(f"malformed rho spec {spec!r}: exponent is not a number") from None
        return PowerRho(c)
    raise ValueError(f"malformed rho spec {spec!r}; expected 'identity' or 'pow:<c>'")

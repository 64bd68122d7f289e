import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lossmix import autodiff as ad
from lossmix.errors import NumericError
from lossmix.mixing import (IdentityRho, MixingDistribution, MixingFunction, NeuralRho, PowerRho,
                            beta_cdf, beta_inverse_cdf, neural_rho_exponent, parse_rho,
                            phi_curve_table, phi_eval, phi_eval_differentiable,
                            reparam_gradient_estimate, sample_lambda, write_curve_csv)
from lossmix.nn import make_rho_mlp

GRID = np.linspace(0.0, 1.0, 1001)


class FixedUniform:
    """Stand-in random source returning preset uniform draws."""

    def __init__(self, u):
        self.u = u

    def random(self, size=None):
        return self.u


def invert_beta22(u):
    """Bisection on the Beta(2,2) CDF polynomial 3x^2 - 2x^3."""
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if 3 * mid ** 2 - 2 * mid ** 3 < u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def neural_phi(seed, dim=4, width=8, scale=1.0):
    rng = np.random.default_rng(seed)
    net = make_rho_mlp(dim, rng, width=width)
    for layer in net.layers:
        layer.weight *= scale
        layer.bias[:] = rng.normal(scale=scale, size=layer.bias.shape)
    return MixingFunction(NeuralRho(net, 5.0)), rng.normal(size=dim)


# -- sampling and the Beta inverse CDF ------------------------------------------

def test_sample_lambda_examples():
    assert sample_lambda(MixingDistribution("uniform"), FixedUniform(0.37)) == 0.37
    assert sample_lambda(MixingDistribution("beta", 1.0), FixedUniform(0.42)) == pytest.approx(0.42, abs=1e-12)
    assert invert_beta22(0.216) == pytest.approx(0.3, abs=1e-12)
    assert sample_lambda(MixingDistribution("beta", 2.0), FixedUniform(0.216)) == pytest.approx(0.3, abs=1e-9)


def test_sample_lambda_in_unit_interval(rng):
    for dist in (MixingDistribution("uniform"), MixingDistribution("beta", 0.2), MixingDistribution("beta", 8.0)):
        lam = sample_lambda(dist, rng, size=500)
        assert lam.min() >= 0.0 and lam.max() <= 1.0


def test_beta_sample_moments(rng):
    # Beta(a,a) has mean 1/2 and variance 1 / (4 (2a + 1))
    lam = sample_lambda(MixingDistribution("beta", 0.4), rng, size=20000)
    assert lam.mean() == pytest.approx(0.5, abs=0.01)
    assert lam.var() == pytest.approx(1 / (4 * 1.8), rel=0.05)


def test_distribution_validation():
    with pytest.raises(ValueError):
        MixingDistribution("beta", 0.0)
    with pytest.raises(ValueError):
        MixingDistribution("gamma")


def test_beta_inverse_cdf_examples():
    for alpha in (0.3, 1.0, 7.0):
        assert beta_inverse_cdf(alpha, 0.5) == 0.5
    assert beta_inverse_cdf(1.0, 0.8) == pytest.approx(0.8, abs=1e-12)
    assert beta_inverse_cdf(2.0, 0.216) == pytest.approx(invert_beta22(0.216), abs=1e-10)


@pytest.mark.parametrize("alpha", [0.2, 0.5, 1.0, 2.0, 5.0])
def test_beta_inverse_cdf_roundtrip_and_monotone(alpha):
    u = np.linspace(0.0, 0.5, 101)
    x = beta_inverse_cdf(alpha, u)
    np.testing.assert_allclose(beta_cdf(alpha, x), u, atol=1e-10)
    # the upper half is the mirror image; accuracy there is limited by float spacing near 1
    np.testing.assert_allclose(beta_inverse_cdf(alpha, 1.0 - u), 1.0 - x, rtol=0, atol=1e-12)
    full = beta_inverse_cdf(alpha, np.linspace(0.0, 1.0, 201))
    assert np.all(np.diff(full) >= 0)


def test_beta_inverse_cdf_extreme_tail():
    x = beta_inverse_cdf(0.2, 0.995)
    assert 1.0 - 1e-9 < x < 1.0
    assert beta_cdf(0.2, 1.0 - x) == pytest.approx(0.005, rel=1e-6)


def test_beta_inverse_cdf_rejects_bad_input():
    with pytest.raises(ValueError):
        beta_inverse_cdf(2.0, 1.5)
    with pytest.raises(ValueError):
        beta_inverse_cdf(-1.0, 0.5)


def test_beta_inverse_cdf_reports_non_convergence(monkeypatch):
    from lossmix import kernels

    monkeypatch.setattr(kernels, "sym_beta_ppf", lambda alpha, u: np.full_like(u, 0.1))
    with pytest.raises(NumericError) as info:
        beta_inverse_cdf(2.0, 0.3)
    assert info.value.inputs["alpha"] == 2.0 and info.value.inputs["u"] == 0.3


# -- phi --------------------------------------------------------------------------

def test_phi_examples():
    assert phi_eval(MixingFunction(IdentityRho()), 0.3) == pytest.approx(0.3, abs=1e-15)
    assert phi_eval(MixingFunction(PowerRho(2.0)), 0.25) == pytest.approx(0.0625 / 0.625, abs=1e-15)
    phi, e = neural_phi(0)
    for f, emb in [(MixingFunction(IdentityRho()), None), (MixingFunction(PowerRho(7.3)), None), (phi, e)]:
        assert f(0.5, emb) == 0.5
        assert f(1.0, emb) == 1.0 and f(0.0, emb) == 0.0


def test_phi_endpoint_limits_never_nan():
    phi = MixingFunction(PowerRho(2000.0))
    vals = phi_eval(phi, np.array([0.0, 1e-300, 0.3, 0.5, 0.7, 1.0]))
    assert np.all(np.isfinite(vals))
    np.testing.assert_array_equal(vals, [0.0, 0.0, 0.0, 0.5, 1.0, 1.0])


def test_rho_properties():
    for rho in (IdentityRho(), PowerRho(0.2), PowerRho(4.0)):
        assert rho(0.0) == 0.0
        assert np.all(np.diff(rho(GRID)) >= 0)
    phi, e = neural_phi(3)
    assert phi.rho(0.0, e) == 0.0
    assert np.all(np.diff(phi.rho(GRID, e)) >= 0)
    with pytest.raises(ValueError):
        NeuralRho(phi.rho.net, 1.0)
    with pytest.raises(ValueError):
        PowerRho(0.0)


def test_phi_embedding_contract():
    phi, e = neural_phi(1)
    with pytest.raises(ValueError):
        phi_eval(phi, 0.3)
    with pytest.raises(ValueError):
        phi_eval(MixingFunction(IdentityRho()), 0.3, e)


def _check_axioms(phi, emb=None):
    v = np.asarray(phi_eval(phi, GRID, emb))
    mirror = np.asarray(phi_eval(phi, 1.0 - GRID, emb))
    assert abs(phi_eval(phi, 1.0, emb) - 1.0) <= 1e-12
    assert np.max(np.abs(v + mirror - 1.0)) <= 1e-12
    assert np.all(v[:-1] <= v[1:] + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.1, max_value=10.0))
def test_power_phi_axioms(c):
    _check_axioms(MixingFunction(PowerRho(c)))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.floats(min_value=0.1, max_value=20.0))
def test_neural_phi_axioms(seed, scale):
    phi, e = neural_phi(seed, scale=scale)
    _check_axioms(phi, e)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=0.5, max_value=1.0), st.floats(min_value=0.1, max_value=10.0))
def test_phi_symmetry_pointwise(lam, c):
    # 1 - lam is exact on [0.5, 1], so lam and 1 - lam are true mirror images
    phi = MixingFunction(PowerRho(c))
    assert abs(phi(lam) + phi(1.0 - lam) - 1.0) <= 1e-12


def test_neural_rho_exponent():
    assert neural_rho_exponent(0.0, 5.0) == 1.0
    assert neural_rho_exponent(50.0, 5.0) == pytest.approx(5.0, rel=1e-12)
    assert neural_rho_exponent(-50.0, 5.0) == pytest.approx(0.2, rel=1e-12)
    m = np.linspace(-10, 10, 41)
    g = neural_rho_exponent(m, 3.0)
    assert np.all((g > 1 / 3) & (g < 3)) and np.all(np.diff(g) > 0)
    with pytest.raises(ValueError):
        neural_rho_exponent(0.0, 0.5)


# -- differentiable phi -------------------------------------------------------------

def _phi_value(phi, params, lam, e):
    net = phi.rho.net.copy()
    for k, v in params.items():
        net.params()[k][...] = v
    return float(phi_eval(MixingFunction(NeuralRho(net, phi.rho.C)), lam, e))


def _fd_check(phi, lam, e, h=1e-6):
    tape = ad.Tape()
    ev = tape.param("e", e)
    out = phi_eval_differentiable(tape, phi, lam, ev)
    assert float(out.value) == phi_eval(phi, lam, e)
    grads = ad.backward(tape, out)
    worst = 0.0
    base = {k: v.copy() for k, v in phi.rho.net.params().items()}
    for name, arr in list(base.items()) + [("e", e)]:
        for idx in np.ndindex(arr.shape):
            plus = {k: v.copy() for k, v in base.items()}
            minus = {k: v.copy() for k, v in base.items()}
            ep, em = e.copy(), e.copy()
            if name == "e":
                ep[idx] += h
                em[idx] -= h
            else:
                plus[name][idx] += h
                minus[name][idx] -= h
            num = (_phi_value(phi, plus, lam, ep) - _phi_value(phi, minus, lam, em)) / (2 * h)
            ana = grads[name][idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-4))
    return worst, grads


def test_phi_differentiable_matches_fd():
    phi, e = neural_phi(11)
    worst, _ = _fd_check(phi, 0.7, e)
    assert worst < 1e-5


def test_phi_differentiable_at_symmetric_exponent():
    # zero weights in the last layer and zero output bias give m = 0, gamma = 1, phi = lam
    phi, e = neural_phi(12)
    phi.rho.net.layers[-1].weight[:] = 0.0
    phi.rho.net.layers[-1].bias[:] = 0.0
    assert phi_eval(phi, 0.3, e) == pytest.approx(0.3, abs=1e-15)
    worst, grads = _fd_check(phi, 0.3, e)
    assert worst < 1e-5
    assert np.any(grads["rho.1.weight"] != 0)


def test_phi_gradient_vanishes_at_midpoint():
    phi, e = neural_phi(13)
    tape = ad.Tape()
    ev = tape.param("e", e)
    grads = ad.backward(tape, phi_eval_differentiable(tape, phi, 0.5, ev))
    for name, g in grads.items():
        assert np.all(g == 0.0), name


def test_phi_differentiable_batched_endpoints():
    phi, _ = neural_phi(14)
    emb = np.random.default_rng(0).normal(size=(4, 4))
    lam = np.array([0.0, 0.2, 1.0, 0.9])
    tape = ad.Tape()
    ev = tape.param("e", emb)
    out = phi_eval_differentiable(tape, phi, lam, ev)
    assert out.value[0] == 0.0 and out.value[2] == 1.0
    g = ad.backward(tape, ad.sum(out))
    assert np.all(np.isfinite(g["e"]))
    assert np.all(g["e"][[0, 2]] == 0.0)


# -- reparameterized estimator ---------------------------------------------------------

def _sample_average(c, u, f):
    return float(np.mean(f(phi_eval(MixingFunction(PowerRho(c)), u))))


@pytest.mark.parametrize("c", [0.4, 1.0, 3.5])
@pytest.mark.parametrize("name,f", [("linear", lambda p: p), ("quadratic", lambda p: p * p),
                                    ("shifted", lambda p: (p - 0.3) * (p - 0.3) * 2.0)])
def test_reparam_matches_common_random_number_fd(c, name, f):
    g, u = reparam_gradient_estimate(f, c, 256, np.random.default_rng(7))
    h = 1e-6
    fd = (_sample_average(c + h, u, f) - _sample_average(c - h, u, f)) / (2 * h)
    assert g == pytest.approx(fd, rel=1e-6)


def test_reparam_deterministic_and_constant_objective():
    a, _ = reparam_gradient_estimate(lambda p: p * p, 2.0, 50, 3)
    b, _ = reparam_gradient_estimate(lambda p: p * p, 2.0, 50, 3)
    assert a == b
    zero, _ = reparam_gradient_estimate(lambda p: 1.0, 2.0, 50, 3)
    assert zero == 0.0
    with pytest.raises(ValueError):
        reparam_gradient_estimate(lambda p: p, 2.0, 0, 3)


def test_reparam_variance_shrinks_like_one_over_n():
    def spread(n):
        return np.var([reparam_gradient_estimate(lambda p: p * p, 2.0, n, seed)[0] for seed in range(100)])

    v1, v100 = spread(1), spread(100)
    assert v100 < v1
    assert 20 < v1 / v100 < 500  # about 100x


# -- curves ----------------------------------------------------------------------------

def test_curve_table_identity():
    assert phi_curve_table(MixingFunction(IdentityRho()), 3) == [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]
    with pytest.raises(ValueError):
        phi_curve_table(MixingFunction(IdentityRho()), 1)


def _slopes(table):
    lam, phi = np.array(table).T
    slope = np.diff(phi) / np.diff(lam)
    return slope[0], slope[len(slope) // 2]


def test_curve_shape_regimes():
    near_end, near_mid = _slopes(phi_curve_table(MixingFunction(PowerRho(3.0)), 101))
    assert near_end < near_mid  # convex rho flattens phi at the endpoints
    near_end, near_mid = _slopes(phi_curve_table(MixingFunction(PowerRho(1 / 3)), 101))
    assert near_mid < near_end  # concave rho flattens phi at the midpoint


def test_curve_csv_format(tmp_path):
    path = tmp_path / "c.csv"
    write_curve_csv(path, phi_curve_table(MixingFunction(PowerRho(3.0)), 5))
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "lambda,phi"
    assert lines[2] == "0.25,0.0357143"  # 1/64 / (1/64 + 27/64) = 1/28


def test_parse_rho():
    assert isinstance(parse_rho("identity"), IdentityRho)
    assert parse_rho("pow:0.33") == PowerRho(0.33)
    for bad in ("pow:", "power:2", "pow:-1"):
        with pytest.raises(ValueError):
            parse_rho(bad)

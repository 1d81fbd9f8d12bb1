import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wentropy import (
    DiscretePMF,
    DomainError,
    Gaussian,
    NumericConfig,
    StructureError,
    Uniform,
    WeightFunction,
    gaussian_wde_closed,
    laplace,
    wde,
    we_discrete,
    weighted_kl,
)
from wentropy.entropy import expfam_rwe, weighted_moments
from wentropy.model import exponential_rate_family, gaussian_location_family

from conftest import SDE_N01

ONE = WeightFunction.constant(1.0)
COIN = DiscretePMF([[0.0], [1.0]], [0.5, 0.5])


def test_discrete_examples():
    assert we_discrete(COIN, ONE) == pytest.approx(math.log(2), abs=1e-15)
    two_zero = WeightFunction.tabulated([0.0, 1.0], [2.0, 0.0])
    assert we_discrete(COIN, two_zero) == pytest.approx(math.log(2), abs=1e-15)
    assert we_discrete(DiscretePMF([[0.0], [1.0]], [1.0, 0.0]), WeightFunction.exponential(3.0)) == 0.0


def test_normal_sde(cfg):
    est = wde(Gaussian([0.0], [[1.0]]), ONE, cfg, method="quadrature")
    assert est.value == pytest.approx(SDE_N01, abs=1e-9)
    assert wde(Gaussian([0.0], [[1.0]]), ONE, cfg).value == pytest.approx(SDE_N01, abs=1e-15)


def test_uniform_sde(cfg):
    assert wde(Uniform(2.0, 5.0), ONE, cfg).value == pytest.approx(math.log(3.0), abs=1e-10)


def test_uniform_with_weight_uses_antiderivative(cfg):
    # h = (Phi(b) - Phi(a)) / L * ln L with Phi(x) = int_0^x phi
    a, b, t = 0.5, 3.0, 0.4
    Phi = lambda x: (math.exp(t * x) - 1) / t
    expected = (Phi(b) - Phi(a)) / (b - a) * math.log(b - a)
    assert wde(Uniform(a, b), WeightFunction.exponential(t), cfg).value == pytest.approx(expected, abs=1e-9)


def test_gaussian_closed_form_constant_weight(cfg):
    C = [[2.0, 0.3], [0.3, 1.0]]
    value, stats = gaussian_wde_closed(C, WeightFunction.constant(2.5, dim=2), cfg)
    exact = 0.5 * math.log((2 * math.pi * math.e) ** 2 * np.linalg.det(C))
    assert value == pytest.approx(2.5 * exact, abs=1e-12)
    assert stats.alpha == pytest.approx(2.5)


def test_gaussian_closed_form_exponential_weight(cfg):
    # E[e^{tX} (-ln f)] for N(0,1) = e^{t^2/2} (h + t^2/2)
    t = 0.5
    value, stats = gaussian_wde_closed([[1.0]], WeightFunction.exponential(t), cfg)
    assert stats.alpha == pytest.approx(math.exp(t * t / 2), abs=1e-15)
    assert value == pytest.approx(1.7495115605311, abs=1e-12)
    assert value == pytest.approx(math.exp(t * t / 2) * (SDE_N01 + t * t / 2), abs=1e-12)


@pytest.mark.parametrize(
    "C, phi",
    [
        ([[1.0]], WeightFunction.gaussian_bump([0.3], 0.8, floor=0.2)),
        ([[1.5, 0.4], [0.4, 0.8]], WeightFunction.exponential([0.2, -0.1])),
        ([[1.0, -0.2], [-0.2, 2.0]], WeightFunction.gaussian_bump([0.0, 0.5], 1.0, floor=0.1)),
    ],
)
def test_closed_form_agrees_with_quadrature(cfg, C, phi):
    value, _ = gaussian_wde_closed(C, phi, cfg)
    d = len(C)
    est = wde(Gaussian(np.zeros(d), C), phi, cfg, method="quadrature")
    assert abs(value - est.value) <= 1e-6


def test_non_spd_rejected(cfg):
    with pytest.raises(StructureError):
        gaussian_wde_closed([[1.0, 2.0], [2.0, 1.0]], ONE, cfg)


def test_weighted_moments_unit_weight(cfg):
    C = np.array([[1.2, 0.2], [0.2, 0.9]])
    stats = weighted_moments(Gaussian([0.0, 0.0], C), WeightFunction.constant(1.0, dim=2), cfg)
    assert stats.alpha == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(stats.Phi, C, atol=1e-8)


def test_kl_examples(cfg):
    f = Gaussian([0.0], [[1.0]])
    assert abs(weighted_kl(f, f, WeightFunction.exponential(0.3), cfg).value) <= 1e-12
    assert weighted_kl(f, Gaussian([1.0], [[1.0]]), ONE, cfg).value == pytest.approx(0.5, abs=1e-9)
    half_line = WeightFunction.indicator([0.0], [math.inf])
    assert abs(weighted_kl(f, f, half_line, cfg).value) <= 1e-12


def test_kl_support_violation(cfg):
    with pytest.raises(DomainError):
        weighted_kl(Uniform(0.0, 2.0), Uniform(0.0, 1.0), ONE, cfg)


def test_expfam_examples(cfg):
    fam = gaussian_location_family(1.0)
    assert expfam_rwe(fam, [0.3], [0.3], WeightFunction.exponential(0.5), cfg).value == pytest.approx(0.0, abs=1e-9)
    assert expfam_rwe(fam, [0.0], [1.0], ONE, cfg).value == pytest.approx(0.5, abs=1e-12)
    w = WeightFunction.exponential(0.4)
    a = expfam_rwe(fam, [0.0], [0.7], w, cfg)
    b = expfam_rwe(fam, [0.0], [0.7], w, cfg, gradient="finite_difference")
    ref = weighted_kl(Gaussian([0.0], [[1.0]]), Gaussian([0.7], [[1.0]]), w, cfg)
    assert abs(a.value - ref.value) <= 10 * (a.abs_error + ref.abs_error) + 1e-9
    assert abs(b.value - ref.value) <= 1e-6


def test_expfam_exponential_rates(cfg):
    # KL(Exp(1) || Exp(2)) = ln(1/2) + 2 - 1
    fam = exponential_rate_family()
    assert expfam_rwe(fam, [-1.0], [-2.0], ONE, cfg).value == pytest.approx(math.log(0.5) + 1.0, abs=1e-12)


@given(st.floats(0.2, 3.0), st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(-0.5, 0.5))
def test_wde_linear_in_the_weight(var, a, b, t):
    cfg = NumericConfig()
    f = laplace(0.0, math.sqrt(var))
    p1, p2 = WeightFunction.exponential(t), WeightFunction.gaussian_bump([0.0], 1.0)
    mixed = WeightFunction.combination([(a, p1), (b, p2)])
    lhs = wde(f, mixed, cfg, method="quadrature").value
    rhs = a * wde(f, p1, cfg, method="quadrature").value + b * wde(f, p2, cfg, method="quadrature").value
    assert lhs == pytest.approx(rhs, abs=1e-8)


@given(st.floats(-1.0, 1.0), st.floats(0.3, 3.0), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_kl_linear_in_the_weight(mu, var, a, b):
    cfg = NumericConfig()
    f, g = Gaussian([0.0], [[1.0]]), Gaussian([mu], [[var]])
    p1, p2 = WeightFunction.sinusoid(), WeightFunction.exponential(0.2)
    mixed = WeightFunction.combination([(a, p1), (b, p2)])
    lhs = weighted_kl(f, g, mixed, cfg).value
    rhs = a * weighted_kl(f, g, p1, cfg).value + b * weighted_kl(f, g, p2, cfg).value
    assert lhs == pytest.approx(rhs, abs=1e-8)


@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.floats(0.0, 0.4))
def test_expfam_matches_weighted_kl(t1, t2, s):
    cfg = NumericConfig()
    fam = gaussian_location_family(1.0)
    w = WeightFunction.exponential(s)
    a = expfam_rwe(fam, [t1], [t2], w, cfg)
    ref = weighted_kl(Gaussian([t1], [[1.0]]), Gaussian([t2], [[1.0]]), w, cfg)
    assert abs(a.value - ref.value) <= 10 * (2 * cfg.quad_abs_tol + a.abs_error + ref.abs_error)


@given(st.floats(0.1, 5.0), st.floats(0.2, 4.0))
def test_closed_form_scales_with_constant_weight(c, var):
    value, _ = gaussian_wde_closed([[var]], WeightFunction.constant(c), NumericConfig())
    assert value == pytest.approx(c * 0.5 * math.log(2 * math.pi * math.e * var), rel=1e-14)

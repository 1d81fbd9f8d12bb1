import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wentropy import DiscretePMF, Gaussian, NumericConfig, StructureError, WeightFunction
from wentropy.fisher import (
    additive_noise_wfim_check,
    gaussian_location,
    gaussian_scale,
    kl_taylor_check,
    laplace_location,
    score_mean,
    wfii_check,
    wfii_terms,
    wfim,
)

ONE = WeightFunction.constant()


# --- weighted Fisher information matrix


def test_wfim_gaussian_location_unweighted():
    J = wfim(gaussian_location(2.0), 0.0, ONE, NumericConfig(rng_seed=1))
    assert J.shape == (1, 1)
    assert J[0, 0] == pytest.approx(0.25, abs=1e-10)


def test_wfim_square_weight():
    # E[X^2 (X - 0)^2] for a standard normal is the fourth moment
    phi = WeightFunction.polynomial([0.0, 0.0, 1.0])
    J = wfim(gaussian_location(1.0), 0.0, phi, NumericConfig(rng_seed=1))
    assert J[0, 0] == pytest.approx(3.0, abs=1e-9)


def test_wfim_constant_weight_scales():
    J = wfim(gaussian_location(1.5), 0.0, WeightFunction.constant(3.0), NumericConfig(rng_seed=1))
    assert J[0, 0] == pytest.approx(3.0 / 1.5**2, abs=1e-9)


def test_wfim_gaussian_scale():
    J = wfim(gaussian_scale(0.0), 1.3, ONE, NumericConfig(rng_seed=1))
    assert J[0, 0] == pytest.approx(2.0 / 1.3**2, rel=1e-8)


@given(
    theta=st.floats(-2.0, 2.0),
    a=st.floats(0.0, 1.0),
    b=st.floats(0.05, 1.0),
)
def test_wfim_psd_for_positive_weights(theta, a, b):
    phi = WeightFunction.polynomial([b, a, 0.3])
    J = wfim(laplace_location(1.0), theta, phi, NumericConfig(rng_seed=2))
    assert np.linalg.eigvalsh(J).min() >= -1e-9


@pytest.mark.parametrize("fam,theta", [
    (gaussian_location(1.0), 0.4),
    (gaussian_scale(0.0), 1.2),
    (laplace_location(2.0), -1.0),
])
def test_score_has_zero_mean(fam, theta):
    e = score_mean(fam, theta, NumericConfig(rng_seed=5, mc_samples=20000))
    assert abs(e.value) <= 3 * e.std_error + 1e-12


# --- KL expansion


def test_kl_taylor_equal_parameters():
    r = kl_taylor_check(gaussian_location(1.0), 0.7, 0.7, WeightFunction.exponential(0.5), NumericConfig(rng_seed=1))
    assert r.gap.value == 0.0
    assert r.verdict == "HOLDS"


def test_kl_taylor_exact_for_gaussian_location():
    # the log-ratio is quadratic in the shift, so the expansion is exact
    r = kl_taylor_check(gaussian_location(1.0), 0.0, 0.4, WeightFunction.exponential(0.5), NumericConfig(rng_seed=1))
    assert r.verdict == "HOLDS"
    assert r.details["negligible"]
    assert max(abs(v) for v in r.details["residuals"]) < 1e-12


def test_kl_taylor_residual_ratio_decays():
    r = kl_taylor_check(gaussian_scale(0.0), 1.0, 1.1, WeightFunction.exponential(0.5), NumericConfig(rng_seed=1))
    ratios = np.abs(r.details["ratios"])
    assert r.verdict == "HOLDS"
    assert r.details["decaying"]
    # first-order residual: each halving roughly halves the ratio
    assert np.all(ratios[1:] / ratios[:-1] < 0.6)


# --- sum inequality


def test_wfii_terms_unweighted_gaussians():
    t = wfii_terms(gaussian_location(1.0), gaussian_location(2.0), 0.0, ONE, NumericConfig(rng_seed=1))
    assert abs(t.M[0, 0]) < 1e-12
    assert abs(t.Xi[0, 0]) < 1e-12
    assert t.J1[0, 0] == pytest.approx(1.0, abs=1e-10)
    assert t.J2[0, 0] == pytest.approx(0.25, abs=1e-10)


def test_wfii_equality_for_gaussians():
    r = wfii_check(gaussian_location(1.0), gaussian_location(2.0), 0.0, ONE, NumericConfig(rng_seed=1))
    assert r.verdict == "HOLDS"
    assert abs(r.gap.value) < 1e-10
    assert r.details["terms"]["J_sum"] == pytest.approx(1 / 5, abs=1e-10)


def test_wfii_gaussian_plus_laplace():
    r = wfii_check(gaussian_location(1.0), laplace_location(1.0), 0.0, ONE, NumericConfig(rng_seed=1))
    assert r.verdict == "HOLDS"
    assert r.details["rhs_minus_xi"] == pytest.approx(0.5, abs=1e-10)
    # J of N(0,1) + Laplace(1), from the erfc closed form of the density
    assert r.details["lhs"] == pytest.approx(0.3684744227254251, abs=1e-9)
    assert r.gap.value > 0.1


def test_wfii_cross_weight_reports_both_signs():
    phi = WeightFunction.monomials([(1.0, [0, 0]), (0.1, [1, 1])], 2)
    r = wfii_check(gaussian_location(1.0), gaussian_location(2.0), 0.0, phi, NumericConfig(rng_seed=1))
    d = r.details
    for key in ("rhs_minus_xi", "rhs_plus_xi", "lhs", "gap_plus_xi", "verdict_plus_xi", "terms"):
        assert key in d
    assert d["rhs_minus_xi"] != d["rhs_plus_xi"]
    assert r.gap.value == pytest.approx(d["rhs_minus_xi"] - d["lhs"], abs=1e-14)
    assert d["gap_plus_xi"] == pytest.approx(d["rhs_plus_xi"] - d["lhs"], abs=1e-14)


def test_wfii_separable_weight_has_no_cross_term():
    psi = WeightFunction.monomials([(1.0, [0, 0]), (0.5, [2, 0])], 2)
    t = wfii_terms(gaussian_location(1.0), gaussian_location(2.0), 0.0, psi, NumericConfig(rng_seed=1))
    assert abs(t.M[0, 0]) < 1e-12


def test_wfii_rejects_proportional_derivatives():
    with pytest.raises(StructureError):
        wfii_terms(gaussian_location(1.0), gaussian_location(1.0), 0.0, ONE, NumericConfig(rng_seed=1))


def test_wfii_random_gaussian_pairs():
    rng = np.random.default_rng(20)
    cfg = NumericConfig(rng_seed=1)
    for s1, s2 in rng.uniform(0.3, 3.0, size=(50, 2)):
        if abs(s1 - s2) < 1e-3:
            continue
        r = wfii_check(gaussian_location(s1), gaussian_location(s2), 0.0, ONE, cfg)
        assert abs(r.gap.value) <= 1e-8, (s1, s2)


# --- additive Gaussian noise


def test_additive_noise_gaussian():
    r = additive_noise_wfim_check(Gaussian([0.0], [[2.0]]), [[1.0]], ONE, NumericConfig(rng_seed=1))
    assert r.verdict == "HOLDS"
    assert r.details["lhs"][0, 0] == pytest.approx(1 / 3, abs=1e-10)
    assert r.details["rhs"][0, 0] == pytest.approx(1 / 3, abs=1e-10)


def test_additive_noise_constant_weight_scales():
    cfg = NumericConfig(rng_seed=1)
    base = additive_noise_wfim_check(Gaussian([0.0], [[2.0]]), [[1.0]], ONE, cfg)
    r = additive_noise_wfim_check(Gaussian([0.0], [[2.0]]), [[1.0]], WeightFunction.constant(3.0), cfg)
    assert r.verdict == "HOLDS"
    assert r.details["lhs"][0, 0] == pytest.approx(3 * base.details["lhs"][0, 0], rel=1e-10)


def test_additive_noise_two_point():
    r = additive_noise_wfim_check(DiscretePMF([[-1.0], [1.0]], [0.5, 0.5]), [[1.0]], ONE, NumericConfig(rng_seed=1))
    assert r.verdict == "HOLDS"
    assert r.gap.value <= r.tolerance_used + 3 * r.gap.std_error


def test_additive_noise_bivariate_monte_carlo():
    X = Gaussian([0.0, 0.0], [[2.0, 0.5], [0.5, 1.0]])
    r = additive_noise_wfim_check(X, np.eye(2), ONE, NumericConfig(rng_seed=3))
    assert r.verdict == "HOLDS"
    assert r.gap.std_error > 0
    exact = np.linalg.inv(np.array([[3.0, 0.5], [0.5, 2.0]]))
    assert np.allclose(r.details["lhs"], exact, atol=5 * r.gap.std_error)

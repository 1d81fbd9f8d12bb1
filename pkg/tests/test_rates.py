import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wentropy import (
    DiscretePMF,
    DomainError,
    MarkovChainSpec,
    NumericConfig,
    StructureError,
    WeightFunction,
    stationary_distribution,
)
from wentropy.entropy import gaussian_wde_closed
from wentropy.rates import (
    ar1_closed_form,
    ar1_covariance,
    ar1_multiplicative_wde,
    empirical_smb,
    iid_additive_we,
    iid_enumerated_we,
    iid_multiplicative_log_we,
    iid_multiplicative_we,
    markov_additive_secondary_rate,
    markov_additive_we,
    markov_entropy_rate,
    markov_multiplicative_log_we,
    markov_multiplicative_rate,
    nonstationary_gaussian_wde,
    nonstationary_scaling_scan,
)

LN2 = math.log(2.0)
COIN = DiscretePMF([[0.0], [1.0]], [0.5, 0.5])
ONE = WeightFunction.constant()
P2 = [[0.9, 0.1], [0.2, 0.8]]


def symbols(k):
    return [[float(i)] for i in range(k)]


def psi_table(values):
    # symbol i carries weight values[i]
    k = len(values)
    if k == 1:
        return WeightFunction.constant(values[0])
    return WeightFunction.tabulated(list(range(k)), list(values))


def markov_bruteforce(P, lam, psi, n, mode):
    """Sum over every path of -phi_n p_n ln p_n, one path at a time."""
    P, lam, psi = np.asarray(P), np.asarray(lam), np.asarray(psi)
    total = 0.0
    for path in itertools.product(range(len(lam)), repeat=n):
        p = lam[path[0]] * np.prod([P[a, b] for a, b in zip(path, path[1:])])
        if p == 0:
            continue
        w = psi[list(path)]
        phi = w.sum() if mode == "additive" else w.prod()
        total -= phi * p * math.log(p)
    return total


# --- i.i.d. sources


def test_fair_coin_additive():
    assert iid_additive_we(COIN, ONE, 3) == pytest.approx(9 * LN2, abs=1e-14)
    assert iid_enumerated_we(COIN, ONE, 3, "additive") == pytest.approx(9 * LN2, abs=1e-14)


def test_single_letter_is_weighted_entropy():
    psi = psi_table([0.5, 1.5])
    expected = -(0.5 * 0.5 * math.log(0.5) + 1.5 * 0.5 * math.log(0.5))
    assert iid_additive_we(COIN, psi, 1) == pytest.approx(expected, abs=1e-14)
    assert iid_multiplicative_we(COIN, psi, 1) == pytest.approx(expected, abs=1e-14)


def test_multiplicative_unit_weight_is_n_entropy():
    p = DiscretePMF(symbols(3), [0.2, 0.3, 0.5])
    H = -sum(m * math.log(m) for m in (0.2, 0.3, 0.5))
    for n in (1, 4, 9):
        assert iid_multiplicative_we(p, ONE, n) == pytest.approx(n * H, rel=1e-13)


def test_multiplicative_constant_two():
    psi = WeightFunction.constant(2.0)
    for n in (1, 3, 6):
        assert iid_multiplicative_we(COIN, psi, n) == pytest.approx(2 ** (n - 1) * n * 2 * LN2, rel=1e-13)


def test_multiplicative_enumeration_n8():
    psi = psi_table([0.5, 1.5])
    assert iid_multiplicative_we(COIN, psi, 8) == pytest.approx(
        iid_enumerated_we(COIN, psi, 8, "multiplicative"), abs=1e-12)


def test_multiplicative_log_form_avoids_overflow():
    psi = WeightFunction.constant(10.0)
    lv = iid_multiplicative_log_we(COIN, psi, 1000)
    assert lv == pytest.approx(math.log(1000) + math.log(10 * LN2) + 999 * math.log(10), rel=1e-13)
    with pytest.raises(DomainError):
        iid_multiplicative_we(COIN, psi, 1000)


def test_enumeration_gate_randomized():
    rng = np.random.default_rng(8)
    for _ in range(60):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(1, 11))
        p = DiscretePMF(symbols(k), rng.dirichlet(np.ones(k)))
        psi = psi_table(rng.uniform(0.1, 3.0, k))
        assert iid_additive_we(p, psi, n) == pytest.approx(iid_enumerated_we(p, psi, n, "additive"), abs=1e-12, rel=1e-12)
        assert iid_multiplicative_we(p, psi, n) == pytest.approx(
            iid_enumerated_we(p, psi, n, "multiplicative"), abs=1e-12, rel=1e-12)


def test_enumeration_guard():
    p = DiscretePMF(symbols(3), [0.2, 0.3, 0.5])
    with pytest.raises(DomainError):
        iid_enumerated_we(p, ONE, 20, "additive")


# --- Markov sources


@pytest.mark.parametrize("mode", ["additive", "multiplicative"])
def test_markov_recursions_match_bruteforce(mode):
    P = [[0.7, 0.2, 0.1], [0.3, 0.3, 0.4], [0.25, 0.25, 0.5]]
    lam, psi = [0.5, 0.2, 0.3], [0.4, 1.3, 2.1]
    mc = MarkovChainSpec(np.array(P), lam, psi)
    grid = [1, 2, 5, 7]
    if mode == "additive":
        got = dict(markov_additive_we(mc, grid))
    else:
        got = {n: math.exp(v) for n, v in markov_multiplicative_log_we(mc, grid)}
    for n in grid:
        assert got[n] == pytest.approx(markov_bruteforce(P, lam, psi, n, mode), rel=1e-12)


def test_perron_frobenius_rate():
    mc = MarkovChainSpec(np.array(P2), None, [2.0, 3.0])
    r = markov_multiplicative_rate(mc, NumericConfig(rng_seed=1))
    # characteristic polynomial of [[1.8, 0.2], [0.6, 2.4]]
    tr, det = 1.8 + 2.4, 1.8 * 2.4 - 0.2 * 0.6
    mu = (tr + math.sqrt(tr * tr - 4 * det)) / 2
    assert r.theoretical["mu"] == pytest.approx(mu, abs=1e-12)
    n, v = r.convergence_trace[-1]
    assert n == 2000
    assert abs(v - math.log(mu)) <= 0.05
    assert r.empirical["secondary_rate_label"] == "ESTIMATE"


@pytest.mark.parametrize("c", [1.0, 2.5])
def test_constant_weight_rate(c):
    mc = MarkovChainSpec(np.array(P2), None, [c, c])
    r = markov_multiplicative_rate(mc, NumericConfig(rng_seed=1))
    assert r.primary_rate == pytest.approx(math.log(c), abs=1e-12)


def test_transfer_recursion_converges_geometrically():
    mc = MarkovChainSpec(np.array(P2), None, [2.0, 3.0])
    r = markov_multiplicative_rate(mc, NumericConfig(rng_seed=1))
    mu, ratio = r.theoretical["mu"], r.theoretical["spectral_ratio"]
    logs = dict(markov_multiplicative_log_we(mc, range(1, 61)))
    # h_n / mu^n is affine in n up to terms of order (|lambda_2| / mu)^n
    g = np.array([math.exp(logs[n] - n * math.log(mu)) for n in range(1, 61)])
    d2 = np.abs(np.diff(g, 2))
    assert d2[41] / d2[40] == pytest.approx(ratio, abs=0.03)
    assert d2[50] < 1e-6 * d2[5]


def test_multiplicative_rate_requires_positive_entries():
    mc = MarkovChainSpec(np.array([[1.0, 0.0], [0.5, 0.5]]), None, [1.0, 2.0])
    with pytest.raises(StructureError):
        markov_multiplicative_rate(mc, NumericConfig(rng_seed=1))


@given(
    rows=st.lists(st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3), min_size=3, max_size=3),
    psi=st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3),
    perm=st.permutations([0, 1, 2]),
)
def test_rate_relabeling_invariance(rows, psi, perm):
    P = np.array(rows)
    P /= P.sum(axis=1, keepdims=True)
    perm = np.array(perm)
    cfg = NumericConfig(rng_seed=1)
    a = markov_multiplicative_rate(MarkovChainSpec(P, None, psi), cfg, [1, 10, 50])
    b = markov_multiplicative_rate(MarkovChainSpec(P[np.ix_(perm, perm)], None, np.array(psi)[perm]), cfg, [1, 10, 50])
    assert a.primary_rate == pytest.approx(b.primary_rate, abs=1e-10)
    for (_, x), (_, y) in zip(a.convergence_trace, b.convergence_trace):
        assert x == pytest.approx(y, abs=1e-10)


def test_additive_secondary_iid_rows():
    m = np.array([0.3, 0.7])
    psi = np.array([0.5, 2.0])
    mc = MarkovChainSpec(np.tile(m, (2, 1)), None, psi)
    r = markov_additive_secondary_rate(mc, 5, NumericConfig(rng_seed=1))
    p = DiscretePMF(symbols(2), m)
    w = psi_table(psi)
    H = -float(m @ np.log(m))
    assert r.primary_rate == pytest.approx(H * float(m @ psi), abs=1e-13)
    # n(n-1) A0 + n A1 reproduces the i.i.d. closed form
    for n in (1, 4, 9):
        assert n * (n - 1) * r.primary_rate + n * r.secondary_rate == pytest.approx(iid_additive_we(p, w, n), abs=1e-12)


def test_additive_secondary_matches_exact_growth():
    mc = MarkovChainSpec(np.array(P2), None, [1.0, 2.5])
    r = markov_additive_secondary_rate(mc, 60, NumericConfig(rng_seed=1))
    A0, A1 = r.primary_rate, r.secondary_rate
    # the built-in trace stops at n = 14; run the exact recursion further
    h = dict(markov_additive_we(mc.with_initial(stationary_distribution(mc)), range(1, 62)))
    resid = [abs(h[n + 1] - h[n] - 2 * n * A0 - A1) for n in (14, 30, 60)]
    assert resid[0] == pytest.approx(abs(r.convergence_trace[-1][1] - A1), abs=1e-12)
    assert resid[1] < 1e-4
    assert resid[2] < 1e-9


def test_additive_unit_weight_uses_entropy_rate():
    mc = MarkovChainSpec(np.array(P2), None, [1.0, 1.0])
    r = markov_additive_secondary_rate(mc, 20, NumericConfig(rng_seed=1))
    pi = np.array([2 / 3, 1 / 3])
    S = -float(np.sum(pi[:, None] * np.array(P2) * np.log(P2)))
    assert r.primary_rate == pytest.approx(S, abs=1e-12)
    assert markov_entropy_rate(mc) == pytest.approx(S, abs=1e-12)


def test_additive_truncation_within_tail_bound():
    mc = MarkovChainSpec(np.array(P2), None, [1.0, 2.5])
    cfg = NumericConfig(rng_seed=1)
    for J in (3, 8, 15):
        a = markov_additive_secondary_rate(mc, J, cfg)
        b = markov_additive_secondary_rate(mc, J + 5, cfg)
        assert abs(a.secondary_rate - b.secondary_rate) <= a.theoretical["tail_bound"] + 1e-15


def test_additive_requires_mixing():
    mc = MarkovChainSpec(np.array([[0.0, 1.0], [1.0, 0.0]]), None, [1.0, 2.0])
    with pytest.raises(StructureError):
        markov_additive_secondary_rate(mc, 5, NumericConfig(rng_seed=1))


# --- empirical traces


def test_smb_fair_coin():
    r = empirical_smb(COIN, ONE, "additive", [100, 1000, 5000], NumericConfig(rng_seed=1))
    assert abs(r.empirical["final_mean"] - LN2) <= 0.02
    assert r.primary_rate == pytest.approx(LN2, abs=1e-14)


def test_smb_markov_unit_weight():
    mc = MarkovChainSpec(np.array(P2), np.array([2 / 3, 1 / 3]))
    r = empirical_smb(mc, None, "additive", [500, 4000], NumericConfig(rng_seed=2))
    assert r.primary_rate == pytest.approx(markov_entropy_rate(mc), abs=1e-12)
    assert abs(r.empirical["final_error"]) <= 4 * r.empirical["final_std_error"] + 0.01


def test_smb_multiplicative_beta():
    psi = psi_table([2.0, 3.0])
    r = empirical_smb(COIN, psi, "multiplicative", [1000, 5000], NumericConfig(rng_seed=3))
    assert r.primary_rate == pytest.approx(0.5 * LN2 + 0.5 * math.log(3.0), abs=1e-14)
    assert abs(r.empirical["final_error"]) <= 0.02


def test_smb_disjoint_seeds_agree():
    grid = [200, 2000]
    a = empirical_smb(COIN, psi_table([1.0, 2.0]), "additive", grid, NumericConfig(rng_seed=10))
    b = empirical_smb(COIN, psi_table([1.0, 2.0]), "additive", grid, NumericConfig(rng_seed=11))
    se = math.hypot(a.empirical["final_std_error"], b.empirical["final_std_error"])
    assert abs(a.empirical["final_mean"] - b.empirical["final_mean"]) <= 3 * se


def test_smb_is_reproducible():
    cfg = NumericConfig(rng_seed=4)
    a = empirical_smb(COIN, ONE, "additive", [50, 500], cfg)
    b = empirical_smb(COIN, ONE, "additive", [50, 500], cfg)
    assert a.convergence_trace == b.convergence_trace


# --- Gaussian examples


def test_nonstationary_small_cases():
    assert nonstationary_gaussian_wde(1.0, [[1.0]]) == pytest.approx(0.5 * math.log(2 * math.pi * math.e))
    n = 7
    assert nonstationary_gaussian_wde(2.0, np.eye(n)) == pytest.approx(n * n * math.log(2 * math.pi * math.e))


def test_nonstationary_growth():
    scan = nonstationary_scaling_scan(1.0, 1.0, [10, 200])
    direct = nonstationary_gaussian_wde(1.0, np.diag(np.arange(1.0, 11.0)))
    assert scan[0]["h"] == pytest.approx(direct, rel=1e-12)
    # the n^2 ln n term dominates slowly; about 0.675 at n = 200
    assert scan[-1]["h_over_n2_log_n"] == pytest.approx(0.675, abs=0.005)


def test_nonstationary_rejects_indefinite():
    with pytest.raises(StructureError):
        nonstationary_gaussian_wde(1.0, [[1.0, 2.0], [2.0, 1.0]])


def test_ar1_unit_weight_matches_closed_form():
    cfg = NumericConfig(rng_seed=1)
    e = ar1_multiplicative_wde(0.6, ONE, 2, cfg)
    exact = gaussian_wde_closed(ar1_covariance(0.6, 2), ONE, cfg)[0]
    assert e.value == pytest.approx(exact, abs=1e-7)


def test_ar1_white_noise():
    cfg = NumericConfig(rng_seed=1)
    e = ar1_multiplicative_wde(0.0, ONE, 3, cfg)
    assert e.value == pytest.approx(3 * 0.5 * math.log(2 * math.pi * math.e), abs=1e-7)


def test_ar1_exponential_weight_three_routes():
    cfg = NumericConfig(rng_seed=5, mc_samples=200000)
    psi = WeightFunction.exponential(0.1)
    quad = ar1_multiplicative_wde(0.5, psi, 3, cfg)
    mc = ar1_multiplicative_wde(0.5, psi, 3, cfg, method="monte_carlo")
    exact = ar1_closed_form(0.5, 0.1, 3)
    assert quad.value == pytest.approx(exact, abs=1e-7)
    assert abs(mc.value - exact) <= 4 * mc.std_error


def test_ar1_rejects_unit_root():
    with pytest.raises(DomainError):
        ar1_multiplicative_wde(1.0, ONE, 2, NumericConfig(rng_seed=1))

"""Weighted entropy rates for i.i.d. and Markov sources.

Additive weights ``phi_n = sum_j psi(x_j)`` grow the weighted entropy like
``n(n-1) A0 + n A1``; multiplicative weights ``phi_n = prod_j psi(x_j)`` grow
it geometrically. Markov quantities come from exact linear recursions over
the alphabet, never from enumerating paths.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .entropy import gaussian_wde_closed, we_discrete
from .model import DiscretePMF, Gaussian, MarkovChainSpec, WeightFunction, simulate_path, stationary_distribution
from .numerics import (
    DomainError,
    Estimate,
    NumericConfig,
    StructureError,
    ValidationError,
    integrate_box,
    power_iteration,
    worker_threads,
)


@dataclass(frozen=True)
class RateReport:
    kind: str  # additive | multiplicative
    primary_rate: float
    secondary_rate: float | None = None
    convergence_trace: list = field(default_factory=list)
    theoretical: dict = field(default_factory=dict)
    empirical: dict = field(default_factory=dict)

    def __post_init__(self):
        ns = [n for n, _ in self.convergence_trace]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("convergence trace must have strictly increasing n")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "primary_rate": self.primary_rate,
            "secondary_rate": self.secondary_rate,
            "convergence_trace": [[int(n), float(v)] for n, v in self.convergence_trace],
            "theoretical": _plain(self.theoretical),
            "empirical": _plain(self.empirical),
        }


def _plain(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, (np.floating, np.integer)):
            v = v.item()
        elif isinstance(v, dict):
            v = _plain(v)
        out[k] = v
    return out


def _check_n(n: int) -> int:
    if int(n) != n or n < 1:
        raise ValidationError("n", "must be an integer >= 1")
    return int(n)


def _symbol_weights(p: DiscretePMF, psi: WeightFunction) -> tuple[np.ndarray, np.ndarray]:
    if not p.is_discrete:
        raise StructureError("rates need a discrete one-digit distribution")
    w = np.asarray(psi(p.points), float)
    if np.any(w < 0):
        raise DomainError("psi must be nonnegative")
    return p.masses, w


# ---------------------------------------------------------------------------
# i.i.d. sources


def shannon_entropy(masses) -> float:
    m = np.asarray(masses, float)
    return float(-np.sum(xlogy(m, m)))


def iid_additive_we(p: DiscretePMF, psi: WeightFunction, n: int) -> float:
    """``n(n-1) S(p) E psi + n H^w_psi(p)``."""
    n = _check_n(n)
    m, w = _symbol_weights(p, psi)
    A0 = shannon_entropy(m) * float(m @ w)
    A1 = we_discrete(p, psi)
    return n * (n - 1) * A0 + n * A1


def iid_multiplicative_log_we(p: DiscretePMF, psi: WeightFunction, n: int) -> float:
    """``ln[n H^w_psi(p) (E psi)^(n-1)]``; ``-inf`` when the weighted entropy vanishes."""
    n = _check_n(n)
    m, w = _symbol_weights(p, psi)
    H = we_discrete(p, psi)
    base = float(m @ w)
    if H <= 0 or (base <= 0 and n > 1):
        return -math.inf
    return math.log(n) + math.log(H) + (n - 1) * (math.log(base) if n > 1 else 0.0)


def iid_multiplicative_we(p: DiscretePMF, psi: WeightFunction, n: int) -> float:
    """``n H^w_psi(p) (E psi)^(n-1)``, assembled in log space."""
    lv = iid_multiplicative_log_we(p, psi, n)
    if lv > 709:
        raise DomainError(f"weighted entropy exp({lv:.6g}) overflows; use the log form")
    return 0.0 if lv == -math.inf else math.exp(lv)


def iid_enumerated_we(p: DiscretePMF, psi: WeightFunction, n: int, mode: str) -> float:
    """Sum of ``-phi_n(x) p_n(x) ln p_n(x)`` over every string of length ``n``."""
    n = _check_n(n)
    m, w = _symbol_weights(p, psi)
    k = m.size
    if k**n > 5_000_000:
        raise DomainError("too many strings to enumerate")
    keep = m > 0
    m, w = m[keep], w[keep]
    logm = np.log(m)
    # per-string sums built one position at a time by broadcasting, k**n entries each
    logp = np.zeros(1)
    phi = np.zeros(1) if mode == "additive" else np.ones(1)
    for _ in range(n):
        logp = (logp[:, None] + logm[None, :]).ravel()
        phi = (phi[:, None] + w[None, :]).ravel() if mode == "additive" else (phi[:, None] * w[None, :]).ravel()
    return float(-np.sum(phi * np.exp(logp) * logp))


# ---------------------------------------------------------------------------
# Markov sources


def _require_positive(mc: MarkovChainSpec) -> None:
    if np.any(mc.transition <= 0):
        raise StructureError("transition probabilities must all be > 0")
    if np.any(mc.psi <= 0):
        raise StructureError("psi must be > 0 on every symbol")


def markov_multiplicative_log_we(mc: MarkovChainSpec, n_grid) -> list[tuple[int, float]]:
    """``ln h^w_n`` for multiplicative weights at each ``n`` in the grid.

    ``u_n(y)`` sums ``phi_n p_n`` and ``v_n(y)`` sums ``phi_n p_n (-ln p_n)``
    over strings ending in ``y``; both are renormalized each step with the
    log-scale accumulated separately.
    """
    grid = sorted({_check_n(n) for n in n_grid})
    P, psi, lam = mc.transition, mc.psi, mc.initial
    logP = np.log(np.where(P > 0, P, 1.0))
    u = psi * lam
    v = -psi * xlogy(lam, lam)
    log_scale = 0.0
    out = []
    n = 1
    for target in grid:
        while n < target:
            nu = (u @ P) * psi
            nv = ((v @ P) - (u @ (P * logP))) * psi
            s = nu.sum()
            u, v = nu / s, nv / s
            log_scale += math.log(s)
            n += 1
        total = v.sum()
        out.append((target, (math.log(total) if total > 0 else -math.inf) + log_scale))
    return out


def markov_multiplicative_rate(mc: MarkovChainSpec, cfg: NumericConfig, n_grid=None) -> RateReport:
    """``(1/n) ln h^w_n -> ln mu`` with ``mu`` the Perron-Frobenius eigenvalue of ``psi(x) p(x, y)``.

    The secondary rate is an estimate: ``h_n / (n mu^(n-1))`` at the largest
    ``n``, which equals ``H^w_psi`` for i.i.d. rows.
    """
    _require_positive(mc)
    M = mc.psi[:, None] * mc.transition
    mu, right, left = power_iteration(M, cfg)
    B0_rate = math.log(mu)
    grid = list(n_grid) if n_grid is not None else [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000]
    logs = markov_multiplicative_log_we(mc, grid)
    trace = [(n, lv / n) for n, lv in logs]
    n_last, l_last = logs[-1]
    B1 = math.exp(l_last - (n_last - 1) * B0_rate - math.log(n_last))
    ev = np.sort(np.abs(np.linalg.eigvals(M)))[::-1]
    ratio = float(ev[1] / ev[0]) if ev.size > 1 else 0.0
    pi = stationary_distribution(mc)
    return RateReport(
        "multiplicative",
        B0_rate,
        B1,
        trace,
        theoretical={
            "B0_rate": B0_rate,
            "mu": mu,
            "B0_base_stationary": float(pi @ mc.psi),
            "spectral_ratio": ratio,
            "right_eigenvector": right,
            "left_eigenvector": left,
        },
        empirical={
            "final_trace": trace[-1][1],
            "final_error": trace[-1][1] - B0_rate,
            "secondary_rate_label": "ESTIMATE",
        },
    )


def markov_additive_we(mc: MarkovChainSpec, n_grid) -> list[tuple[int, float]]:
    """Exact ``h^w_n`` for additive weights by a four-vector recursion.

    Over strings ending in ``y``: ``P`` sums ``p_n``, ``A`` sums ``phi_n p_n``,
    ``B`` sums ``p_n (-ln p_n)`` and ``C`` sums ``phi_n p_n (-ln p_n)``.
    """
    grid = sorted({_check_n(n) for n in n_grid})
    T, psi, lam = mc.transition, mc.psi, mc.initial
    L = -np.log(np.where(T > 0, T, 1.0))
    TL = T * L
    P = lam.copy()
    A = psi * lam
    B = -xlogy(lam, lam)
    C = psi * B
    out = []
    n = 1
    for target in grid:
        while n < target:
            nP = P @ T
            nA = A @ T + psi * nP
            nB = B @ T + P @ TL
            nC = C @ T + psi * (B @ T) + A @ TL + psi * (P @ TL)
            P, A, B, C = nP, nA, nB, nC
            n += 1
        out.append((target, float(C.sum())))
    return out


def markov_entropy_rate(mc: MarkovChainSpec) -> float:
    pi = stationary_distribution(mc)
    T = mc.transition
    return float(-np.sum(pi[:, None] * xlogy(T, T)))


def _second_eigen_modulus(T: np.ndarray) -> float:
    ev = np.sort(np.abs(np.linalg.eigvals(T)))[::-1]
    return float(ev[1]) if ev.size > 1 else 0.0


def markov_additive_secondary_rate(mc: MarkovChainSpec, J: int, cfg: NumericConfig) -> RateReport:
    """Primary and secondary rates for ``phi_n = sum psi(x_j)`` on a stationary chain.

    ``A0 = E_pi psi * S`` and ``A1 = E_pi psi * H(pi) - sum_{|k| <= J} c_k`` with
    the centred lag terms ``c_k = E[psi(X_0) ln p(X_{k-1}, X_k)] + A0``. The
    tail beyond ``J`` is bounded through the second eigenvalue modulus. The
    exact recursion supplies ``h_{n+1} - h_n - 2 n A0`` for ``n <= 14``.
    """
    if int(J) != J or J < 0:
        raise ValidationError("J", "truncation must be a nonnegative integer")
    T = mc.transition
    pi = stationary_distribution(mc)
    rho = _second_eigen_modulus(T)
    if rho >= 1 - 1e-12:
        raise StructureError("chain is not mixing (second eigenvalue on the unit circle)")
    psi = mc.psi
    S = markov_entropy_rate(mc)
    Epsi = float(pi @ psi)
    A0 = Epsi * S
    g = np.sum(xlogy(T, T), axis=1)  # g(y) = sum_z p(y,z) ln p(y,z)
    joint_log = pi[:, None] * xlogy(T, T)  # pi(y) p(y,z) ln p(y,z)
    cs = {}
    fwd = np.eye(T.shape[0])  # T^(k-1) for k >= 1
    for k in range(1, J + 1):
        cs[k] = float((pi * psi) @ (fwd @ g)) + A0
        fwd = fwd @ T
    back = psi.copy()  # T^(-k) psi for k <= 0
    for k in range(0, -J - 1, -1):
        cs[k] = float(np.sum(joint_log * back[None, :])) + A0
        back = T @ back
    A1 = Epsi * shannon_entropy(pi) - sum(cs.values())
    edge = max(abs(cs.get(J, 0.0)), abs(cs.get(-J, 0.0)))
    tail = 0.0 if rho == 0 else 2 * edge * rho / (1 - rho)

    stat = mc.with_initial(pi)
    exact = markov_additive_we(stat, range(1, 16))
    h = dict(exact)
    trace = [(n, h[n + 1] - h[n] - 2 * n * A0) for n in range(1, 15)]
    return RateReport(
        "additive",
        A0,
        A1,
        trace,
        theoretical={
            "A0": A0,
            "entropy_rate": S,
            "alpha": Epsi,
            "lag_terms": {str(k): cs[k] for k in sorted(cs)},
            "tail_bound": tail,
            "second_eigenvalue_modulus": rho,
            "J": int(J),
        },
        empirical={
            "h_n": [[n, v] for n, v in exact],
            "difference_at_14": trace[-1][1],
            "h14_over_n_minus_A0_term": h[14] / 14 - 13 * A0,
        },
    )


# ---------------------------------------------------------------------------
# empirical SMB-style traces


def _as_chain(source) -> MarkovChainSpec:
    if isinstance(source, MarkovChainSpec):
        return source
    if isinstance(source, DiscretePMF):
        m = source.masses
        return MarkovChainSpec(np.tile(m, (m.size, 1)), m)
    raise StructureError("source must be a Markov chain or a discrete PMF")


def _psi_vector(source, psi) -> np.ndarray:
    if psi is None:
        return _as_chain(source).psi
    if isinstance(psi, WeightFunction):
        if isinstance(source, DiscretePMF):
            return np.asarray(psi(source.points), float)
        return np.asarray(psi(np.arange(_as_chain(source).k, dtype=float)[:, None]), float)
    return np.asarray(psi, float)


def empirical_smb(
    source,
    psi,
    mode: str,
    n_grid,
    cfg: NumericConfig,
    n_paths: int = 20,
) -> RateReport:
    """Path averages of ``I^w / n^2`` (additive) or ``(1/n) ln I^w`` (multiplicative).

    Each path uses its own substream, so results do not depend on the number
    of worker threads.
    """
    if mode not in ("additive", "multiplicative"):
        raise ValidationError("mode", "must be 'additive' or 'multiplicative'")
    mc = _as_chain(source)
    w = _psi_vector(source, psi)
    if w.shape != (mc.k,) or np.any(w < 0):
        raise ValidationError("psi", "one nonnegative weight per symbol")
    if mode == "multiplicative" and np.any(w <= 0):
        raise DomainError("multiplicative weights need psi > 0")
    grid = sorted({_check_n(n) for n in n_grid})
    n_max = grid[-1]
    logT = np.log(np.where(mc.transition > 0, mc.transition, 1.0))
    loglam = np.log(np.where(mc.initial > 0, mc.initial, 1.0))
    idx = np.array(grid) - 1

    def one(j):
        x = simulate_path(mc, n_max, cfg, stream=(51, j))
        step = np.concatenate([[loglam[x[0]]], logT[x[:-1], x[1:]]])
        logp = np.cumsum(step)[idx]
        if mode == "additive":
            phi = np.cumsum(w[x])[idx]
            return -phi * logp / (np.array(grid, float) ** 2)
        logphi = np.cumsum(np.log(w[x]))[idx]
        with np.errstate(divide="ignore"):
            return (logphi + np.log(-logp)) / np.array(grid, float)

    with ThreadPoolExecutor(max_workers=min(worker_threads(), n_paths)) as ex:
        rows = np.array(list(ex.map(one, range(n_paths))))
    mean = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros_like(mean)
    pi = stationary_distribution(mc)
    S = markov_entropy_rate(mc)
    if mode == "additive":
        theory = float(pi @ w) * S
        label = "alpha*S"
    else:
        theory = float(pi @ np.log(w))
        label = "beta"
    trace = [(n, float(v)) for n, v in zip(grid, mean)]
    return RateReport(
        mode,
        theory,
        None,
        trace,
        theoretical={label: theory, "entropy_rate": S},
        empirical={
            "final_mean": float(mean[-1]),
            "final_std_error": float(se[-1]),
            "std_errors": se,
            "n_paths": n_paths,
            "final_error": float(mean[-1] - theory),
        },
    )


# ---------------------------------------------------------------------------
# Gaussian examples


def nonstationary_gaussian_wde(alpha_w: float, C) -> float:
    """``(alpha_w n / 2)[n ln(2 pi e) + ln det C_n]`` for the constant weight ``alpha_w n``."""
    C = np.atleast_2d(np.asarray(C, float))
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise StructureError("C must be square")
    if not np.allclose(C, C.T, rtol=1e-12, atol=1e-12):
        raise StructureError("C must be symmetric")
    sign, logdet = np.linalg.slogdet(C)
    if sign <= 0 or np.min(np.linalg.eigvalsh(C)) <= 0:
        raise StructureError("C must be positive definite")
    n = C.shape[0]
    return 0.5 * alpha_w * n * (n * math.log(2 * math.pi * math.e) + float(logdet))


def nonstationary_scaling_scan(alpha_w: float, c: float, n_grid) -> list[dict]:
    """``h_n`` for ``C_n = diag(c, 2c, ..., nc)`` against the ``n^2`` and ``n^2 ln n`` scales."""
    out = []
    for n in n_grid:
        n = _check_n(n)
        # ln det = n ln c + ln n!
        logdet = n * math.log(c) + math.lgamma(n + 1)
        h = 0.5 * alpha_w * n * (n * math.log(2 * math.pi * math.e) + logdet)
        out.append({
            "n": n,
            "h": h,
            "h_over_n2": h / n**2,
            "h_over_n2_log_n": h / (n**2 * math.log(n)) if n > 1 else math.nan,
        })
    return out


def ar1_covariance(a: float, n: int) -> np.ndarray:
    """Stationary AR(1) covariance with unit innovation variance: ``a^|i-j| / (1 - a^2)``."""
    i = np.arange(n)
    return a ** np.abs(i[:, None] - i[None, :]) / (1 - a * a)


def ar1_multiplicative_wde(
    a: float, psi: WeightFunction, n: int, cfg: NumericConfig, method: str = "auto"
) -> Estimate:
    """Weighted entropy of ``n`` consecutive values of a stationary AR(1) with ``prod psi(x_j)``.

    ``-ln f_n(x) = (x^T Q x - ln(1 - a^2) + n ln 2 pi) / 2`` with the
    tridiagonal precision ``Q``. Quadrature for ``n <= 3``, Monte Carlo
    (stream 61) otherwise or when requested.
    """
    n = _check_n(n)
    if not abs(a) < 1:
        raise DomainError("|a| must be < 1 for stationarity")
    Q = np.diag(np.r_[1.0, np.full(max(n - 2, 0), 1 + a * a), 1.0][:n]) if n > 1 else np.eye(1) * (1 - a * a)
    if n > 1:
        Q[np.arange(n - 1), np.arange(1, n)] = -a
        Q[np.arange(1, n), np.arange(n - 1)] = -a
    const = -math.log(1 - a * a) + n * math.log(2 * math.pi)

    def integrand_over_f(x):
        w = np.prod(np.stack([psi(x[:, [j]]) for j in range(n)], axis=1), axis=1)
        quad = np.einsum("ij,jk,ik->i", x, Q, x)
        return 0.5 * w * (quad + const)

    G = Gaussian(np.zeros(n), ar1_covariance(a, n))
    if method == "auto":
        method = "quadrature" if n <= 3 else "monte_carlo"
    if method == "quadrature":
        if n > 3:
            raise DomainError("quadrature is limited to n <= 3")
        # whitened coordinates x = L z make the density a product of standard normals
        Lc = np.linalg.cholesky(G.cov)
        k = 9.0
        box = [(-k, k)] * n
        std = lambda z: np.exp(-0.5 * np.sum(z * z, axis=1)) / (2 * math.pi) ** (n / 2)
        est = integrate_box(lambda z: integrand_over_f(z @ Lc.T) * std(z), box, cfg)
        return Estimate(est.value, 0.0, "quadrature", est.abs_error + n * math.erfc(k / math.sqrt(2)))
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    rng = cfg.rng(61)
    x = G.sample(cfg.mc_samples, rng)
    vals = integrand_over_f(x)
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)), "monte_carlo")


def ar1_closed_form(a: float, t: float, n: int) -> float:
    """Exact value for ``psi(x) = exp(t x)``: the product weight is ``exp(t sum x_j)``."""
    C = ar1_covariance(a, n)
    w = WeightFunction.exponential([t] * n) if t != 0 else WeightFunction.constant(1.0)
    return gaussian_wde_closed(C, w, NumericConfig())[0]


__all__ = [
    "RateReport",
    "shannon_entropy",
    "iid_additive_we",
    "iid_multiplicative_we",
    "iid_multiplicative_log_we",
    "iid_enumerated_we",
    "markov_multiplicative_log_we",
    "markov_multiplicative_rate",
    "markov_additive_we",
    "markov_entropy_rate",
    "markov_additive_secondary_rate",
    "empirical_smb",
    "nonstationary_gaussian_wde",
    "nonstationary_scaling_scan",
    "ar1_covariance",
    "ar1_multiplicative_wde",
    "ar1_closed_form",
]

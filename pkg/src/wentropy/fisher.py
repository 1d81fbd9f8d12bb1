"""Weighted Fisher information: matrices, the KL link, the sum inequality and additive noise."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from .entropy import weighted_kl
from .inequalities import (
    HOLDS,
    VIOLATED,
    CheckReport,
    Hypothesis,
    build_report,
)
from .model import (
    Distribution,
    ExponentialFamilySpec,
    Gaussian,
    WeightFunction,
    check_spd,
    convolve,
    effective_sigmas,
    gauss_legendre_nodes,
    integrate_vector,
    laplace,
)
from .numerics import (
    DomainError,
    Estimate,
    NumericConfig,
    StructureError,
    mc_expectation,
    tensor_quadrature,
)

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class ParametricFamily:
    """Family ``theta -> f_theta`` with its score and ``D^2_theta f / f``.

    ``location`` marks translation families ``f_theta(x) = f_0(x - theta)``;
    for those the parameter score equals minus the spatial score.
    """

    dist: Callable[[np.ndarray], Distribution]
    m: int
    score_fn: Callable | None = None
    d2f_fn: Callable | None = None
    location: bool = False
    name: str = "generic"
    fd_step: float = 1e-4

    def at(self, theta) -> Distribution:
        return self.dist(self._theta(theta))

    def _theta(self, theta):
        th = np.atleast_1d(np.asarray(theta, float))
        if th.shape != (self.m,):
            raise StructureError(f"parameter must have length {self.m}")
        return th

    def score(self, x, theta) -> np.ndarray:
        """``(n, m)`` score ``d/dtheta ln f_theta(x)``, zero where ``f_theta = 0``."""
        th = self._theta(theta)
        x = np.asarray(x, float)
        if self.score_fn is not None:
            s = np.asarray(self.score_fn(x, th), float).reshape(x.shape[0], self.m)
        else:
            s = np.stack([self._richardson(x, th, i) for i in range(self.m)], axis=1)
        alive = np.isfinite(self.at(th).logpdf(x))
        return np.where(alive[:, None], s, 0.0)

    def d2f_over_f(self, x, theta) -> np.ndarray:
        """``(n, m, m)`` array of ``D^2_theta f_theta(x) / f_theta(x)``."""
        th = self._theta(theta)
        x = np.asarray(x, float)
        if self.d2f_fn is not None:
            return np.asarray(self.d2f_fn(x, th), float).reshape(x.shape[0], self.m, self.m)
        h = self.fd_step * max(1.0, float(np.linalg.norm(th)))
        s0 = self.score(x, th)
        out = np.empty((x.shape[0], self.m, self.m))
        for j in range(self.m):
            e = np.zeros(self.m)
            e[j] = h
            ds = (self.score(x, th + e) - self.score(x, th - e)) / (2 * h)
            out[:, :, j] = ds
        # D^2 f / f = D^2 ln f + S S^T
        return out + s0[:, :, None] * s0[:, None, :]

    def _richardson(self, x, th, i):
        def d(h):
            e = np.zeros(self.m)
            e[i] = h
            return (self.dist(th + e).logpdf(x) - self.dist(th - e).logpdf(x)) / (2 * h)

        h = self.fd_step * max(1.0, float(np.linalg.norm(th)))
        return (4 * d(h / 2) - d(h)) / 3


def gaussian_location(sigma: float = 1.0) -> ParametricFamily:
    s2 = float(sigma) ** 2
    return ParametricFamily(
        lambda th: Gaussian(th, [[s2]]),
        1,
        lambda x, th: (x[:, 0] - th[0]) / s2,
        lambda x, th: ((x[:, 0] - th[0]) ** 2 / s2**2 - 1 / s2),
        location=True,
        name="gaussian_location",
    )


def gaussian_scale(mean: float = 0.0) -> ParametricFamily:
    """``N(mean, theta^2)`` parametrised by the standard deviation."""

    def score(x, th):
        s = th[0]
        return -1 / s + (x[:, 0] - mean) ** 2 / s**3

    def d2f(x, th):
        s = th[0]
        z2 = (x[:, 0] - mean) ** 2
        return 1 / s**2 - 3 * z2 / s**4 + score(x, th) ** 2

    def dist(th):
        if th[0] <= 0:
            raise DomainError("scale parameter must be > 0")
        return Gaussian([mean], [[th[0] ** 2]])

    return ParametricFamily(dist, 1, score, d2f, name="gaussian_scale")


def laplace_location(scale: float = 1.0) -> ParametricFamily:
    """Laplace translation family; the second derivative ignores the kink's point mass."""
    b = float(scale)
    return ParametricFamily(
        lambda th: laplace(th[0], b),
        1,
        lambda x, th: np.sign(x[:, 0] - th[0]) / b,
        lambda x, th: np.full(x.shape[0], 1 / b**2),
        location=True,
        name="laplace_location",
    )


def from_exponential_family(fam: ExponentialFamilySpec, cfg: NumericConfig) -> ParametricFamily:
    """Score ``T(x) - grad A(theta)``; the Hessian of ``A`` by central differences."""

    def grad_A(th):
        if fam.grad_log_partition is not None:
            return np.asarray(fam.grad_log_partition(th), float)
        return fam.grad_A_weighted(th, WeightFunction.constant(1.0), cfg)

    def score(x, th):
        return fam.stat(x) - grad_A(th)[None, :]

    def d2f(x, th):
        h = 1e-4 * max(1.0, float(np.linalg.norm(th)))
        H = np.empty((fam.m, fam.m))
        for j in range(fam.m):
            e = np.zeros(fam.m)
            e[j] = h
            H[:, j] = (grad_A(th + e) - grad_A(th - e)) / (2 * h)
        s = score(x, th)
        return s[:, :, None] * s[:, None, :] - 0.5 * (H + H.T)[None, :, :]

    return ParametricFamily(lambda th: fam.density(th, cfg), fam.m, score, d2f, name=fam.name)


def generic_family(dist: Callable[[np.ndarray], Distribution], m: int, location: bool = False) -> ParametricFamily:
    """Scores by Richardson-extrapolated central differences of ``ln f_theta``."""
    return ParametricFamily(dist, m, location=location)


# ---------------------------------------------------------------------------
# weighted Fisher information matrix


def _expect_matrix(dist: Distribution, fn, m: int, cfg: NumericConfig, breaks=None, stream=(31,)):
    """``E[fn(X)]`` for ``fn`` returning ``(n, m, m)`` symmetric matrices."""
    iu = np.triu_indices(m)

    def flat(x):
        return fn(x)[:, iu[0], iu[1]]

    if dist.is_discrete:
        vals, err = dist.masses @ flat(dist.points), 0.0
        se = 0.0
    elif dist.dim > 3:
        rng = cfg.rng(*stream)
        s = flat(dist.sample(cfg.mc_samples, rng))
        vals = s.mean(axis=0)
        se = float(np.max(s.std(axis=0, ddof=1)) / math.sqrt(s.shape[0]))
        err = 0.0
    else:
        vals, err = integrate_vector(lambda x: flat(x) * dist.pdf(x)[:, None], dist, cfg, breaks)
        se = 0.0
    out = np.zeros((m, m))
    out[iu] = vals
    out = out + np.triu(out, 1).T
    return out, float(err), se


def wfim(fam: ParametricFamily, theta, phi: WeightFunction, cfg: NumericConfig) -> np.ndarray:
    """``E_theta[phi(X) S S^T]``, symmetrised; raises if clearly not PSD."""
    th = fam._theta(theta)
    dist = fam.at(th)

    def fn(x):
        s = fam.score(x, th)
        return phi(x)[:, None, None] * s[:, :, None] * s[:, None, :]

    J, err, se = _expect_matrix(dist, fn, fam.m, cfg, phi.breakpoints())
    _require_psd(J, err + 3 * se, "weighted Fisher information")
    return J


def _require_psd(J, slack, what):
    ev = np.linalg.eigvalsh(J)
    if ev.min() < -max(1e-9, slack) * max(1.0, float(np.abs(ev).max())):
        raise StructureError(f"{what} is not positive semidefinite (min eigenvalue {ev.min():.3g})")


def score_mean(fam: ParametricFamily, theta, cfg: NumericConfig) -> Estimate:
    """Largest component of ``E_theta S``, by Monte Carlo (should vanish)."""
    th = fam._theta(theta)
    ests = [
        mc_expectation(lambda x, i=i: fam.score(x, th)[:, i], fam.at(th), cfg, stream=(32, i))
        for i in range(fam.m)
    ]
    return max(ests, key=lambda e: abs(e.value) / max(e.std_error, 1e-300))


def kl_taylor_check(
    fam: ParametricFamily,
    theta1: float,
    theta2: float,
    phi: WeightFunction,
    cfg: NumericConfig,
    halvings: int = 3,
) -> CheckReport:
    """Second-order link between weighted KL and the weighted Fisher information.

    For ``delta = theta2 - theta1`` halved ``halvings - 1`` times, the residual
    ``D - [J delta^2 / 2 - E[phi S] delta - E[phi D^2 f / f] delta^2 / 2]`` is
    divided by ``delta^2``; the check passes when these ratios are negligible
    or shrink (one non-monotone step is tolerated).
    """
    if fam.m != 1:
        raise StructureError("kl_taylor_check is defined for scalar parameters")
    t1 = float(theta1)
    base = float(theta2) - t1
    f1 = fam.at([t1])
    J = float(wfim(fam, [t1], phi, cfg)[0, 0])

    def moments(x):
        s = fam.score(x, [t1])[:, 0]
        d2 = fam.d2f_over_f(x, [t1])[:, 0, 0]
        w = phi(x)
        return np.stack([w * s, w * d2], axis=1)

    if f1.is_discrete:
        (es, ed2), err = f1.masses @ moments(f1.points), 0.0
    else:
        (es, ed2), err = integrate_vector(lambda x: moments(x) * f1.pdf(x)[:, None], f1, cfg, phi.breakpoints())
    if base == 0.0:
        gap = Estimate(0.0, 0.0, "closed_form")
        return build_report(
            "kl_taylor", [], gap, cfg, mode="identity",
            details={"J": J, "E_phi_score": es, "E_phi_d2f_over_f": ed2, "deltas": [], "ratios": []},
        )
    deltas, ratios, residuals = [], [], []
    for k in range(halvings):
        delta = base / 2**k
        D = weighted_kl(f1, fam.at([t1 + delta]), phi, cfg).value
        approx = 0.5 * J * delta**2 - es * delta - 0.5 * ed2 * delta**2
        r = D - approx
        deltas.append(delta)
        residuals.append(r)
        ratios.append(r / delta**2)
    noise = 10 * (cfg.quad_abs_tol + err) / min(d * d for d in np.abs(deltas))
    mags = np.abs(ratios)
    negligible = bool(mags.max() <= noise)
    drops = np.sum(mags[1:] > mags[:-1] * 0.75)
    decaying = bool(drops <= 1 and mags[-1] < mags[0])
    ok = negligible or decaying
    gap = Estimate(float(mags[-1]), 0.0, "quadrature", noise)
    return CheckReport(
        "kl_taylor",
        (),
        True,
        gap,
        HOLDS if ok else VIOLATED,
        noise,
        "limit",
        negligible,
        {
            "J": J,
            "E_phi_score": es,
            "E_phi_d2f_over_f": ed2,
            "deltas": deltas,
            "residuals": residuals,
            "ratios": ratios,
            "negligible": negligible,
            "decaying": decaying,
        },
    )


# ---------------------------------------------------------------------------
# weighted Fisher information inequality for sums


@dataclass(frozen=True)
class WfiiTerms:
    """Pieces of the weighted Fisher information inequality for ``X + Y``.

    ``J1``/``J2`` are the informations of ``X``/``Y`` under the reduced weights
    ``phi1(x) = int phi(x + y, y) f2(y) dy`` and ``phi2(y) = int phi(x, x + y) f1(x) dx``;
    ``M = E[phi(X, Y) S1(X) S2(Y)^T]``, ``G = J1^-1 M J2^-1`` and ``Xi`` is the
    correction matrix. ``J_sum`` is the translation information of ``X + Y``
    under the conditional-mean weight ``phibar(u) = E[phi(X, Y) | X + Y = u]``.
    """

    M: np.ndarray
    G: np.ndarray
    Xi: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    J_sum: float | None = None
    abs_error: float = 0.0

    def to_dict(self) -> dict:
        return {
            "M": self.M.tolist(),
            "G": self.G.tolist(),
            "Xi": self.Xi.tolist(),
            "J1": self.J1.tolist(),
            "J2": self.J2.tolist(),
            "J_sum": self.J_sum,
            "abs_error": self.abs_error,
        }


def reduced_weights(phi: WeightFunction, f1: Distribution, f2: Distribution, cfg: NumericConfig, panels: int = 48):
    """Callables ``phi1``, ``phi2`` and ``phibar`` for a weight on pairs ``(x, y)``."""
    x1, w1 = _nodes(f1, cfg, panels)
    x2, w2 = _nodes(f2, cfg, panels)
    p1, p2 = f1.pdf(x1[:, None]) * w1, f2.pdf(x2[:, None]) * w2

    def pair(a, b):
        return phi(np.stack([a.ravel(), b.ravel()], axis=1)).reshape(a.shape)

    def phi1(x):
        x = np.asarray(x, float).reshape(-1)
        return pair(x[:, None] + x2[None, :], np.broadcast_to(x2, (x.size, x2.size))) @ p2

    def phi2(y):
        y = np.asarray(y, float).reshape(-1)
        return pair(np.broadcast_to(x1, (y.size, x1.size)), x1[None, :] + y[:, None]) @ p1

    def phibar(u):
        u = np.asarray(u, float).reshape(-1)
        v = np.broadcast_to(x1, (u.size, x1.size))
        w = u[:, None] - x1[None, :]
        dens = f2.pdf(w.reshape(-1, 1)).reshape(w.shape) * p1[None, :]
        num = (pair(v, w) * dens).sum(axis=1)
        den = dens.sum(axis=1)
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    return phi1, phi2, phibar


def _nodes(f: Distribution, cfg: NumericConfig, panels: int):
    if f.dim != 1:
        raise StructureError("the sum inequality is implemented for scalar variables")
    lo, hi = f.box(effective_sigmas(f, cfg))[0]
    return gauss_legendre_nodes(lo, hi, panels, 20, f.breakpoints()[0])


def _inv(A, what):
    A = np.atleast_2d(A)
    if np.linalg.cond(A) > COND_LIMIT:
        raise StructureError(f"{what} is singular or ill-conditioned")
    return np.linalg.inv(A)


def wfii_terms(
    fam1: ParametricFamily,
    fam2: ParametricFamily,
    theta,
    phi: WeightFunction,
    cfg: NumericConfig,
    with_sum: bool = False,
) -> WfiiTerms:
    """Compute ``J1, J2, M, G, Xi`` by two-dimensional quadrature over ``(x, y)``."""
    if fam1.m != fam2.m:
        raise StructureError("families must share the parameter dimension")
    if phi.kind != "constant" and phi.dim != 2:
        raise StructureError("the weight must be a function of the pair (x, y)")
    m = fam1.m
    th = fam1._theta(theta)
    f1, f2 = fam1.at(th), fam2.at(th)
    if f1.dim != 1 or f2.dim != 1:
        raise StructureError("the sum inequality is implemented for scalar variables")
    _check_not_proportional(fam1, fam2, th, f1, f2, cfg)
    k1, k2 = effective_sigmas(f1, cfg), effective_sigmas(f2, cfg)
    box = [f1.box(k1)[0], f2.box(k2)[0]]
    pb = phi.breakpoints() if phi.kind != "constant" else [[], []]
    breaks = [sorted({*f1.breakpoints()[0], *pb[0]}), sorted({*f2.breakpoints()[0], *pb[1]})]
    iu = np.triu_indices(m)

    def integrand(z):
        x, y = z[:, :1], z[:, 1:]
        s1, s2 = fam1.score(x, th), fam2.score(y, th)
        dens = f1.pdf(x) * f2.pdf(y)
        # J1: phi(x + y, y); J2: phi(x, x + y); M: phi(x, y)
        w1 = phi(np.hstack([x + y, y])) * dens
        w2 = phi(np.hstack([x, x + y])) * dens
        w0 = phi(z) * dens
        o1 = (s1[:, :, None] * s1[:, None, :])[:, iu[0], iu[1]] * w1[:, None]
        o2 = (s2[:, :, None] * s2[:, None, :])[:, iu[0], iu[1]] * w2[:, None]
        om = (s1[:, :, None] * s2[:, None, :]).reshape(z.shape[0], m * m) * w0[:, None]
        return np.hstack([o1, o2, om])

    vals, err = tensor_quadrature(integrand, box, cfg, breaks)
    err += f1.tail_mass(k1) + f2.tail_mass(k2)
    nt = len(iu[0])
    J1, J2 = _sym(vals[:nt], m), _sym(vals[nt : 2 * nt], m)
    M = np.asarray(vals[2 * nt :]).reshape(m, m)
    _require_psd(J1, err, "J1")
    _require_psd(J2, err, "J2")
    J1i, J2i = _inv(J1, "J1"), _inv(J2, "J2")
    G = J1i @ M @ J2i
    Xi = xi_matrix(M, G, J1, J2)
    J_sum = sum_information(fam1, fam2, th, phi, cfg) if with_sum else None
    return WfiiTerms(M, G, Xi, J1, J2, J_sum, float(err))


def _sym(v, m):
    iu = np.triu_indices(m)
    out = np.zeros((m, m))
    out[iu] = v
    return out + np.triu(out, 1).T


def xi_matrix(M, G, J1, J2) -> np.ndarray:
    """Correction matrix, term by term in the stated order.

    The term ``G (I - MG)^-1 M G J2 (M^-1 - G)`` needs ``M^-1``: for scalars it
    is rewritten as ``G^2 J2`` (exact), for ``M = 0`` it vanishes, and a
    singular nonzero ``M`` raises.
    """
    m = M.shape[0]
    I = np.eye(m)
    K = _inv(I - M @ G, "I - M G")
    first = M @ J1 @ G @ K @ M @ (G @ J2 @ G - J1)
    scale = max(1.0, float(np.abs(J1).max()), float(np.abs(J2).max()))
    if not np.any(np.abs(M) > 1e-15 * scale):
        second = np.zeros((m, m))
    elif m == 1:
        second = G @ G @ J2
    else:
        second = G @ K @ M @ G @ J2 @ (_inv(M, "M") - G)
    return first + second - G @ J2 @ G - G


def sum_information(
    fam1: ParametricFamily, fam2: ParametricFamily, theta, phi: WeightFunction, cfg: NumericConfig
) -> float:
    """``E[phibar(U) (d/du ln f_U)^2]`` for ``U = X + Y``.

    Written as ``E[phi(X, Y) rho(X + Y)^2]`` with ``rho`` the score of ``f_U``,
    which is the same integral without forming ``phibar``.
    """
    th = fam1._theta(theta)
    f1, f2 = fam1.at(th), fam2.at(th)
    U = convolve(f1, f2)
    k1, k2 = effective_sigmas(f1, cfg), effective_sigmas(f2, cfg)
    box = [f1.box(k1)[0], f2.box(k2)[0]]
    pb = phi.breakpoints() if phi.kind != "constant" else [[], []]
    breaks = [sorted({*f1.breakpoints()[0], *pb[0]}), sorted({*f2.breakpoints()[0], *pb[1]})]

    def integrand(z):
        x, y = z[:, :1], z[:, 1:]
        rho = U.grad_logpdf(x + y)[:, 0]
        return phi(z) * f1.pdf(x) * f2.pdf(y) * rho**2

    val, _ = tensor_quadrature(integrand, box, cfg, breaks)
    return float(val)


def _check_not_proportional(fam1, fam2, th, f1, f2, cfg, n: int = 801):
    lo = min(f1.box(6)[0][0], f2.box(6)[0][0])
    hi = max(f1.box(6)[0][1], f2.box(6)[0][1])
    x = np.linspace(lo, hi, n)[:, None]
    d1 = f1.pdf(x)[:, None] * fam1.score(x, th)
    d2 = f2.pdf(x)[:, None] * fam2.score(x, th)
    for i in range(fam1.m):
        a, b = d1[:, i], d2[:, i]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0 or abs(a @ b) / (na * nb) > 1 - 1e-6:
            raise StructureError("parameter derivatives of the two densities are proportional")


def wfii_check(
    fam1: ParametricFamily, fam2: ParametricFamily, theta, phi: WeightFunction, cfg: NumericConfig
) -> CheckReport:
    """Weighted Fisher information inequality for ``X + Y`` (scalar parameter).

    ``RHS = (1 - M G) / (1/J1 + 1/J2 - Xi)``; the gap is ``RHS - J_sum``. The
    variant with ``+Xi`` is reported alongside with its own verdict.
    """
    if fam1.m != 1:
        raise StructureError("wfii_check compares scalars; use wfii_terms for matrices")
    terms = wfii_terms(fam1, fam2, theta, phi, cfg, with_sum=True)
    J1, J2, M, G, Xi = (float(a[0, 0]) for a in (terms.J1, terms.J2, terms.M, terms.G, terms.Xi))
    one_minus = 1.0 - M * G
    rhs_minus = one_minus / (1 / J1 + 1 / J2 - Xi)
    rhs_plus = one_minus / (1 / J1 + 1 / J2 + Xi)
    err = 10 * (terms.abs_error + cfg.quad_abs_tol) * max(1.0, rhs_minus)
    lhs = terms.J_sum
    hyps = [Hypothesis("1 - M G", one_minus, ">=0", 0.0, one_minus >= -1e-12)]
    gap = Estimate(rhs_minus - lhs, 0.0, "quadrature", err)
    gap_plus = Estimate(rhs_plus - lhs, 0.0, "quadrature", err)
    plus = build_report("wfii_plus_xi", hyps, gap_plus, cfg)
    report = build_report(
        "wfii",
        hyps,
        gap,
        cfg,
        details={
            "terms": terms.to_dict(),
            "rhs_minus_xi": rhs_minus,
            "rhs_plus_xi": rhs_plus,
            "lhs": lhs,
            "gap_plus_xi": gap_plus.value,
            "verdict_plus_xi": plus.verdict,
        },
    )
    return report


# ---------------------------------------------------------------------------
# additive Gaussian noise


def additive_noise_wfim_check(
    X: Distribution, Sigma, phibar: WeightFunction, cfg: NumericConfig, panels: int = 64
) -> CheckReport:
    """Weighted Fisher information of ``Z = X + N`` against its posterior representation.

    Left side ``E[phibar(Z) grad ln f_Z grad ln f_Z^T]``; right side
    ``Sigma^-1 {E[phibar N N^T] + E + E^T - V} Sigma^-1`` with
    ``V = E[phibar (X - E[X|Z])(X - E[X|Z])^T]`` and
    ``E = E[phibar (Z - E[X|Z])(X - E[X|Z])^T]``. Scalar ``X`` uses quadrature;
    in several dimensions Gaussian or discrete ``X`` use Monte Carlo.
    """
    S = np.atleast_2d(np.asarray(Sigma, float))
    check_spd(S, "Sigma")
    d = S.shape[0]
    if X.dim != d:
        raise StructureError("noise covariance must match the dimension of X")
    noise = Gaussian(np.zeros(d), S)
    Z = convolve(X, noise)
    post = _posterior_mean_fn(X, S, cfg, panels)
    Si = np.linalg.inv(S)
    if d == 1:
        parts, err, se = _noise_terms_quadrature(X, noise, Z, phibar, post, cfg)
    else:
        parts, err, se = _noise_terms_mc(X, noise, Z, phibar, post, cfg)
    lhs, ENN, E, V = parts
    rhs = Si.T @ (ENN + E + E.T - V) @ Si
    diff = lhs - rhs
    resid = float(np.max(np.abs(diff)))
    scale = max(1.0, float(np.abs(lhs).max()))
    gap = Estimate(resid, se, "monte_carlo" if se > 0 else "quadrature", err)
    tol = 10 * (cfg.quad_abs_tol + err) * scale
    return build_report(
        "additive_noise_wfim",
        [],
        gap,
        cfg,
        tol=tol,
        mode="identity",
        details={"lhs": lhs, "rhs": rhs, "E_phi_NN": ENN, "E_phi": E, "V_phi": V},
    )


def _posterior_mean_fn(X: Distribution, S, cfg, panels):
    """``z -> E[X | X + N = z]`` for ``N ~ N(0, S)``."""
    Si = np.linalg.inv(S)
    if isinstance(X, Gaussian):
        K = X.cov @ np.linalg.inv(X.cov + S)
        return lambda z: X.mean + (np.asarray(z) - X.mean) @ K.T
    if X.is_discrete:
        pts, lm = X.points, np.log(np.maximum(X.masses, 1e-300))

        def post(z):
            z = np.asarray(z, float)
            r = z[:, None, :] - pts[None, :, :]
            logw = lm[None, :] - 0.5 * np.einsum("nki,ij,nkj->nk", r, Si, r)
            logw -= logw.max(axis=1, keepdims=True)
            w = np.exp(logw)
            w /= w.sum(axis=1, keepdims=True)
            return w @ pts

        return post
    if X.dim != 1:
        raise StructureError("posterior means in several dimensions need Gaussian or discrete X")
    xs, ws = _nodes(X, cfg, panels)
    px = X.pdf(xs[:, None]) * ws
    s2 = float(S[0, 0])

    def post(z):
        z = np.asarray(z, float).reshape(-1)
        k = np.exp(-0.5 * (z[:, None] - xs[None, :]) ** 2 / s2) * px[None, :]
        return ((k @ xs) / k.sum(axis=1))[:, None]

    return post


def _noise_terms_quadrature(X, noise, Z, phibar, post, cfg):
    """Scalar case: every term as an integral over ``(x, n)`` (a sum over atoms for discrete ``X``)."""
    def lhs_fn(z):
        g = Z.grad_logpdf(z)[:, 0]
        return (phibar(z) * g * g * Z.pdf(z))[:, None]

    lhs, e1 = integrate_vector(lhs_fn, Z, cfg, phibar.breakpoints())

    def terms(x, n):
        z = x + n
        w = phibar(z)
        xh = post(z)[:, 0]
        ex = x[:, 0] - xh
        return np.stack([w * n[:, 0] ** 2, w * (z[:, 0] - xh) * ex, w * ex * ex], axis=1)

    kn = effective_sigmas(noise, cfg)
    nbox = noise.box(kn)[0]
    if X.is_discrete:
        total, err = np.zeros(3), 0.0
        for p, m in zip(X.points, X.masses):
            def fn(nn, p=p):
                return terms(np.full_like(nn, p[0]), nn) * noise.pdf(nn)[:, None]

            v, e = tensor_quadrature(fn, [nbox], cfg)
            total += m * np.asarray(v)
            err += m * e
    else:
        kx = effective_sigmas(X, cfg)

        def fn(zz):
            x, n = zz[:, :1], zz[:, 1:]
            return terms(x, n) * (X.pdf(x) * noise.pdf(n))[:, None]

        total, err = tensor_quadrature(fn, [X.box(kx)[0], nbox], cfg, [X.breakpoints()[0], []])
        err += X.tail_mass(kx)
    ENN, E, V = (np.array([[float(t)]]) for t in total)
    return (np.atleast_2d(lhs), ENN, E, V), float(e1 + err), 0.0


def _noise_terms_mc(X, noise, Z, phibar, post, cfg):
    rng = cfg.rng(33)
    n = cfg.mc_samples
    x = X.sample(n, rng)
    nn = noise.sample(n, rng)
    z = x + nn
    w = phibar(z)
    xh = post(z)
    g = Z.grad_logpdf(z)
    ex = x - xh
    outer = lambda a, b: a[:, :, None] * b[:, None, :]
    samples = [
        w[:, None, None] * outer(g, g),
        w[:, None, None] * outer(nn, nn),
        w[:, None, None] * outer(z - xh, ex),
        w[:, None, None] * outer(ex, ex),
    ]
    means = [s.mean(axis=0) for s in samples]
    se = max(float(np.max(s.std(axis=0, ddof=1))) for s in samples) / math.sqrt(n)
    return tuple(means), 0.0, 2 * se


__all__ = [
    "ParametricFamily",
    "WfiiTerms",
    "additive_noise_wfim_check",
    "from_exponential_family",
    "gaussian_location",
    "gaussian_scale",
    "generic_family",
    "kl_taylor_check",
    "laplace_location",
    "reduced_weights",
    "score_mean",
    "sum_information",
    "wfii_check",
    "wfii_terms",
    "wfim",
    "xi_matrix",
]

"""Weighted entropy, weighted differential entropy and weighted KL divergence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .model import (
    ONE,
    DiscretePMF,
    Distribution,
    ExponentialFamilySpec,
    Gaussian,
    WeightFunction,
    check_spd,
    integrate_density,
    integrate_vector,
)
from .numerics import (
    DomainError,
    Estimate,
    NumericConfig,
    StructureError,
    finite_diff,
    mc_expectation,
)

LOG_2PI = math.log(2 * math.pi)


def we_discrete(p: DiscretePMF, phi: WeightFunction) -> float:
    """``-sum phi(x) p(x) ln p(x)`` with ``0 ln 0 = 0``."""
    if not p.is_discrete:
        raise StructureError("we_discrete needs a discrete PMF")
    return float(-np.sum(phi(p.points) * xlogy(p.masses, p.masses)))


def wde(f: Distribution, phi: WeightFunction, cfg: NumericConfig, method: str = "auto") -> Estimate:
    """Weighted differential entropy ``-int phi f ln f``.

    Quadrature for ``d <= 3``; above that ``-E[phi(X) ln f(X)]`` by Monte Carlo.
    Discrete inputs are routed to :func:`we_discrete`. With ``method="auto"`` a
    Gaussian with a constant or exponential weight uses its exact moments;
    ``method="quadrature"`` forces numerical integration.
    """
    if f.is_discrete:
        return Estimate(we_discrete(f, phi), 0.0, "closed_form")
    _check_dims(f, phi)
    if method not in ("auto", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto" and isinstance(f, Gaussian) and phi.kind in ("constant", "exponential"):
        return Estimate(_gaussian_wde_exact(f, phi), 0.0, "closed_form")
    if f.dim > 3:
        return mc_expectation(lambda x: -phi(x) * f.logpdf(x), f, cfg, stream=(11,))

    def integrand(x):
        p = f.pdf(x)
        return -phi(x) * xlogy(p, p)

    return integrate_density(integrand, f, cfg, phi.breakpoints())


def _gaussian_wde_exact(f: Gaussian, phi: WeightFunction) -> float:
    """Shift ``f`` to mean zero; an exponential weight then picks up a constant factor."""
    if phi.kind == "constant":
        return phi.params["c"] * f.entropy()
    t = np.asarray(phi.params["t"])
    scale = math.exp(float(t @ f.mean))
    value, _ = gaussian_wde_closed(f.cov, phi, NumericConfig())
    return scale * value


def expect_phi(f: Distribution, phi: WeightFunction, cfg: NumericConfig) -> Estimate:
    """``E phi(X)``."""
    if f.is_discrete:
        return f.expect(phi)
    _check_dims(f, phi)
    return f.expect(phi, cfg, phi.breakpoints())


@dataclass(frozen=True)
class GaussianWeightStats:
    """Weighted mass ``alpha = E phi(X)`` and second moment ``Phi = E[phi(X) X X^T]``."""

    alpha: float
    Phi: np.ndarray
    method: str = "quadrature"
    abs_error: float = 0.0

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "Phi": np.asarray(self.Phi).tolist(),
            "method": self.method,
            "abs_error": self.abs_error,
        }


def weighted_moments(f: Distribution, phi: WeightFunction, cfg: NumericConfig) -> GaussianWeightStats:
    """``E phi(X)`` and ``E[phi(X) X X^T]`` (raw, not centred) under ``f``.

    Closed forms for centred Gaussians with constant or exponential weights,
    quadrature up to three dimensions and Monte Carlo beyond.
    """
    _check_dims(f, phi)
    d = f.dim
    if isinstance(f, Gaussian) and not np.any(f.mean):
        C = f.cov
        if phi.kind == "constant":
            c = phi.params["c"]
            return GaussianWeightStats(c, c * C, "closed_form")
        if phi.kind == "exponential":
            t = np.asarray(phi.params["t"])
            Ct = C @ t
            a = math.exp(0.5 * float(t @ Ct))
            return GaussianWeightStats(a, a * (C + np.outer(Ct, Ct)), "closed_form")
    iu = np.triu_indices(d)

    def stacked(x):
        w = phi(x)
        cols = [w] + [w * x[:, i] * x[:, j] for i, j in zip(*iu)]
        return np.stack(cols, axis=1)

    if f.is_discrete:
        vals = f.masses @ stacked(f.points)
        err, method = 0.0, "closed_form"
    elif d > 3:
        rng = cfg.rng(12)
        s = stacked(f.sample(cfg.mc_samples, rng))
        vals = s.mean(axis=0)
        err, method = float(3 * np.max(s.std(axis=0, ddof=1)) / math.sqrt(s.shape[0])), "monte_carlo"
    else:
        vals, err = integrate_vector(lambda x: stacked(x) * f.pdf(x)[:, None], f, cfg, phi.breakpoints())
        method = "quadrature"
    Phi = np.zeros((d, d))
    Phi[iu] = vals[1:]
    Phi = Phi + np.triu(Phi, 1).T
    return GaussianWeightStats(float(vals[0]), Phi, method, float(err))


def gaussian_wde_closed(C, phi: WeightFunction, cfg: NumericConfig) -> tuple[float, GaussianWeightStats]:
    """Weighted entropy of ``N(0, C)`` from its weighted moments.

    ``(alpha / 2) ln[(2 pi)^d det C] + tr(C^-1 Phi) / 2``. For ``phi = exp(t.x)``
    both ``alpha`` and ``Phi`` are exact.
    """
    C = np.atleast_2d(np.asarray(C, float))
    check_spd(C, "C")
    stats = weighted_moments(Gaussian(np.zeros(C.shape[0]), C), phi, cfg)
    d = C.shape[0]
    logdet = float(np.linalg.slogdet(C)[1])
    value = 0.5 * stats.alpha * (d * LOG_2PI + logdet) + 0.5 * float(np.trace(np.linalg.solve(C, stats.Phi)))
    return value, stats


def weighted_kl(f: Distribution, g: Distribution, phi: WeightFunction, cfg: NumericConfig) -> Estimate:
    """``int phi f ln(f / g)`` over ``{f > 0}``.

    Raises :class:`DomainError` naming the first point where ``phi f > 0`` but ``g = 0``.
    """
    if f.is_discrete != g.is_discrete:
        raise StructureError("weighted_kl needs two discrete or two continuous distributions")
    if f.is_discrete:
        return Estimate(_discrete_kl(f, g, phi), 0.0, "closed_form")
    _check_dims(f, phi)
    if f.dim != g.dim:
        raise StructureError("f and g differ in dimension")
    if f.dim > 3:
        def g_mc(x):
            lf, lg = f.logpdf(x), g.logpdf(x)
            _support_guard(x, phi(x) > 0, lg)
            return phi(x) * (lf - lg)

        return mc_expectation(g_mc, f, cfg, stream=(13,))

    def integrand(x):
        lf = f.logpdf(x)
        pos = np.isfinite(lf)
        w = phi(x)
        out = np.zeros(x.shape[0])
        if not pos.any():
            return out
        lg = g.logpdf(x[pos])
        _support_guard(x[pos], w[pos] > 0, lg)
        out[pos] = w[pos] * np.exp(lf[pos]) * (lf[pos] - lg)
        return out

    extra = [sorted({*a, *b}) for a, b in zip(g.breakpoints(), phi.breakpoints())]
    return integrate_density(integrand, f, cfg, extra)


def _support_guard(x, active, lg):
    bad = active & ~np.isfinite(lg)
    if bad.any():
        loc = np.asarray(x)[np.argmax(bad)]
        raise DomainError(f"g vanishes where phi*f > 0, first at x = {loc.tolist()}")


def _discrete_kl(f: DiscretePMF, g: DiscretePMF, phi: WeightFunction) -> float:
    index = {tuple(p): m for p, m in zip(g.points, g.masses)}
    total = 0.0
    w = phi(f.points)
    for p, m, wi in zip(f.points, f.masses, w):
        if m == 0:
            continue
        q = index.get(tuple(p), 0.0)
        if q == 0:
            if wi > 0:
                raise DomainError(f"g vanishes where phi*f > 0, first at x = {list(p)}")
            continue
        total += wi * m * math.log(m / q)
    return float(total)


def expfam_rwe(
    fam: ExponentialFamilySpec,
    theta1,
    theta2,
    phi: WeightFunction,
    cfg: NumericConfig,
    gradient: str = "tilted_mean",
) -> Estimate:
    """Weighted KL between two members of a canonical exponential family.

    ``exp(A_phi(t1) - A(t1)) * (A(t2) - A(t1) - <grad A_phi(t1), t2 - t1>)``
    with ``A_phi(t) = ln int phi h exp(<t, T>)``. The gradient of ``A_phi`` is
    the ``phi``-tilted mean of ``T`` (``gradient="tilted_mean"``) or a central
    finite difference (``gradient="finite_difference"``).
    """
    t1 = np.atleast_1d(np.asarray(theta1, float))
    t2 = np.atleast_1d(np.asarray(theta2, float))
    if t1.shape != (fam.m,) or t2.shape != (fam.m,):
        raise StructureError(f"parameters must have length {fam.m}")
    a1, a2 = fam.A(t1, cfg), fam.A(t2, cfg)
    closed = fam.log_partition is not None
    if phi.kind == "constant":
        c = phi.params["c"]
        if c == 0:
            return Estimate(0.0, 0.0, "closed_form")
        a_phi = math.log(c) + a1
        grad = _grad_A(fam, t1, cfg)
    else:
        closed = False
        a_phi = fam.A_weighted(t1, phi, cfg)
        if gradient == "tilted_mean":
            grad = fam.grad_A_weighted(t1, phi, cfg)
        elif gradient == "finite_difference":
            grad = np.empty(fam.m)
            for i in range(fam.m):
                def ai(s, i=i):
                    th = t1.copy()
                    th[i] = s
                    return fam.A_weighted(th, phi, cfg)

                grad[i] = finite_diff(ai, t1[i], 1, cfg, h=cfg.fd_step * max(1.0, float(np.linalg.norm(t1))) * 100)
        else:
            raise ValueError(f"unknown gradient method {gradient!r}")
    value = math.exp(a_phi - a1) * (a2 - a1 - float(grad @ (t2 - t1)))
    tol = 0.0 if closed else 10 * (cfg.quad_abs_tol + cfg.quad_rel_tol * abs(value))
    return Estimate(value, 0.0, "closed_form" if closed else "quadrature", tol)


def _grad_A(fam, theta, cfg):
    if fam.grad_log_partition is not None:
        return np.asarray(fam.grad_log_partition(theta), float)
    return fam.grad_A_weighted(theta, ONE, cfg)


def _check_dims(f: Distribution, phi: WeightFunction) -> None:
    if phi.kind != "constant" and phi.dim != f.dim:
        raise StructureError(f"weight is {phi.dim}-d but distribution is {f.dim}-d")

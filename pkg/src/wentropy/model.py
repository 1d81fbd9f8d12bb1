"""Weight functions, distributions, exponential families and Markov chains.

Points are passed around as ``(n, d)`` arrays. Weight functions also accept a
flat ``(n,)`` array when ``d == 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .numerics import (
    DomainError,
    Estimate,
    NumericConfig,
    StructureError,
    ValidationError,
    gauss_legendre_nodes,
    integrate_1d,
    is_irreducible,
    mc_expectation,
    tensor_quadrature,
)

WEIGHT_KINDS = (
    "constant",
    "indicator",
    "exponential",
    "polynomial",
    "gaussian_bump",
    "tabulated",
    "sinusoid",
    "combination",
)


def as_points(x, d: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if d in (None, 1) else x.reshape(1, -1)
    return x


# ---------------------------------------------------------------------------
# weight functions


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Nonnegative weight ``phi`` with analytic derivatives where the kind allows.

    Kinds and their parameters:

    * ``constant``: ``c``
    * ``indicator``: ``low``, ``high`` (per-coordinate box, infinities allowed)
    * ``exponential``: ``t`` giving ``exp(t . x)``
    * ``polynomial``: ``coefficients`` (ascending, 1-d) or ``terms`` as
      ``[[coef, [p_1, ..., p_d]], ...]`` for monomials in several variables
    * ``gaussian_bump``: ``center``, ``width``, ``floor``, ``amplitude``
    * ``tabulated``: ``grid``, ``values`` (1-d, linear inside, constant outside)
    * ``sinusoid``: ``offset + amplitude * sin(frequency * x + phase)`` (1-d)
    * ``combination``: ``parts`` as ``[(coef, WeightFunction), ...]``
    """

    kind: str
    params: dict = field(default_factory=dict)
    dim: int = 1

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValidationError("weight.kind", f"unknown weight kind {self.kind!r}")
        p = self.params
        if self.kind == "constant" and p["c"] < 0:
            raise ValidationError("weight.c", "constant weight must be >= 0")
        if self.kind == "gaussian_bump":
            if p.get("width", 1.0) <= 0:
                raise ValidationError("weight.width", "must be > 0")
            if p.get("floor", 0.0) < 0 or p.get("floor", 0.0) + min(p.get("amplitude", 1.0), 0) < 0:
                raise ValidationError("weight.floor", "bump must stay >= 0")
        if self.kind == "tabulated":
            grid, vals = np.asarray(p["grid"], float), np.asarray(p["values"], float)
            if grid.shape != vals.shape or grid.size < 2 or np.any(np.diff(grid) <= 0):
                raise ValidationError("weight.grid", "grid must be increasing and match values")
            if np.any(vals < 0):
                raise ValidationError("weight.values", "tabulated weights must be >= 0")
        if self.kind == "sinusoid" and p.get("offset", 1.0) < abs(p.get("amplitude", 0.0)):
            raise ValidationError("weight.amplitude", "sinusoid must stay >= 0")
        if self.kind == "combination" and any(c < 0 for c, _ in p["parts"]):
            raise ValidationError("weight.parts", "combination coefficients must be >= 0")

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, c: float = 1.0, dim: int = 1) -> "WeightFunction":
        return cls("constant", {"c": float(c)}, dim)

    @classmethod
    def indicator(cls, low, high) -> "WeightFunction":
        low = np.atleast_1d(np.asarray(low, float))
        high = np.atleast_1d(np.asarray(high, float))
        return cls("indicator", {"low": low.tolist(), "high": high.tolist()}, low.size)

    @classmethod
    def exponential(cls, t) -> "WeightFunction":
        t = np.atleast_1d(np.asarray(t, float))
        return cls("exponential", {"t": t.tolist()}, t.size)

    @classmethod
    def polynomial(cls, coefficients: Sequence[float]) -> "WeightFunction":
        return cls("polynomial", {"coefficients": [float(c) for c in coefficients]}, 1)

    @classmethod
    def monomials(cls, terms, dim: int) -> "WeightFunction":
        return cls("polynomial", {"terms": [[float(c), [int(k) for k in pw]] for c, pw in terms]}, dim)

    @classmethod
    def gaussian_bump(cls, center, width: float, floor: float = 0.0, amplitude: float = 1.0) -> "WeightFunction":
        center = np.atleast_1d(np.asarray(center, float))
        return cls(
            "gaussian_bump",
            {"center": center.tolist(), "width": float(width), "floor": float(floor), "amplitude": float(amplitude)},
            center.size,
        )

    @classmethod
    def tabulated(cls, grid, values) -> "WeightFunction":
        return cls("tabulated", {"grid": list(map(float, grid)), "values": list(map(float, values))}, 1)

    @classmethod
    def sinusoid(cls, offset=1.0, amplitude=0.1, frequency=1.0, phase=0.0) -> "WeightFunction":
        return cls(
            "sinusoid",
            {"offset": float(offset), "amplitude": float(amplitude), "frequency": float(frequency), "phase": float(phase)},
            1,
        )

    @classmethod
    def combination(cls, parts) -> "WeightFunction":
        parts = [(float(c), w) for c, w in parts]
        dims = {w.dim for _, w in parts}
        if len(dims) != 1:
            raise ValidationError("weight.parts", "all parts must share a dimension")
        return cls("combination", {"parts": parts}, dims.pop())

    # -- evaluation -------------------------------------------------------

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or (
            self.kind == "exponential" and not np.any(self.params["t"])
        )

    @property
    def has_analytic_derivatives(self) -> bool:
        if self.kind == "combination":
            return all(w.has_analytic_derivatives for _, w in self.params["parts"])
        return self.kind not in ("tabulated", "indicator")

    def __call__(self, x) -> np.ndarray:
        x = as_points(x, self.dim)
        if self.kind == "constant":
            return np.full(x.shape[0], self.params["c"])
        if x.shape[-1] != self.dim:
            raise StructureError(f"weight of dimension {self.dim} evaluated at {x.shape[-1]}-d points")
        k, p = self.kind, self.params
        if k == "indicator":
            lo, hi = np.asarray(p["low"]), np.asarray(p["high"])
            return np.all((x >= lo) & (x <= hi), axis=1).astype(float)
        if k == "exponential":
            return np.exp(x @ np.asarray(p["t"]))
        if k == "polynomial":
            return self._poly(x, 0)
        if k == "gaussian_bump":
            c = np.asarray(p["center"])
            r2 = np.sum((x - c) ** 2, axis=1)
            return p.get("floor", 0.0) + p.get("amplitude", 1.0) * np.exp(-r2 / (2 * p["width"] ** 2))
        if k == "tabulated":
            return np.interp(x[:, 0], p["grid"], p["values"])
        if k == "sinusoid":
            return p["offset"] + p["amplitude"] * np.sin(p["frequency"] * x[:, 0] + p.get("phase", 0.0))
        return sum(c * w(x) for c, w in p["parts"])

    def gradient(self, x) -> np.ndarray:
        """``(n, d)`` gradient; zero almost everywhere for indicators."""
        x = as_points(x, self.dim)
        k, p = self.kind, self.params
        if k in ("constant", "indicator"):
            return np.zeros_like(x)
        if k == "exponential":
            t = np.asarray(p["t"])
            return np.exp(x @ t)[:, None] * t[None, :]
        if k == "polynomial":
            return self._poly(x, 1)
        if k == "gaussian_bump":
            c, w = np.asarray(p["center"]), p["width"]
            g = p.get("amplitude", 1.0) * np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * w * w))
            return -g[:, None] * (x - c) / (w * w)
        if k == "tabulated":
            return self._fd(x, 1)[:, None]
        if k == "sinusoid":
            f, ph = p["frequency"], p.get("phase", 0.0)
            return (p["amplitude"] * f * np.cos(f * x[:, 0] + ph))[:, None]
        return sum(c * w.gradient(x) for c, w in p["parts"])

    def laplacian(self, x) -> np.ndarray:
        """Sum of second partial derivatives (``phi''`` in one dimension)."""
        x = as_points(x, self.dim)
        k, p = self.kind, self.params
        if k in ("constant", "indicator"):
            return np.zeros(x.shape[0])
        if k == "exponential":
            t = np.asarray(p["t"])
            return np.exp(x @ t) * float(t @ t)
        if k == "polynomial":
            return self._poly(x, 2)
        if k == "gaussian_bump":
            c, w = np.asarray(p["center"]), p["width"]
            r2 = np.sum((x - c) ** 2, axis=1)
            g = p.get("amplitude", 1.0) * np.exp(-r2 / (2 * w * w))
            return g * (r2 / w**4 - self.dim / w**2)
        if k == "tabulated":
            return self._fd(x, 2)
        if k == "sinusoid":
            f, ph = p["frequency"], p.get("phase", 0.0)
            return -p["amplitude"] * f * f * np.sin(f * x[:, 0] + ph)
        return sum(c * w.laplacian(x) for c, w in p["parts"])

    def _fd(self, x, order, h=1e-4):
        xs = x[:, 0]
        f = lambda z: self(z)
        if order == 1:
            return (f(xs + h) - f(xs - h)) / (2 * h)
        return (f(xs + h) - 2 * f(xs) + f(xs - h)) / (h * h)

    def _poly(self, x, deriv):
        p = self.params
        if "coefficients" in p:
            poly = np.polynomial.Polynomial(p["coefficients"])
            for _ in range(deriv):
                poly = poly.deriv()
            out = poly(x[:, 0])
            return out[:, None] if deriv == 1 else out
        terms = p["terms"]
        if deriv == 0:
            return sum(c * np.prod(x ** np.asarray(pw), axis=1) for c, pw in terms)
        if deriv == 1:
            g = np.zeros_like(x)
            for c, pw in terms:
                pw = np.asarray(pw)
                for j in range(self.dim):
                    if pw[j]:
                        q = pw.copy()
                        q[j] -= 1
                        g[:, j] += c * pw[j] * np.prod(x**q, axis=1)
            return g
        lap = np.zeros(x.shape[0])
        for c, pw in terms:
            pw = np.asarray(pw)
            for j in range(self.dim):
                if pw[j] >= 2:
                    q = pw.copy()
                    q[j] -= 2
                    lap += c * pw[j] * (pw[j] - 1) * np.prod(x**q, axis=1)
        return lap

    def breakpoints(self) -> list[list[float]]:
        """Discontinuities or kinks per coordinate, used as quadrature cuts."""
        if self.kind == "indicator":
            return [[v for v in (lo, hi) if np.isfinite(v)] for lo, hi in zip(self.params["low"], self.params["high"])]
        if self.kind == "tabulated":
            return [list(self.params["grid"])]
        if self.kind == "combination":
            out = [[] for _ in range(self.dim)]
            for _, w in self.params["parts"]:
                for j, bp in enumerate(w.breakpoints()):
                    out[j].extend(bp)
            return [sorted(set(b)) for b in out]
        return [[] for _ in range(self.dim)]

    @property
    def boundary_warning(self) -> bool:
        """Indicator weights have a measure-zero boundary the integrators cut at."""
        return self.kind == "indicator" or (
            self.kind == "combination" and any(w.boundary_warning for _, w in self.params["parts"])
        )

    def rescaled(self, s: float) -> "WeightFunction":
        """Weight ``x -> phi(s * x)`` in closed form for every kind."""
        s = float(s)
        k, p = self.kind, self.params
        if k == "constant":
            return self
        if k == "indicator":
            lo, hi = np.asarray(p["low"]) / s, np.asarray(p["high"]) / s
            if s < 0:
                lo, hi = hi, lo
            return WeightFunction("indicator", {"low": lo.tolist(), "high": hi.tolist()}, self.dim)
        if k == "exponential":
            return WeightFunction("exponential", {"t": (np.asarray(p["t"]) * s).tolist()}, self.dim)
        if k == "polynomial":
            if "coefficients" in p:
                return WeightFunction.polynomial([c * s**i for i, c in enumerate(p["coefficients"])])
            return WeightFunction("polynomial", {"terms": [[c * s ** sum(pw), pw] for c, pw in p["terms"]]}, self.dim)
        if k == "gaussian_bump":
            return WeightFunction(
                "gaussian_bump",
                {**p, "center": (np.asarray(p["center"]) / s).tolist(), "width": p["width"] / abs(s)},
                self.dim,
            )
        if k == "tabulated":
            g, v = np.asarray(p["grid"]) / s, np.asarray(p["values"])
            if s < 0:
                g, v = g[::-1], v[::-1]
            return WeightFunction.tabulated(g, v)
        if k == "sinusoid":
            return WeightFunction("sinusoid", {**p, "frequency": p["frequency"] * s}, 1)
        return WeightFunction("combination", {"parts": [(c, w.rescaled(s)) for c, w in p["parts"]]}, self.dim)

    def check_positive_somewhere(self, box, n: int = 4096, seed: int = 0) -> bool:
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        pts = lo + (hi - lo) * rng.random((n, len(box)))
        return bool(np.any(self(pts) > 0))

    def min_on(self, box, n: int = 4096, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        pts = lo + (hi - lo) * rng.random((n, len(box)))
        return float(np.min(self(pts)))

    def to_dict(self) -> dict:
        if self.kind == "combination":
            return {"kind": "combination", "parts": [[c, w.to_dict()] for c, w in self.params["parts"]]}
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict, path: str = "weight") -> "WeightFunction":
        d = dict(d)
        kind = d.pop("kind", None)
        try:
            if kind == "constant":
                return cls.constant(d.get("c", 1.0), int(d.get("dim", 1)))
            if kind == "indicator":
                return cls.indicator(_inf_list(d["low"]), _inf_list(d["high"]))
            if kind == "exponential":
                return cls.exponential(d["t"])
            if kind == "polynomial":
                if "terms" in d:
                    return cls.monomials(d["terms"], len(d["terms"][0][1]))
                return cls.polynomial(d["coefficients"])
            if kind == "gaussian_bump":
                return cls.gaussian_bump(d["center"], d["width"], d.get("floor", 0.0), d.get("amplitude", 1.0))
            if kind == "tabulated":
                return cls.tabulated(d["grid"], d["values"])
            if kind == "sinusoid":
                return cls.sinusoid(**d)
            if kind == "combination":
                return cls.combination(
                    [(c, cls.from_dict(w, f"{path}.parts[{i}]")) for i, (c, w) in enumerate(d["parts"])]
                )
        except KeyError as exc:
            raise ValidationError(f"{path}.{exc.args[0]}", "required field missing") from None
        except ValidationError as exc:
            raise ValidationError(path + exc.path[len("weight"):], str(exc).split(": ", 1)[-1]) from None
        raise ValidationError(f"{path}.kind", f"unknown weight kind {kind!r}")

    def __repr__(self):
        return f"WeightFunction({self.to_dict()})"


def _inf_list(v):
    return [float(x) if not isinstance(x, str) else float(x.replace("inf", "inf")) for x in np.atleast_1d(v)]


ONE = WeightFunction.constant(1.0)


# ---------------------------------------------------------------------------
# distributions


class Distribution:
    """Base class; subclasses fix ``kind``."""

    kind: str = "abstract"
    dim: int = 1
    is_discrete: bool = False

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def logpdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def grad_logpdf(self, x) -> np.ndarray:
        """Gradient of ``log f`` in ``x``; finite differences unless overridden."""
        x = as_points(x, self.dim)
        h = 1e-5
        out = np.empty_like(x)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            out[:, j] = (self.logpdf(x + e) - self.logpdf(x - e)) / (2 * h)
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    @property
    def mean(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def cov(self) -> np.ndarray:
        raise NotImplementedError

    def box(self, k: float) -> list[tuple[float, float]]:
        sd = np.sqrt(np.diag(self.cov))
        return [(m - k * s, m + k * s) for m, s in zip(self.mean, sd)]

    def breakpoints(self) -> list[list[float]]:
        return [[] for _ in range(self.dim)]

    def tail_mass(self, k: float) -> float:
        """Upper bound on the probability outside ``box(k)``."""
        return min(1.0, self.dim / (k * k))

    def scaled(self, s: float) -> "Distribution":
        raise NotImplementedError

    def expect(self, fn: Callable[[np.ndarray], np.ndarray], cfg: NumericConfig, extra_breaks=None) -> Estimate:
        """``E[fn(X)]`` by quadrature (d <= 3), exact sum (discrete) or Monte Carlo."""
        return integrate_density(lambda x: fn(x) * self.pdf(x), self, cfg, extra_breaks)

    def to_dict(self) -> dict:
        raise NotImplementedError


def effective_sigmas(dist: Distribution, cfg: NumericConfig) -> float:
    """Truncation half-width in standard deviations.

    Starts at ``cfg.truncation_sigmas`` and widens for heavier tails until the
    neglected mass is below ``cfg.quad_abs_tol * 1e-4``.
    """
    k = cfg.truncation_sigmas
    while dist.tail_mass(k) > cfg.quad_abs_tol * 1e-4 and k < 200:
        k *= 1.25
    return k


def integrate_density(integrand, dist: Distribution, cfg: NumericConfig, extra_breaks=None) -> Estimate:
    """Integrate ``integrand(x)`` (which already contains the density) over ``dist``'s support.

    Falls back to Monte Carlo with ``integrand / pdf`` when ``dim > 3``.
    """
    if dist.is_discrete:
        raise StructureError("integrate_density applies to continuous distributions")
    k = effective_sigmas(dist, cfg)
    box = dist.box(k)
    bps = [list(b) for b in dist.breakpoints()]
    if extra_breaks:
        for j, b in enumerate(extra_breaks):
            bps[j].extend(b)
    tail = dist.tail_mass(k)
    if dist.dim == 1:
        lo, hi = box[0]

        def f1(t):
            return float(np.asarray(integrand(np.array([[t]])), dtype=float).reshape(-1)[0])

        est = integrate_1d(f1, lo, hi, cfg, points=bps[0])
        return Estimate(est.value, 0.0, "quadrature", est.abs_error + tail)
    if dist.dim <= 3:
        value, err = tensor_quadrature(integrand, box, cfg, bps)
        return Estimate(float(value), 0.0, "quadrature", err + tail)
    return mc_expectation(lambda x: integrand(x) / dist.pdf(x), dist, cfg, stream=(101,))


def integrate_vector(fn, f: Distribution, cfg: NumericConfig, extra_breaks=None):
    """Integrate a vector-valued ``fn`` (already carrying the density) over ``f``'s box."""
    k = effective_sigmas(f, cfg)
    box = f.box(k)
    bps = [list(b) for b in f.breakpoints()]
    for j, b in enumerate(extra_breaks or []):
        bps[j].extend(b)
    tail = f.tail_mass(k)
    if f.dim == 1:
        lo, hi = box[0]
        m = np.asarray(fn(np.array([[0.5 * (lo + hi)]]))).shape[1]
        vals, err = np.empty(m), 0.0
        for i in range(m):
            est = integrate_1d(lambda t, i=i: float(fn(np.array([[t]]))[0, i]), lo, hi, cfg, bps[0])
            vals[i] = est.value
            err = max(err, est.abs_error)
        return vals, err + tail
    vals, err = tensor_quadrature(fn, box, cfg, bps)
    return np.asarray(vals), err + tail



class DiscretePMF(Distribution):
    kind = "discrete_pmf"
    is_discrete = True

    def __init__(self, points, masses):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        m = np.asarray(masses, dtype=float)
        if m.ndim != 1 or m.size != pts.shape[0]:
            raise ValidationError("distribution.masses", "one mass per support point")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValidationError("distribution.masses", "masses must be >= 0 and sum to 1")
        self.points, self.masses = pts, m
        self.dim = pts.shape[1]

    def pmf(self) -> np.ndarray:
        return self.masses

    def sample(self, n, rng):
        idx = rng.choice(self.masses.size, size=n, p=self.masses)
        return self.points[idx]

    @property
    def mean(self):
        return self.masses @ self.points

    @property
    def cov(self):
        c = self.points - self.mean
        return (c * self.masses[:, None]).T @ c

    def scaled(self, s):
        return DiscretePMF(self.points * s, self.masses)

    def expect(self, fn, cfg=None, extra_breaks=None):
        return Estimate(float(self.masses @ np.asarray(fn(self.points), float)), 0.0, "closed_form")

    def to_dict(self):
        return {"kind": self.kind, "points": self.points.tolist(), "masses": self.masses.tolist()}


class Gaussian(Distribution):
    kind = "gaussian"

    def __init__(self, mean, cov):
        mu = np.atleast_1d(np.asarray(mean, dtype=float))
        C = np.atleast_2d(np.asarray(cov, dtype=float))
        if C.shape != (mu.size, mu.size):
            raise ValidationError("distribution.cov", "covariance shape must match mean")
        check_spd(C, "distribution.cov")
        self._mean, self._cov = mu, C
        self.dim = mu.size
        self._prec = np.linalg.inv(C)
        self._logdet = float(np.linalg.slogdet(C)[1])

    @property
    def mean(self):
        return self._mean

    @property
    def cov(self):
        return self._cov

    def logpdf(self, x):
        x = as_points(x, self.dim) - self._mean
        q = np.einsum("ni,ij,nj->n", x, self._prec, x)
        return -0.5 * (q + self.dim * math.log(2 * math.pi) + self._logdet)

    def grad_logpdf(self, x):
        x = as_points(x, self.dim) - self._mean
        return -x @ self._prec

    def laplacian_over_pdf(self, x):
        g = self.grad_logpdf(x)
        return np.sum(g * g, axis=1) - np.trace(self._prec)

    def sample(self, n, rng):
        return rng.multivariate_normal(self._mean, self._cov, size=n, method="cholesky")

    def tail_mass(self, k):
        return min(1.0, 2 * self.dim * stats.norm.sf(k))

    def scaled(self, s):
        return Gaussian(self._mean * s, self._cov * s * s)

    def entropy(self) -> float:
        return 0.5 * (self.dim * math.log(2 * math.pi * math.e) + self._logdet)

    def to_dict(self):
        return {"kind": self.kind, "mean": self._mean.tolist(), "cov": self._cov.tolist()}


class Uniform(Distribution):
    kind = "uniform"

    def __init__(self, low, high):
        lo = np.atleast_1d(np.asarray(low, dtype=float))
        hi = np.atleast_1d(np.asarray(high, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValidationError("distribution.high", "need high > low per coordinate")
        self.low, self.high = lo, hi
        self.dim = lo.size
        self._logvol = float(np.sum(np.log(hi - lo)))

    def logpdf(self, x):
        x = as_points(x, self.dim)
        inside = np.all((x >= self.low) & (x <= self.high), axis=1)
        return np.where(inside, -self._logvol, -np.inf)

    def grad_logpdf(self, x):
        return np.zeros_like(as_points(x, self.dim))

    def sample(self, n, rng):
        return self.low + (self.high - self.low) * rng.random((n, self.dim))

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def cov(self):
        return np.diag((self.high - self.low) ** 2 / 12.0)

    def box(self, k):
        return list(zip(self.low, self.high))

    def tail_mass(self, k):
        return 0.0

    def scaled(self, s):
        a, b = self.low * s, self.high * s
        return Uniform(np.minimum(a, b), np.maximum(a, b))

    def entropy(self) -> float:
        return self._logvol

    def to_dict(self):
        return {"kind": self.kind, "low": self.low.tolist(), "high": self.high.tolist()}


class CustomDensity(Distribution):
    """Density given by evaluators; must declare mean and covariance.

    ``spec`` is an optional JSON-able description (for named families) used
    when the distribution is echoed into reports.
    """

    kind = "custom_density"

    def __init__(
        self,
        logpdf: Callable,
        sampler: Callable,
        mean,
        cov,
        support=None,
        breakpoints=None,
        grad_logpdf: Callable | None = None,
        spec: dict | None = None,
        tail=None,
    ):
        self._logpdf = logpdf
        self._sampler = sampler
        self._mean = np.atleast_1d(np.asarray(mean, float))
        self._cov = np.atleast_2d(np.asarray(cov, float))
        self.dim = self._mean.size
        self._support = support
        self._breaks = breakpoints
        self._grad = grad_logpdf
        self._spec = spec or {"kind": "custom_density"}
        self._tail = tail

    def logpdf(self, x):
        return np.asarray(self._logpdf(as_points(x, self.dim)), float)

    def grad_logpdf(self, x):
        if self._grad is not None:
            return np.asarray(self._grad(as_points(x, self.dim)), float).reshape(-1, self.dim)
        return super().grad_logpdf(x)

    def sample(self, n, rng):
        return np.asarray(self._sampler(n, rng), float).reshape(n, self.dim)

    @property
    def mean(self):
        return self._mean

    @property
    def cov(self):
        return self._cov

    def box(self, k):
        if self._support is not None:
            return [tuple(b) for b in self._support]
        return super().box(k)

    def tail_mass(self, k):
        if self._support is not None:
            return 0.0
        if self._tail is not None:
            return self._tail(k)
        return super().tail_mass(k)

    def breakpoints(self):
        if self._breaks is not None:
            return [list(b) for b in self._breaks]
        return super().breakpoints()

    def scaled(self, s):
        s = float(s)
        sup = None
        if self._support is not None:
            sup = [tuple(sorted((lo * s, hi * s))) for lo, hi in self._support]
        brk = None if self._breaks is None else [[b * s for b in bs] for bs in self._breaks]
        grad = None if self._grad is None else (lambda x: np.asarray(self._grad(x / s)) / s)
        return CustomDensity(
            lambda x: self._logpdf(x / s) - self.dim * math.log(abs(s)),
            lambda n, rng: self._sampler(n, rng) * s,
            self._mean * s,
            self._cov * s * s,
            sup,
            brk,
            grad,
            {"kind": "scaled", "factor": s, "base": self._spec},
            None if self._tail is None else self._tail,
        )

    def to_dict(self):
        return dict(self._spec)


def laplace(loc: float = 0.0, scale: float = 1.0) -> CustomDensity:
    """Laplace density; kink at ``loc``."""
    if scale <= 0:
        raise ValidationError("distribution.scale", "must be > 0")
    b = float(scale)
    return CustomDensity(
        lambda x: -np.abs(x[:, 0] - loc) / b - math.log(2 * b),
        lambda n, rng: rng.laplace(loc, b, size=(n, 1)),
        [loc],
        [[2 * b * b]],
        breakpoints=[[loc]],
        grad_logpdf=lambda x: (-np.sign(x[:, 0] - loc) / b)[:, None],
        spec={"kind": "laplace", "loc": loc, "scale": b},
        tail=lambda k: math.exp(-k * math.sqrt(2)),
    )


def mixture(components: Sequence[Distribution], weights: Sequence[float]) -> Distribution:
    """Finite mixture; a mixture of discrete PMFs stays discrete."""
    w = np.asarray(weights, float)
    if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise ValidationError("distribution.weights", "mixture weights must be >= 0 and sum to 1")
    comps = [c for c, wi in zip(components, w) if wi > 0]
    w = w[w > 0]
    if len(comps) == 1:
        return comps[0]
    dims = {c.dim for c in comps}
    if len(dims) != 1:
        raise StructureError("mixture components must share a dimension")
    if all(c.is_discrete for c in comps):
        pts = np.concatenate([c.points for c in comps])
        ms = np.concatenate([wi * c.masses for c, wi in zip(comps, w)])
        return _merge_atoms(pts, ms)
    if any(c.is_discrete for c in comps):
        raise StructureError("cannot mix discrete and continuous components")
    mean = sum(wi * c.mean for c, wi in zip(comps, w))
    second = sum(wi * (c.cov + np.outer(c.mean, c.mean)) for c, wi in zip(comps, w))
    logw = np.log(w)

    def logpdf(x):
        return special.logsumexp(np.stack([lw + c.logpdf(x) for c, lw in zip(comps, logw)]), axis=0)

    def grad(x):
        lp = np.stack([lw + c.logpdf(x) for c, lw in zip(comps, logw)])
        r = np.exp(lp - special.logsumexp(lp, axis=0))
        return sum(r[i][:, None] * c.grad_logpdf(x) for i, c in enumerate(comps))

    def sampler(n, rng):
        idx = rng.choice(len(comps), size=n, p=w)
        out = np.empty((n, comps[0].dim))
        for i, c in enumerate(comps):
            sel = idx == i
            if sel.any():
                out[sel] = c.sample(int(sel.sum()), rng)
        return out

    d = comps[0].dim

    def support(k):
        boxes = [c.box(k) for c in comps]
        return [(min(b[j][0] for b in boxes), max(b[j][1] for b in boxes)) for j in range(d)]

    brk = [sorted({p for c in comps for p in c.breakpoints()[j]}) for j in range(d)]
    # component edges become breakpoints so bounded components are integrated exactly
    for c in comps:
        if c.tail_mass(10.0) == 0.0:
            for j, (lo, hi) in enumerate(c.box(10.0)):
                brk[j] = sorted({*brk[j], lo, hi})
    out = _MixtureDensity(
        logpdf, sampler, mean, second - np.outer(mean, mean), brk, grad,
        {"kind": "mixture", "weights": w.tolist(), "components": [c.to_dict() for c in comps]},
    )
    out._support_fn = support
    out._components = list(zip(w, comps))
    return out


class _MixtureDensity(CustomDensity):
    def __init__(self, logpdf, sampler, mean, cov, brk, grad, spec):
        super().__init__(logpdf, sampler, mean, cov, None, brk, grad, spec)

    def box(self, k):
        return self._support_fn(k)

    def tail_mass(self, k):
        return sum(w * c.tail_mass(k) for w, c in self._components)

    def scaled(self, s):
        return mixture([c.scaled(s) for _, c in self._components], [w for w, _ in self._components])


def _merge_atoms(points, masses):
    keys = {}
    for p, m in zip(map(tuple, points), masses):
        keys[p] = keys.get(p, 0.0) + m
    pts = np.array(list(keys.keys()))
    ms = np.array(list(keys.values()))
    ms = ms / ms.sum()
    return DiscretePMF(pts, ms)


def check_spd(C: np.ndarray, path: str = "cov") -> None:
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or not np.allclose(C, C.T, atol=1e-12):
        raise StructureError(f"{path}: covariance must be a symmetric matrix")
    if np.linalg.eigvalsh(C).min() <= 0:
        raise StructureError(f"{path}: covariance must be positive definite")


def distribution_from_dict(d: dict, path: str = "distribution") -> Distribution:
    d = dict(d)
    kind = d.get("kind")
    try:
        if kind == "discrete_pmf":
            return DiscretePMF(d["points"], d["masses"])
        if kind == "gaussian":
            cov = d["cov"]
            mean = d.get("mean", [0.0] * len(np.atleast_2d(cov)))
            return Gaussian(mean, cov)
        if kind == "uniform":
            return Uniform(d["low"], d["high"])
        if kind == "laplace":
            return laplace(d.get("loc", 0.0), d["scale"])
        if kind == "mixture":
            return mixture(
                [distribution_from_dict(c, f"{path}.components[{i}]") for i, c in enumerate(d["components"])],
                d["weights"],
            )
    except KeyError as exc:
        raise ValidationError(f"{path}.{exc.args[0]}", "required field missing") from None
    except ValidationError as exc:
        raise ValidationError(path + exc.path[len("distribution"):], str(exc).split(": ", 1)[-1]) from None
    raise ValidationError(f"{path}.kind", f"unknown distribution kind {kind!r}")


# ---------------------------------------------------------------------------
# convolution


def convolve(X: Distribution, Y: Distribution, panels: int = 64, order: int = 20) -> Distribution:
    """Distribution of ``X + Y`` for independent ``X`` and ``Y``."""
    if X.dim != Y.dim:
        raise StructureError(f"cannot add a {X.dim}-d and a {Y.dim}-d variable")
    if isinstance(X, Gaussian) and isinstance(Y, Gaussian):
        return Gaussian(X.mean + Y.mean, X.cov + Y.cov)
    if X.is_discrete and Y.is_discrete:
        pts = (X.points[:, None, :] + Y.points[None, :, :]).reshape(-1, X.dim)
        ms = (X.masses[:, None] * Y.masses[None, :]).ravel()
        return _merge_atoms(pts, ms)
    if X.is_discrete or Y.is_discrete:
        atoms, cont = (X, Y) if X.is_discrete else (Y, X)
        return mixture([shifted(cont, p) for p in atoms.points], atoms.masses)
    if isinstance(X, Uniform) and isinstance(Y, Uniform):
        if X.dim == 1:
            return trapezoid(X.low[0], X.high[0], Y.low[0], Y.high[0])
        return product([trapezoid(a, b, c, e) for a, b, c, e in zip(X.low, X.high, Y.low, Y.high)])
    if X.dim != 1:
        raise StructureError("numerical convolution is implemented for d = 1")
    return _numeric_convolution(X, Y, panels, order)


def shifted(X: Distribution, c) -> Distribution:
    c = np.atleast_1d(np.asarray(c, float))
    if not np.any(c):
        return X
    if isinstance(X, Gaussian):
        return Gaussian(X.mean + c, X.cov)
    if isinstance(X, Uniform):
        return Uniform(X.low + c, X.high + c)
    return CustomDensity(
        lambda x: X.logpdf(x - c),
        lambda n, rng: X.sample(n, rng) + c,
        X.mean + c,
        X.cov,
        None if X.tail_mass(10.0) else [(lo + cj, hi + cj) for (lo, hi), cj in zip(X.box(10.0), c)],
        [[b + cj for b in bs] for bs, cj in zip(X.breakpoints(), c)],
        lambda x: X.grad_logpdf(x - c),
        {"kind": "shifted", "shift": c.tolist(), "base": X.to_dict()},
        X.tail_mass,
    )


def trapezoid(a1: float, b1: float, a2: float, b2: float) -> CustomDensity:
    """Density of ``U[a1, b1] + U[a2, b2]``."""
    L1, L2 = b1 - a1, b2 - a2
    A, B = a1 + a2, b1 + b2
    C1, C2 = A + min(L1, L2), A + max(L1, L2)

    def pdf(x):
        x = x[:, 0]
        up = (x - A) / (L1 * L2)
        down = (B - x) / (L1 * L2)
        flat = np.full_like(x, 1.0 / max(L1, L2))
        return np.where((x < A) | (x > B), 0.0, np.minimum(np.minimum(up, down), flat))

    def logpdf(x):
        with np.errstate(divide="ignore"):
            return np.log(pdf(x))

    def grad(x):
        x0 = x[:, 0]
        g = np.where(x0 < C1, 1.0 / np.maximum(x0 - A, 1e-300), np.where(x0 > C2, -1.0 / np.maximum(B - x0, 1e-300), 0.0))
        return g[:, None]

    U1, U2 = Uniform(a1, b1), Uniform(a2, b2)
    return CustomDensity(
        logpdf,
        lambda n, rng: U1.sample(n, rng) + U2.sample(n, rng),
        [0.5 * (A + B)],
        [[(L1 * L1 + L2 * L2) / 12.0]],
        support=[(A, B)],
        breakpoints=[sorted({C1, C2})],
        grad_logpdf=grad,
        spec={"kind": "convolution", "components": [U1.to_dict(), U2.to_dict()]},
    )


def product(marginals: Sequence[Distribution]) -> CustomDensity:
    """Independent coordinates with the given 1-d marginals."""
    boxes = lambda k: [m.box(k)[0] for m in marginals]
    return CustomDensity(
        lambda x: sum(m.logpdf(x[:, [j]]) for j, m in enumerate(marginals)),
        lambda n, rng: np.hstack([m.sample(n, rng) for m in marginals]),
        np.concatenate([m.mean for m in marginals]),
        np.diag([m.cov[0, 0] for m in marginals]),
        support=boxes(10.0) if all(m.tail_mass(10.0) == 0 for m in marginals) else None,
        breakpoints=[m.breakpoints()[0] for m in marginals],
        spec={"kind": "product", "marginals": [m.to_dict() for m in marginals]},
    )


def _numeric_convolution(X, Y, panels, order):
    # nodes are split at X's kinks and support edges; keep the smooth factor as the shifted one
    rough = lambda D: bool(D.breakpoints()[0]) or isinstance(D, Uniform)
    if rough(Y) and not rough(X):
        X, Y = Y, X
    k = 12.0
    while X.tail_mass(k) > 1e-15 and k < 200:
        k *= 1.25
    bx = X.box(k)[0]
    xs, ws = gauss_legendre_nodes(bx[0], bx[1], int(panels * k / 12.0), order, X.breakpoints()[0])
    fx = X.pdf(xs[:, None]) * ws

    # evaluate in blocks so the (points x nodes) matrix stays around 2M entries
    block = max(1, 2_000_000 // xs.size)

    def blocked(kernel):
        def f(u):
            u = u[:, 0]
            out = np.empty(u.size)
            for s in range(0, u.size, block):
                yy = (u[s : s + block, None] - xs[None, :]).reshape(-1, 1)
                out[s : s + block] = kernel(yy).reshape(-1, xs.size) @ fx
            return out

        return f

    pdf = blocked(Y.pdf)
    dpdf = blocked(lambda yy: Y.pdf(yy) * Y.grad_logpdf(yy)[:, 0])

    def logpdf(u):
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(pdf(u), 0.0))

    def grad(u):
        p = pdf(u)
        return (dpdf(u) / np.where(p > 0, p, np.inf))[:, None]

    sup = None
    if X.tail_mass(10.0) == 0 and Y.tail_mass(10.0) == 0:
        (xa, xb), (ya, yb) = X.box(10.0)[0], Y.box(10.0)[0]
        sup = [(xa + ya, xb + yb)]
    brk = sorted({a + b for a in X.breakpoints()[0] for b in Y.breakpoints()[0]})
    return CustomDensity(
        logpdf,
        lambda n, rng: X.sample(n, rng) + Y.sample(n, rng),
        X.mean + Y.mean,
        X.cov + Y.cov,
        support=sup,
        breakpoints=[brk],
        grad_logpdf=grad,
        spec={"kind": "convolution", "components": [X.to_dict(), Y.to_dict()]},
        tail=lambda k: X.tail_mass(k / math.sqrt(2)) + Y.tail_mass(k / math.sqrt(2)),
    )


# ---------------------------------------------------------------------------
# exponential families


@dataclass(frozen=True, eq=False)
class ExponentialFamilySpec:
    """Canonical family ``h(x) exp(<theta, T(x)> - A(theta))``.

    ``log_partition`` may be omitted; it is then computed by quadrature over
    ``support`` (a box per coordinate).
    """

    base_h: Callable[[np.ndarray], np.ndarray]
    sufficient_stat: Callable[[np.ndarray], np.ndarray]
    m: int
    support: Sequence[tuple[float, float]]
    log_partition: Callable[[np.ndarray], float] | None = None
    grad_log_partition: Callable[[np.ndarray], np.ndarray] | None = None
    breakpoints: Sequence[Sequence[float]] | None = None
    name: str = "custom"

    @property
    def dim(self) -> int:
        return len(self.support)

    def stat(self, x) -> np.ndarray:
        return np.asarray(self.sufficient_stat(as_points(x, self.dim)), float).reshape(-1, self.m)

    def A(self, theta, cfg: NumericConfig) -> float:
        theta = np.atleast_1d(np.asarray(theta, float))
        if self.log_partition is not None:
            return float(self.log_partition(theta))
        return self.A_weighted(theta, ONE, cfg)

    def A_weighted(self, theta, phi, cfg: NumericConfig) -> float:
        """``log int phi h exp(<theta, T>)`` by quadrature."""
        theta = np.atleast_1d(np.asarray(theta, float))
        val = self._integrate(lambda x: phi(x) * self._tilt(x, theta), cfg)
        if not val > 0:
            raise DomainError("weighted partition integral is not positive")
        return math.log(val)

    def grad_A_weighted(self, theta, phi, cfg: NumericConfig) -> np.ndarray:
        """Gradient of ``A_phi``: the ``phi``-tilted mean of ``T``."""
        theta = np.atleast_1d(np.asarray(theta, float))
        z = self._integrate(lambda x: phi(x) * self._tilt(x, theta), cfg)
        out = np.empty(self.m)
        for i in range(self.m):
            out[i] = self._integrate(lambda x, i=i: phi(x) * self._tilt(x, theta) * self.stat(x)[:, i], cfg)
        return out / z

    def _tilt(self, x, theta):
        return np.asarray(self.base_h(x), float) * np.exp(self.stat(x) @ theta)

    def _integrate(self, fn, cfg):
        bps = [list(b) for b in (self.breakpoints or [[] for _ in range(self.dim)])]
        if self.dim == 1:
            lo, hi = self.support[0]
            return integrate_1d(lambda t: float(fn(np.array([[t]]))[0]), lo, hi, cfg, bps[0]).value
        value, _ = tensor_quadrature(fn, self.support, cfg, bps)
        return float(value)

    def density(self, theta, cfg: NumericConfig) -> CustomDensity:
        theta = np.atleast_1d(np.asarray(theta, float))
        a = self.A(theta, cfg)
        logpdf = lambda x: np.log(np.asarray(self.base_h(x), float)) + self.stat(x) @ theta - a
        mean = np.array([self._integrate(lambda x, j=j: x[:, j] * np.exp(logpdf(x)), cfg) for j in range(self.dim)])
        cov = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                cov[i, j] = self._integrate(
                    lambda x, i=i, j=j: (x[:, i] - mean[i]) * (x[:, j] - mean[j]) * np.exp(logpdf(x)), cfg
                )

        def sampler(n, rng):
            raise NotImplementedError("sampling from a generic exponential family")

        return CustomDensity(
            logpdf, sampler, mean, cov, support=list(self.support), breakpoints=self.breakpoints,
            spec={"kind": "exponential_family", "name": self.name, "theta": theta.tolist()},
        )


def gaussian_location_family(sigma: float = 1.0, k: float = 12.0) -> ExponentialFamilySpec:
    """``N(x; 0, sigma^2) exp(theta x / sigma^2 - A)``, i.e. ``N(theta, sigma^2)``.

    With ``sigma = 1`` this is the base ``h = N(x; 0, 1)``, ``T(x) = x``,
    ``A(theta) = theta^2 / 2``.
    """
    s2 = sigma * sigma
    return ExponentialFamilySpec(
        base_h=lambda x: stats.norm.pdf(x[:, 0], scale=sigma),
        sufficient_stat=lambda x: x / s2,
        m=1,
        support=[(-k * sigma - 10 * sigma, k * sigma + 10 * sigma)],
        log_partition=lambda th: float(th[0] ** 2 / (2 * s2)),
        grad_log_partition=lambda th: np.array([th[0] / s2]),
        name="gaussian_location",
    )


def exponential_rate_family(upper: float = 200.0) -> ExponentialFamilySpec:
    """Exponential distribution on ``[0, inf)`` with natural parameter ``theta = -rate``."""
    return ExponentialFamilySpec(
        base_h=lambda x: np.ones(x.shape[0]),
        sufficient_stat=lambda x: x,
        m=1,
        support=[(0.0, upper)],
        log_partition=lambda th: float(-math.log(-th[0])),
        grad_log_partition=lambda th: np.array([-1.0 / th[0]]),
        name="exponential_rate",
    )


# ---------------------------------------------------------------------------
# Markov chains


@dataclass(frozen=True, eq=False)
class MarkovChainSpec:
    transition: np.ndarray
    initial: np.ndarray | None = None
    psi: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.transition, float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValidationError("chain.transition", "transition matrix must be square")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1)) > 1e-12:
            raise ValidationError("chain.transition", "rows must be nonnegative and sum to 1")
        object.__setattr__(self, "transition", P)
        k = P.shape[0]
        lam = np.full(k, 1.0 / k) if self.initial is None else np.asarray(self.initial, float)
        if lam.shape != (k,) or np.any(lam < 0) or abs(lam.sum() - 1) > 1e-12:
            raise ValidationError("chain.initial", "initial distribution must be a PMF on the alphabet")
        object.__setattr__(self, "initial", lam)
        psi = np.ones(k) if self.psi is None else np.asarray(self.psi, float)
        if psi.shape != (k,) or np.any(psi < 0):
            raise ValidationError("chain.psi", "one nonnegative weight per symbol")
        object.__setattr__(self, "psi", psi)

    @property
    def k(self) -> int:
        return self.transition.shape[0]

    def with_initial(self, lam) -> "MarkovChainSpec":
        return MarkovChainSpec(self.transition, lam, self.psi)

    def to_dict(self) -> dict:
        return {
            "transition": self.transition.tolist(),
            "initial": self.initial.tolist(),
            "psi": self.psi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, path: str = "chain") -> "MarkovChainSpec":
        try:
            return cls(np.asarray(d["transition"], float), d.get("initial"), d.get("psi"))
        except KeyError as exc:
            raise ValidationError(f"{path}.{exc.args[0]}", "required field missing") from None
        except ValidationError as exc:
            raise ValidationError(path + exc.path[len("chain"):], str(exc).split(": ", 1)[-1]) from None


def stationary_distribution(mc: MarkovChainSpec) -> np.ndarray:
    P = mc.transition
    if not is_irreducible(P):
        raise StructureError("chain is reducible")
    k = P.shape[0]
    # pi (P - I) = 0 with sum(pi) = 1, solved in least squares
    A = np.vstack([(P - np.eye(k)).T, np.ones(k)])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def simulate_path(mc: MarkovChainSpec, n: int, cfg: NumericConfig, stream: Sequence[int] = (0,)) -> np.ndarray:
    if n < 1:
        raise ValidationError("n", "path length must be >= 1")
    rng = cfg.rng(7, *stream)
    u = rng.random(n)
    cum = np.cumsum(mc.transition, axis=1)
    cum[:, -1] = 1.0
    path = np.empty(n, dtype=np.int64)
    path[0] = int(np.searchsorted(np.cumsum(mc.initial), u[0], side="right"))
    for j in range(1, n):
        path[j] = int(np.searchsorted(cum[path[j - 1]], u[j], side="right"))
    return np.minimum(path, mc.k - 1)

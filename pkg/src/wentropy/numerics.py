"""Deterministic numerical substrate.

Quadrature (adaptive 1-d, tensor-product Gauss-Legendre for d <= 3), seeded
Monte-Carlo expectations, central finite differences and power iteration for
nonnegative matrices. Everything here is pure given ``(inputs, cfg)``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

logger = logging.getLogger(__name__)


class WeightedEntropyError(Exception):
    """Base class for numerical and structural failures."""


class NonConvergence(WeightedEntropyError):
    pass


class DomainError(WeightedEntropyError):
    pass


class StructureError(WeightedEntropyError):
    pass


class ValidationError(WeightedEntropyError, ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def worker_threads() -> int:
    """Thread cap from ``WENTROPY_THREADS``; defaults to the CPU count."""
    try:
        n = int(os.environ.get("WENTROPY_THREADS", ""))
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


@dataclass(frozen=True)
class NumericConfig:
    quad_abs_tol: float = 1e-9
    quad_rel_tol: float = 1e-8
    quad_max_subdivisions: int = 2000
    mc_samples: int = 200_000
    rng_seed: int = 0
    fd_step: float = 1e-5
    truncation_sigmas: float = 10.0
    power_iter_tol: float = 1e-12
    power_iter_max: int = 10_000
    mc_rejection_budget: int = 0

    def __post_init__(self):
        for name in ("quad_abs_tol", "quad_rel_tol", "fd_step", "power_iter_tol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"numeric.{name}", "must be > 0")
        if self.mc_samples < 100:
            raise ValidationError("numeric.mc_samples", "must be >= 100")
        if self.truncation_sigmas < 4:
            raise ValidationError("numeric.truncation_sigmas", "must be >= 4")
        if self.quad_max_subdivisions < 1:
            raise ValidationError("numeric.quad_max_subdivisions", "must be >= 1")
        if self.power_iter_max < 1:
            raise ValidationError("numeric.power_iter_max", "must be >= 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ValidationError("numeric.rng_seed", "must be a 64-bit unsigned integer")
        if self.mc_rejection_budget < 0:
            raise ValidationError("numeric.mc_rejection_budget", "must be >= 0")

    def replace(self, **changes) -> "NumericConfig":
        return dataclasses.replace(self, **changes)

    def rng(self, *stream: int) -> np.random.Generator:
        """Independent generator for a named substream of ``rng_seed``.

        Each caller asks for its own stream, so results never depend on the
        order in which estimates are computed.
        """
        seq = np.random.SeedSequence(self.rng_seed, spawn_key=tuple(int(s) for s in stream))
        return np.random.Generator(np.random.PCG64(seq))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float = 0.0
    method: str = "quadrature"  # quadrature | monte_carlo | closed_form
    abs_error: float = 0.0

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be >= 0")

    @property
    def noise(self) -> float:
        return self.abs_error + 3.0 * self.std_error

    def __add__(self, other):
        if isinstance(other, Estimate):
            return Estimate(
                self.value + other.value,
                math.hypot(self.std_error, other.std_error),
                _combine_method(self.method, other.method),
                self.abs_error + other.abs_error,
            )
        return Estimate(self.value + float(other), self.std_error, self.method, self.abs_error)

    __radd__ = __add__

    def __neg__(self):
        return Estimate(-self.value, self.std_error, self.method, self.abs_error)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, c):
        c = float(c)
        return Estimate(self.value * c, self.std_error * abs(c), self.method, self.abs_error * abs(c))

    __rmul__ = __mul__

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "method": self.method,
            "abs_error": self.abs_error,
        }


def _combine_method(a: str, b: str) -> str:
    if "monte_carlo" in (a, b):
        return "monte_carlo"
    if "quadrature" in (a, b):
        return "quadrature"
    return "closed_form"


# ---------------------------------------------------------------------------
# quadrature


def integrate_1d(
    f: Callable[[float], float],
    a: float,
    b: float,
    cfg: NumericConfig,
    points: Sequence[float] | None = None,
) -> Estimate:
    """Adaptive quadrature of ``f`` over ``(a, b)``; infinite limits allowed.

    Interior ``points`` (kinks, indicator boundaries) become subdivision
    boundaries.
    """
    if not a < b:
        raise DomainError(f"integrate_1d needs a < b, got a={a}, b={b}")
    cuts = sorted(p for p in (points or ()) if a < p < b and np.isfinite(p))
    edges = [a, *cuts, b]
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = _quad_piece(f, lo, hi, cfg)
        total += v
        err += e
    return Estimate(total, 0.0, "quadrature", err)


def _quad_piece(f, lo, hi, cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(
            f,
            lo,
            hi,
            epsabs=cfg.quad_abs_tol,
            epsrel=cfg.quad_rel_tol,
            limit=cfg.quad_max_subdivisions,
            full_output=1,
        )
    value, abserr = out[0], out[1]
    ier = 0 if len(out) == 3 else 1
    if len(out) > 3:
        # scipy returns (y, abserr, infodict, message[, explain]) on trouble
        msg = out[3]
        ier = 1 if "maximum number of subdivisions" in msg else 2
    if not (np.isfinite(value) and np.isfinite(abserr)):
        raise DomainError(f"non-finite integrand on [{lo}, {hi}]")
    if ier == 1:
        raise NonConvergence(
            f"quadrature on [{lo}, {hi}] exhausted {cfg.quad_max_subdivisions} subdivisions"
        )
    if ier and abserr > 100 * max(cfg.quad_abs_tol, cfg.quad_rel_tol * abs(value)):
        raise NonConvergence(f"quadrature on [{lo}, {hi}] stalled with error {abserr:.3g}")
    return value, abserr


def gauss_legendre_nodes(
    lo: float,
    hi: float,
    panels: int = 24,
    order: int = 20,
    breakpoints: Sequence[float] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on ``[lo, hi]``."""
    cuts = sorted({lo, hi, *(p for p in breakpoints if lo < p < hi)})
    x0, w0 = np.polynomial.legendre.leggauss(order)
    xs, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(round(panels * (b - a) / (hi - lo))))
        edges = np.linspace(a, b, n + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        xs.append((mid[:, None] + half[:, None] * x0[None, :]).ravel())
        ws.append((half[:, None] * w0[None, :]).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def tensor_quadrature(
    f: Callable[[np.ndarray], np.ndarray],
    box: Sequence[tuple[float, float]],
    cfg: NumericConfig,
    breakpoints: Sequence[Sequence[float]] | None = None,
    max_points: int = 4_000_000,
) -> tuple[np.ndarray, float]:
    """Tensor-product Gauss-Legendre integral of a vectorized ``f`` over a box.

    ``f`` maps an ``(n, d)`` array of points to ``(n,)`` or ``(n, k)`` values;
    returns the integral (scalar or ``(k,)``) and the last refinement change.
    Resolution doubles until two successive rules agree to tolerance.
    """
    d = len(box)
    bps = breakpoints or [()] * d
    # in three dimensions 8 panels of 16 nodes is already 2M points, so start coarser
    panels, order = (8 if d <= 2 else 2), 16
    prev = None
    while True:
        grids = [gauss_legendre_nodes(lo, hi, panels, order, bp) for (lo, hi), bp in zip(box, bps)]
        npts = math.prod(len(g[0]) for g in grids)
        if npts > max_points:
            raise NonConvergence(
                f"tensor quadrature did not reach tolerance within {max_points} points"
            )
        mesh = np.meshgrid(*[g[0] for g in grids], indexing="ij")
        wmesh = np.meshgrid(*[g[1] for g in grids], indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        w = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)
        vals = np.asarray(f(pts), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise DomainError("non-finite integrand in tensor quadrature")
        cur = np.tensordot(w, vals, axes=(0, 0))
        if prev is not None:
            diff = float(np.max(np.abs(cur - prev)))
            if diff <= max(cfg.quad_abs_tol, cfg.quad_rel_tol * float(np.max(np.abs(cur)))):
                return cur, diff
        prev = cur
        panels *= 2


def integrate_box(f, box, cfg: NumericConfig, breakpoints=None) -> Estimate:
    value, err = tensor_quadrature(f, box, cfg, breakpoints)
    return Estimate(float(value), 0.0, "quadrature", err)


# ---------------------------------------------------------------------------
# Monte Carlo


def mc_expectation(
    g: Callable[[np.ndarray], np.ndarray],
    sampler,
    cfg: NumericConfig,
    stream: Sequence[int] = (0,),
    n: int | None = None,
) -> Estimate:
    """Sample mean of ``g(X)`` with ``X`` drawn from ``sampler``.

    ``sampler`` is anything with ``sample(n, rng)``; ``g`` is vectorized.
    """
    n = n or cfg.mc_samples
    rng = cfg.rng(*stream)
    x = sampler.sample(n, rng)
    vals = np.asarray(g(x), dtype=float)
    bad = ~np.isfinite(vals)
    if bad.sum() > cfg.mc_rejection_budget:
        raise DomainError(f"{int(bad.sum())} non-finite Monte-Carlo values")
    vals = vals[~bad]
    m = vals.size
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return Estimate(mean, se, "monte_carlo")


# ---------------------------------------------------------------------------
# finite differences


def finite_diff(f: Callable[[float], float], x: float, order: int, cfg: NumericConfig, h: float | None = None) -> float:
    """Central difference of order 1 or 2 with step ``cfg.fd_step`` scaled by ``|x|``."""
    if h is None:
        h = cfg.fd_step * max(1.0, abs(x))
        if order == 2:
            # second differences lose two digits per step halving; use a coarser step
            h = math.sqrt(cfg.fd_step) * max(1.0, abs(x)) * 0.1
    if order == 1:
        vals = [f(x - h), f(x + h)]
        _check_finite(vals)
        return (vals[1] - vals[0]) / (2 * h)
    if order == 2:
        vals = [f(x - h), f(x), f(x + h)]
        _check_finite(vals)
        return (vals[0] - 2 * vals[1] + vals[2]) / (h * h)
    raise ValueError("order must be 1 or 2")


def five_point_derivative(f: Callable[[float], float], x: float, h: float) -> float:
    """Fourth-order central first derivative."""
    vals = [f(x - 2 * h), f(x - h), f(x + h), f(x + 2 * h)]
    _check_finite(vals)
    return (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)


def _check_finite(vals):
    if not all(np.isfinite(v) for v in vals):
        raise DomainError("non-finite value inside finite-difference stencil")


# ---------------------------------------------------------------------------
# Perron-Frobenius


def is_irreducible(M: np.ndarray) -> bool:
    """Strong connectivity of the positivity pattern of ``M``."""
    A = (np.asarray(M) > 0).astype(float)
    n = A.shape[0]
    reach = np.eye(n) + A
    # repeated squaring of (I + A) closes the reachability relation
    for _ in range(max(1, math.ceil(math.log2(max(n, 2))))):
        reach = np.minimum(reach @ reach, 1.0)
    return bool(np.all(reach > 0))


def power_iteration(M: np.ndarray, cfg: NumericConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """Perron-Frobenius eigenvalue with right and left eigenvectors (each summing to 1).

    Iterates on ``(I + M)`` so periodic irreducible matrices converge too.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise StructureError("power_iteration needs a square matrix")
    if np.any(M < 0):
        raise StructureError("power_iteration needs an entrywise nonnegative matrix")
    if not is_irreducible(M):
        raise StructureError("matrix is reducible")
    n = M.shape[0]
    scale = float(np.max(np.sum(M, axis=1)))
    B = np.eye(n) + M / scale
    right = _power(B, cfg)
    left = _power(B.T, cfg)
    mu = float((M @ right).sum() / right.sum())
    resid = np.max(np.abs(M @ right - mu * right))
    if resid > max(cfg.power_iter_tol * scale, 1e3 * np.finfo(float).eps * scale) * np.max(np.abs(right)):
        raise NonConvergence(f"power iteration residual {resid:.3g}")
    return mu, right, left


def _power(B, cfg):
    n = B.shape[0]
    v = np.full(n, 1.0 / n)
    for _ in range(cfg.power_iter_max):
        w = B @ v
        w /= w.sum()
        if np.max(np.abs(w - v)) <= cfg.power_iter_tol * 1e-2:
            return w
        v = w
    # geometric convergence can stall just above tol in floating point
    if np.max(np.abs(B @ v / (B @ v).sum() - v)) <= cfg.power_iter_tol:
        return v
    raise NonConvergence(f"power iteration did not converge in {cfg.power_iter_max} steps")

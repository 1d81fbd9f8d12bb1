"""Batch front-end: validate a JSON job, run it, write a JSON report and CSV series.

Usage::

    wentropy run job.json
    wentropy sweep job.json
    wentropy schema

Exit status is 0 when the job ran (whatever the verdicts), 2 when the job
does not validate and 3 when a computation fails.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .entropy import wde, weighted_kl
from .epi import (
    debruijn_check,
    gaussian_wlsi_check,
    kappa_and_angle,
    stein_pair,
    uniform_wlsi_check,
    wep_concavity_scan,
    wepi_check,
    wlsi_check,
)
from .fisher import (
    additive_noise_wfim_check,
    gaussian_location,
    gaussian_scale,
    kl_taylor_check,
    laplace_location,
    wfii_check,
    wfim,
)
from .inequalities import (
    CheckReport,
    gaussian_max_check,
    gibbs_check,
    hadamard_weighted_check,
    kyfan_gap,
    rwe_convexity_gap,
    we_concavity_gap,
)
from .model import MarkovChainSpec, WeightFunction, distribution_from_dict
from .numerics import Estimate, NumericConfig, ValidationError, WeightedEntropyError, worker_threads
from .rates import (
    ar1_closed_form,
    ar1_multiplicative_wde,
    empirical_smb,
    iid_additive_we,
    iid_multiplicative_log_we,
    markov_additive_secondary_rate,
    markov_multiplicative_rate,
    nonstationary_scaling_scan,
    shannon_entropy,
)

MAX_CELLS = 1_000_000
VERDICTS = ("HOLDS", "VIOLATED", "HYPOTHESIS_UNMET", "INCONCLUSIVE")

# ---------------------------------------------------------------------------
# schema

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_num_or_vec = {"type": ["number", "array"], "items": _num, "minItems": 1}
_matrix = {"type": "array", "items": _vec, "minItems": 1}
_num_or_matrix = {"type": ["number", "array"], "items": {"type": ["number", "array"], "items": _num}, "minItems": 1}
_bound = {"anyOf": [_num, {"enum": ["inf", "-inf"]}]}
_bounds = {"anyOf": [_bound, {"type": "array", "items": _bound, "minItems": 1}]}
_n_grid = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
_ref = lambda name: {"$ref": f"#/$defs/{name}"}


def _kinds(fields: dict, required: dict) -> list:
    """``if kind == k then only these fields`` clauses for a tagged object."""
    out = []
    for kind, props in fields.items():
        out.append({
            "if": {"properties": {"kind": {"const": kind}}, "required": ["kind"]},
            "then": {
                "properties": {"kind": True, **props},
                "required": required.get(kind, []),
                "additionalProperties": False,
            },
        })
    return out


_DISTRIBUTIONS = {
    "discrete_pmf": {"points": {"type": "array", "items": _num_or_vec, "minItems": 1}, "masses": _vec},
    "gaussian": {"mean": _num_or_vec, "cov": _num_or_matrix},
    "uniform": {"low": _num_or_vec, "high": _num_or_vec},
    "laplace": {"loc": _num, "scale": _pos},
    "mixture": {"components": {"type": "array", "items": _ref("distribution"), "minItems": 1}, "weights": _vec},
}
_DISTRIBUTION_REQUIRED = {
    "discrete_pmf": ["points", "masses"],
    "gaussian": ["cov"],
    "uniform": ["low", "high"],
    "laplace": ["scale"],
    "mixture": ["components", "weights"],
}

_WEIGHTS = {
    "constant": {"c": _num, "dim": {"type": "integer", "minimum": 1}},
    "indicator": {"low": _bounds, "high": _bounds},
    "exponential": {"t": _num_or_vec},
    "polynomial": {
        "coefficients": _vec,
        "terms": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "array",
                "prefixItems": [_num, {"type": "array", "items": {"type": "integer", "minimum": 0}}],
                "items": False,
                "minItems": 2,
            },
        },
    },
    "gaussian_bump": {"center": _num_or_vec, "width": _pos, "floor": _num, "amplitude": _num},
    "tabulated": {"grid": _vec, "values": _vec},
    "sinusoid": {"offset": _num, "amplitude": _num, "frequency": _num, "phase": _num},
    "combination": {
        "parts": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "prefixItems": [_num, _ref("weight")], "items": False, "minItems": 2},
        }
    },
}
_WEIGHT_REQUIRED = {
    "indicator": ["low", "high"],
    "exponential": ["t"],
    "gaussian_bump": ["center", "width"],
    "tabulated": ["grid", "values"],
    "combination": ["parts"],
}

_FAMILIES = {
    "gaussian_location": {"sigma": _pos},
    "gaussian_scale": {"mean": _num},
    "laplace_location": {"scale": _pos},
}


def _obj(props: dict, required=(), **extra) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False, **extra}


def _variants(key: str, table: dict) -> list:
    return [
        {"if": {"properties": {key: {"const": v}}, "required": [key]}, "then": {"required": req}}
        for v, req in table.items()
    ]


_D, _W = _ref("distribution"), _ref("weight")

PARAMS = {
    "entropy": _obj({"distribution": _D, "weight": _W, "method": {"enum": ["auto", "quadrature"]}}, ["distribution", "weight"]),
    "divergence": _obj({"f": _D, "g": _D, "weight": _W}, ["f", "g", "weight"]),
    "gibbs": _obj({"f": _D, "g": _D, "weight": _W}, ["f", "g", "weight"]),
    "concavity": _obj(
        {"f1": _D, "f2": _D, "g1": _D, "g2": _D, "lam": {"type": "number", "minimum": 0, "maximum": 1}, "weight": _W},
        ["f1", "f2", "lam", "weight"],
        dependentRequired={"g1": ["g2"], "g2": ["g1"]},
    ),
    "kyfan": _obj(
        {"t": _num_or_vec, "C1": _num_or_matrix, "C2": _num_or_matrix, "lam": {"type": "number", "minimum": 0, "maximum": 1}},
        ["t", "C1", "C2", "lam"],
    ),
    "hadamard": _obj({"C": _matrix, "weight": _W}, ["C", "weight"]),
    "gauss-max": _obj({"distribution": _D, "weight": _W}, ["distribution", "weight"]),
    "fisher": _obj(
        {
            "family": _ref("family"),
            "theta": _num_or_vec,
            "noise": _obj({"distribution": _D, "Sigma": _num_or_matrix}, ["distribution", "Sigma"]),
            "weight": _W,
        },
        ["weight"],
        dependentRequired={"family": ["theta"], "theta": ["family"]},
    ),
    "wfii": _obj({"family1": _ref("family"), "family2": _ref("family"), "theta": _num, "weight": _W}, ["family1", "family2", "theta", "weight"]),
    "taylor": _obj(
        {"family": _ref("family"), "theta1": _num, "theta2": _num, "weight": _W, "halvings": {"type": "integer", "minimum": 1, "maximum": 12}},
        ["family", "theta1", "theta2", "weight"],
    ),
    "wepi": _obj({"X1": _D, "X2": _D, "weight": _W, "method": {"enum": ["auto", "quadrature"]}}, ["X1", "X2", "weight"]),
    "wlsi": _obj(
        {
            "variant": {"enum": ["generic", "gaussian", "uniform"]},
            "X1": _D,
            "X2": _D,
            "var1": _pos,
            "var2": _pos,
            "a1": _num,
            "b1": _num,
            "a2": _num,
            "b2": _num,
            "weight": _W,
        },
        ["variant", "weight"],
        allOf=_variants("variant", {"generic": ["X1", "X2"], "gaussian": ["var1", "var2"], "uniform": ["a1", "b1", "a2", "b2"]}),
    ),
    "stein": _obj({"sigma": _pos, "weight": _W}, ["sigma", "weight"]),
    "debruijn": _obj({"distribution": _D, "gamma": _pos, "weight": _W, "tol": _pos}, ["distribution", "gamma", "weight"]),
    "wep-scan": _obj(
        {
            "distribution": _D,
            "weight": _W,
            "gamma_grid": {"type": "array", "items": _pos, "minItems": 3},
            "with_mmse": {"type": "boolean"},
            "tol": _pos,
        },
        ["distribution", "weight", "gamma_grid"],
    ),
    "rates": _obj(
        {
            "mode": {"enum": ["iid", "markov_multiplicative", "markov_additive", "smb", "nonstationary", "ar1"]},
            "pmf": _D,
            "psi": _W,
            "kind": {"enum": ["additive", "multiplicative"]},
            "chain": _ref("chain"),
            "n_grid": _n_grid,
            "J": {"type": "integer", "minimum": 0},
            "n_paths": {"type": "integer", "minimum": 1},
            "alpha_w": _pos,
            "c": _pos,
            "a": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
            "n": {"type": "integer", "minimum": 1},
            "method": {"enum": ["auto", "quadrature", "monte_carlo"]},
        },
        ["mode"],
        allOf=_variants(
            "mode",
            {
                "iid": ["pmf", "psi", "kind", "n_grid"],
                "markov_multiplicative": ["chain"],
                "markov_additive": ["chain", "J"],
                "smb": ["chain", "kind", "n_grid"],
                "nonstationary": ["alpha_w", "c", "n_grid"],
                "ar1": ["a", "psi", "n"],
            },
        ),
    ),
}

COMMANDS = tuple(PARAMS) + ("sweep",)

_NUMERIC = _obj(
    {
        "quad_abs_tol": _pos,
        "quad_rel_tol": _pos,
        "quad_max_subdivisions": {"type": "integer", "minimum": 1},
        "mc_samples": {"type": "integer", "minimum": 100},
        "rng_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "fd_step": _pos,
        "truncation_sigmas": {"type": "number", "minimum": 4},
        "power_iter_tol": _pos,
        "power_iter_max": {"type": "integer", "minimum": 1},
        "mc_rejection_budget": {"type": "integer", "minimum": 0},
    },
    ["rng_seed"],
)

_AXIS = _obj(
    {
        "param": {"type": "string", "minLength": 1},
        "values": {"type": "array", "items": _num, "minItems": 1},
        "start": _num,
        "stop": _num,
        "num": {"type": "integer", "minimum": 1},
        "scale": {"enum": ["linear", "log"]},
    },
    ["param"],
    oneOf=[{"required": ["values"]}, {"required": ["start", "stop", "num"]}],
)


def job_schema() -> dict:
    """JSON schema (draft 2020-12) for job files."""
    per_command = []
    for cmd, params in PARAMS.items():
        per_command.append({
            "if": {"properties": {"command": {"const": cmd}}, "required": ["command"]},
            "then": {"properties": {"params": params, "target": False, "grid": False}},
        })
        per_command.append({
            "if": {"properties": {"command": {"const": "sweep"}, "target": {"const": cmd}}, "required": ["command", "target"]},
            "then": {"properties": {"params": params}},
        })
    per_command.append({
        "if": {"properties": {"command": {"const": "sweep"}}, "required": ["command"]},
        "then": {"required": ["target", "grid"]},
    })
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "wentropy job",
        "type": "object",
        "properties": {
            "command": {"enum": list(COMMANDS)},
            "target": {"enum": list(PARAMS)},
            "params": {"type": "object"},
            "grid": _obj({"axes": {"type": "array", "items": _AXIS, "minItems": 1, "maxItems": 2}}, ["axes"]),
            "numeric": _NUMERIC,
            "output": _obj({"path": {"type": "string", "minLength": 1}, "format": {"enum": ["json"]}}, ["path"]),
        },
        "required": ["command", "numeric", "params"],
        "additionalProperties": False,
        "allOf": per_command,
        "$defs": {
            "distribution": {
                "type": "object",
                "properties": {"kind": {"enum": list(_DISTRIBUTIONS)}},
                "required": ["kind"],
                "allOf": _kinds(_DISTRIBUTIONS, _DISTRIBUTION_REQUIRED),
            },
            "weight": {
                "type": "object",
                "properties": {"kind": {"enum": list(_WEIGHTS)}},
                "required": ["kind"],
                "allOf": _kinds(_WEIGHTS, _WEIGHT_REQUIRED),
            },
            "family": {
                "type": "object",
                "properties": {"kind": {"enum": list(_FAMILIES)}},
                "required": ["kind"],
                "allOf": _kinds(_FAMILIES, {}),
            },
            "chain": _obj({"transition": _matrix, "initial": _vec, "psi": _vec}, ["transition"]),
        },
    }


def format_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<job>"


class JobError(Exception):
    """Input problem, reported with exit status 2."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def validate_job(job) -> None:
    validator = jsonschema.Draft202012Validator(job_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(job))
    if err is not None:
        raise JobError(format_path(err.absolute_path), err.message)


# ---------------------------------------------------------------------------
# command handlers


@dataclass
class Outcome:
    """What one command produced: report body, a flat row for sweep tables, CSV series."""

    results: dict
    row: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)  # name -> (columns, rows)
    verdict: str | None = None


def _dist(p, key, prefix="params"):
    return distribution_from_dict(p[key], f"{prefix}.{key}")


def _weight(p, key="weight", prefix="params"):
    return WeightFunction.from_dict(p[key], f"{prefix}.{key}")


def _family(d):
    kind = d["kind"]
    if kind == "gaussian_location":
        return gaussian_location(d.get("sigma", 1.0))
    if kind == "gaussian_scale":
        return gaussian_scale(d.get("mean", 0.0))
    return laplace_location(d.get("scale", 1.0))


def _report(rep: CheckReport, extra_row=None, **results) -> Outcome:
    row = {"gap": rep.gap.value, "gap_std_error": rep.gap.std_error, **(extra_row or {})}
    return Outcome({"report": rep.to_dict(), **results}, row, verdict=rep.verdict)


def _estimate(est: Estimate, label="estimate") -> Outcome:
    return Outcome({label: est.to_dict()}, {"value": est.value, "std_error": est.std_error})


def _entropy(p, cfg):
    return _estimate(wde(_dist(p, "distribution"), _weight(p), cfg, p.get("method", "auto")))


def _divergence(p, cfg):
    return _estimate(weighted_kl(_dist(p, "f"), _dist(p, "g"), _weight(p), cfg))


def _gibbs(p, cfg):
    return _report(gibbs_check(_dist(p, "f"), _dist(p, "g"), _weight(p), cfg))


def _concavity(p, cfg):
    f1, f2, phi = _dist(p, "f1"), _dist(p, "f2"), _weight(p)
    out = _report(we_concavity_gap(f1, f2, p["lam"], phi, cfg))
    if "g1" in p:
        conv = rwe_convexity_gap(f1, f2, _dist(p, "g1"), _dist(p, "g2"), p["lam"], phi, cfg)
        out.results["convexity_report"] = conv.to_dict()
        out.row["convexity_gap"] = conv.gap.value
        out.row["convexity_verdict"] = conv.verdict
    return out


def _kyfan(p, cfg):
    rep = kyfan_gap(p["t"], p["C1"], p["C2"], p["lam"])
    diag = rep.details["diagnostics"]
    return _report(rep, {"F1": diag["F1"], "F2": diag["F2"], "in_S": diag["in_S"]})


def _hadamard(p, cfg):
    return _report(hadamard_weighted_check(p["C"], _weight(p), cfg))


def _gauss_max(p, cfg):
    return _report(gaussian_max_check(_dist(p, "distribution"), _weight(p), cfg))


def _fisher(p, cfg):
    phi = _weight(p)
    if "noise" in p:
        if "family" in p:
            raise JobError("params", "give either family/theta or noise, not both")
        noise = p["noise"]
        X = distribution_from_dict(noise["distribution"], "params.noise.distribution")
        return _report(additive_noise_wfim_check(X, noise["Sigma"], phi, cfg))
    if "family" not in p:
        raise JobError("params", "one of family/theta or noise is required")
    J = np.atleast_2d(wfim(_family(p["family"]), p["theta"], phi, cfg))
    row = {f"J[{i}][{j}]": float(J[i, j]) for i in range(J.shape[0]) for j in range(J.shape[1])}
    return Outcome({"wfim": J.tolist()}, row)


def _wfii(p, cfg):
    return _report(wfii_check(_family(p["family1"]), _family(p["family2"]), p["theta"], _weight(p), cfg))


def _taylor(p, cfg):
    rep = kl_taylor_check(_family(p["family"]), p["theta1"], p["theta2"], _weight(p), cfg, p.get("halvings", 3))
    return _report(rep)


def _wepi(p, cfg):
    ctx = kappa_and_angle(_dist(p, "X1"), _dist(p, "X2"), _weight(p), cfg, p.get("method", "auto"))
    rep = wepi_check(ctx, cfg)
    lsi = wlsi_check(ctx, cfg)
    return _report(
        rep,
        {"kappa": ctx.kappa, "wlsi_gap": lsi.gap.value, "wlsi_verdict": lsi.verdict},
        wlsi_report=lsi.to_dict(),
        context=ctx.to_dict(),
    )


def _wlsi(p, cfg):
    phi = _weight(p)
    variant = p["variant"]
    if variant == "gaussian":
        return _report(gaussian_wlsi_check(p["var1"], p["var2"], phi, cfg))
    if variant == "uniform":
        terms, rep = uniform_wlsi_check(p["a1"], p["b1"], p["a2"], p["b2"], phi, cfg)
        return _report(rep, terms=terms.to_dict())
    ctx = kappa_and_angle(_dist(p, "X1"), _dist(p, "X2"), phi, cfg)
    return _report(wlsi_check(ctx, cfg), context=ctx.to_dict())


def _stein(p, cfg):
    direct, stein = stein_pair(p["sigma"], _weight(p), cfg)
    gap = abs(direct.value - stein.value)
    return Outcome(
        {"direct": direct.to_dict(), "stein": stein.to_dict(), "discrepancy": gap},
        {"direct": direct.value, "stein": stein.value, "discrepancy": gap},
    )


def _debruijn(p, cfg):
    return _report(debruijn_check(_dist(p, "distribution"), p["gamma"], _weight(p), cfg, p.get("tol", 1e-5)))


def _wep_scan(p, cfg):
    X, phi = _dist(p, "distribution"), _weight(p)
    diags, rep = wep_concavity_scan(X, phi, p["gamma_grid"], cfg, p.get("tol", 1e-6), with_mmse=p.get("with_mmse", True))
    second = rep.details.get("second_differences", [])
    cols = ["gamma", "wep", "second_difference", "Lambda", "psi", "dpsi_dgamma", "R", "status"]
    rows = []
    for i, d in enumerate(diags):
        sd = second[i - 1] if 0 < i <= len(second) else math.nan
        rows.append([d.gamma, d.wep, sd, d.Lambda_gamma, d.psi_gamma, d.dpsi_dgamma, d.R_gamma, d.status])
    out = _report(rep, diagnostics=[d.to_dict() for d in diags])
    out.series["wep_scan"] = (cols, rows)
    return out


def _rate_outcome(rr, cols, rows) -> Outcome:
    row = {"primary_rate": rr.primary_rate, "secondary_rate": rr.secondary_rate}
    if rr.convergence_trace:
        row["final_trace"] = rr.convergence_trace[-1][1]
    return Outcome({"rate_report": rr.to_dict()}, row, {"rates_trace": (cols, rows)})


def _rates(p, cfg):
    mode = p["mode"]
    if mode == "iid":
        pmf = _dist(p, "pmf")
        if not pmf.is_discrete:
            raise JobError("params.pmf.kind", "the i.i.d. source must be discrete_pmf")
        psi = _weight(p, "psi")
        w = np.asarray(psi(pmf.points), float)
        Epsi = float(w @ pmf.masses)
        rows = []
        if p["kind"] == "additive":
            limit = Epsi * shannon_entropy(pmf.masses)
            for n in p["n_grid"]:
                h = iid_additive_we(pmf, psi, n)
                rows.append([n, h, h / n**2, limit])
            cols = ["n", "h", "h_over_n2", "limit"]
        else:
            limit = math.log(Epsi) if Epsi > 0 else -math.inf
            for n in p["n_grid"]:
                lh = iid_multiplicative_log_we(pmf, psi, n)
                rows.append([n, lh, lh / n, limit])
            cols = ["n", "log_h", "log_h_over_n", "limit"]
        return Outcome(
            {"kind": p["kind"], "limit": limit, "trace": [dict(zip(cols, r)) for r in rows]},
            {"limit": limit, "final_trace": rows[-1][2]},
            {"rates_trace": (cols, rows)},
        )
    if mode == "nonstationary":
        scan = nonstationary_scaling_scan(p["alpha_w"], p["c"], p["n_grid"])
        cols = list(scan[0])
        rows = [[r[c] for c in cols] for r in scan]
        return Outcome({"scan": scan}, {"final_h_over_n2_log_n": rows[-1][-1]}, {"rates_trace": (cols, rows)})
    if mode == "ar1":
        psi = _weight(p, "psi")
        est = ar1_multiplicative_wde(p["a"], psi, int(p["n"]), cfg, p.get("method", "auto"))
        out = _estimate(est)
        if psi.kind == "exponential" and psi.dim == 1:
            exact = ar1_closed_form(p["a"], psi.params["t"][0], int(p["n"]))
            out.results["closed_form"] = exact
            out.row["closed_form"] = exact
        return out
    mc = MarkovChainSpec.from_dict(p["chain"], "params.chain")
    if mode == "markov_multiplicative":
        rr = markov_multiplicative_rate(mc, cfg, p.get("n_grid"))
        rows = [[n, v, rr.primary_rate] for n, v in rr.convergence_trace]
        return _rate_outcome(rr, ["n", "log_h_over_n", "log_mu"], rows)
    if mode == "markov_additive":
        rr = markov_additive_secondary_rate(mc, int(p["J"]), cfg)
        rows = [[n, v, rr.secondary_rate] for n, v in rr.convergence_trace]
        return _rate_outcome(rr, ["n", "increment_minus_2nA0", "A1"], rows)
    rr = empirical_smb(mc, None, p["kind"], p["n_grid"], cfg, p.get("n_paths", 20))
    se = rr.empirical["std_errors"]
    rows = [[n, v, float(s), rr.primary_rate] for (n, v), s in zip(rr.convergence_trace, se)]
    return _rate_outcome(rr, ["n", "path_mean", "std_error", "theory"], rows)


HANDLERS = {
    "entropy": _entropy,
    "divergence": _divergence,
    "gibbs": _gibbs,
    "concavity": _concavity,
    "kyfan": _kyfan,
    "hadamard": _hadamard,
    "gauss-max": _gauss_max,
    "fisher": _fisher,
    "wfii": _wfii,
    "taylor": _taylor,
    "wepi": _wepi,
    "wlsi": _wlsi,
    "stein": _stein,
    "debruijn": _debruijn,
    "wep-scan": _wep_scan,
    "rates": _rates,
}


def _dispatch(command: str, params: dict, cfg: NumericConfig) -> Outcome:
    try:
        return HANDLERS[command](params, cfg)
    except ValidationError as exc:
        path = exc.path if exc.path.startswith(("params", "numeric")) else f"params.{exc.path}"
        raise JobError(path, str(exc).split(": ", 1)[-1]) from None


# ---------------------------------------------------------------------------
# sweeps

_TOKEN = re.compile(r"[^.\[\]]+")


def _path_tokens(path: str) -> list:
    return [int(t) if t.isdigit() else t for t in _TOKEN.findall(path)]


def set_param(params: dict, path: str, value) -> dict:
    """Copy of ``params`` with the entry at a dotted path (``weight.parts[1][0]``) replaced."""
    out = copy.deepcopy(params)
    tokens = _path_tokens(path)
    node = out
    try:
        for t in tokens[:-1]:
            node = node[t]
        last = tokens[-1]
        if isinstance(node, list):
            node[last]  # lists are not extended by a sweep
        elif not isinstance(node, dict):
            raise TypeError(last)
        node[last] = value
    except (KeyError, IndexError, TypeError):
        raise JobError(f"params.{path}", "no such parameter in the base job") from None
    return out


def axis_values(axis: dict) -> list:
    if "values" in axis:
        return [float(v) for v in axis["values"]]
    a, b, n = axis["start"], axis["stop"], axis["num"]
    if axis.get("scale", "linear") == "log":
        if a <= 0 or b <= 0:
            raise JobError("grid.axes.start", "log-spaced axes need positive endpoints")
        return np.geomspace(a, b, n).tolist()
    return np.linspace(a, b, n).tolist()


def _grid_cells(job: dict):
    axes = job["grid"]["axes"]
    sizes = [len(a["values"]) if "values" in a else a["num"] for a in axes]
    if math.prod(sizes) > MAX_CELLS:
        raise JobError("grid", f"{math.prod(sizes)} cells exceeds the limit of {MAX_CELLS}")
    names = [a["param"] for a in axes]
    values = [axis_values(a) for a in axes]
    # every axis value must give a valid job on its own
    validator = jsonschema.Draft202012Validator(job_schema())
    for i, (name, vals) in enumerate(zip(names, values)):
        for v in vals:
            probe = dict(job, command=job["target"], params=set_param(job["params"], name, _as_number(v)))
            probe.pop("target")
            probe.pop("grid")
            err = jsonschema.exceptions.best_match(validator.iter_errors(probe))
            if err is not None:
                raise JobError(f"grid.axes[{i}]", f"value {v!r}: {format_path(err.absolute_path)}: {err.message}")
    return names, list(itertools.product(*values))


def _as_number(v: float):
    return int(v) if float(v).is_integer() and abs(v) < 2**53 else v


def _sweep(job: dict, cfg: NumericConfig) -> tuple[dict, dict, bool]:
    names, cells = _grid_cells(job)
    target = job["target"]

    def one(cell):
        params = job["params"]
        for name, v in zip(names, cell):
            params = set_param(params, name, _as_number(v))
        try:
            out = _dispatch(target, params, cfg)
        except JobError:
            raise
        except (WeightedEntropyError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return {"verdict": "ERROR", "error": f"{type(exc).__name__}: {exc}"}, None
        return {"verdict": out.verdict, **out.row}, out

    with ThreadPoolExecutor(max_workers=worker_threads()) as ex:
        done = list(ex.map(one, cells))

    counts = {v: 0 for v in VERDICTS}
    counts["ERROR"] = 0
    columns = list(names)
    for row, _ in done:
        if row["verdict"] in counts:
            counts[row["verdict"]] += 1
        columns += [k for k in row if k not in columns]
    rows = [[*cell, *(row.get(c) for c in columns[len(names):])] for cell, (row, _) in zip(cells, done)]
    results = {
        "target": target,
        "axes": [{"param": n, "values": sorted(set(c[i] for c in cells))} for i, n in enumerate(names)],
        "summary": counts,
        "cells": [dict(zip(columns, r)) for r in rows],
    }
    return results, {"sweep": (columns, rows)}, counts["ERROR"] > 0


# ---------------------------------------------------------------------------
# report assembly and output


def _collect_methods(obj, path="results", out=None) -> dict:
    out = {} if out is None else out
    if isinstance(obj, dict):
        if "method" in obj and "value" in obj and isinstance(obj["method"], str):
            out[path] = obj["method"]
        for k, v in obj.items():
            _collect_methods(v, f"{path}.{k}", out)
    elif isinstance(obj, list) and len(obj) <= 64:
        for i, v in enumerate(obj):
            _collect_methods(v, f"{path}[{i}]", out)
    return out


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, np.integer, np.floating)):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    return obj


def format_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    return s if any(c in s for c in ".enN") else s + ".0"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits and keys in insertion order."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _level + 1) for v in obj) + "\n" + pad + "]"
    return dumps(_plain(obj), indent, _level)


def _csv_cell(v):
    if isinstance(v, float):
        return format(v, ".17g")
    if v is None:
        return ""
    return v


def write_series(directory: Path, series: dict) -> list[str]:
    written = []
    for name, (columns, rows) in series.items():
        path = directory / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for r in rows:
                w.writerow([_csv_cell(_plain(v)) for v in r])
        written.append(path.name)
    return written


def run_job(job: dict) -> tuple[dict, dict, int]:
    """Validate and run a job; returns the report document, CSV series and exit status.

    Raises :class:`JobError` for invalid input. Numerical failures propagate
    as :class:`WeightedEntropyError`.
    """
    validate_job(job)
    cfg = NumericConfig(**job["numeric"])
    status = 0
    if job["command"] == "sweep":
        results, series, failed = _sweep(job, cfg)
        status = 3 if failed else 0
    else:
        out = _dispatch(job["command"], job["params"], cfg)
        results, series = _plain(out.results), out.series
        if out.verdict is not None:
            results = {"verdict": out.verdict, **results}
    results = _plain(results)
    doc = {
        "tool": "wentropy",
        "version": __version__,
        "job": job,
        "results": results,
        "provenance": {
            "rng_seed": cfg.rng_seed,
            "numeric": _plain(cfg.to_dict()),
            "methods": _collect_methods(results),
        },
    }
    return doc, series, status


def _load(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise JobError("<job>", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise JobError("<job>", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _execute(path: str, require_sweep: bool) -> int:
    import time

    start = time.perf_counter()
    try:
        job = _load(path)
        if require_sweep and isinstance(job, dict) and job.get("command") != "sweep":
            raise JobError("command", "the sweep subcommand needs a job with command 'sweep'")
        doc, series, status = run_job(job)
    except JobError as exc:
        print(f"wentropy: schema error at {exc}", file=sys.stderr)
        return 2
    except (WeightedEntropyError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"wentropy: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    text = dumps(doc) + "\n"
    out = job.get("output")
    if out:
        directory = Path(out["path"])
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(text)
        csvs = write_series(directory, series)
        try:
            from .plotting import plot_outputs
        except ImportError:
            figures = []
        else:
            figures = plot_outputs(directory, series, job)
        # wall-clock time lives beside the report so the report itself stays reproducible
        timing = {"seconds": time.perf_counter() - start, "csv": csvs, "figures": figures}
        (directory / "timing.json").write_text(dumps(timing) + "\n")
    sys.stdout.write(text)
    if status == 3:
        print("wentropy: one or more sweep cells failed numerically", file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wentropy", description="Weighted entropy calculations from JSON job files.")
    parser.add_argument("--version", action="version", version=f"wentropy {__version__}")
    sub = parser.add_subparsers(dest="action", required=True)
    p_run = sub.add_parser("run", help="run a job file")
    p_run.add_argument("job")
    p_sweep = sub.add_parser("sweep", help="run a grid sweep job file")
    p_sweep.add_argument("job")
    sub.add_parser("schema", help="print the job JSON schema")
    args = parser.parse_args(argv)
    if args.action == "schema":
        sys.stdout.write(json.dumps(job_schema(), indent=2) + "\n")
        return 0
    return _execute(args.job, args.action == "sweep")


if __name__ == "__main__":
    sys.exit(main())

import copy
import csv
import json
import math
import subprocess
import sys

import jsonschema
import pytest

from wentropy.cli import COMMANDS, format_float, job_schema, main, run_job, set_param

G1 = {"kind": "gaussian", "cov": [[1.0]]}
ONE = {"kind": "constant", "c": 1.0}


def write_job(tmp_path, job, name="job.json"):
    path = tmp_path / name
    path.write_text(json.dumps(job))
    return str(path)


def entropy_job(**numeric):
    return {
        "command": "entropy",
        "numeric": {"rng_seed": 1, **numeric},
        "params": copy.deepcopy({"distribution": G1, "weight": ONE}),
    }


def kyfan_sweep(out=None, num=7):
    job = {
        "command": "sweep",
        "target": "kyfan",
        "numeric": {"rng_seed": 3},
        "params": {"t": 0.0, "C1": 1.0, "C2": 4.0, "lam": 0.5},
        "grid": {"axes": [{"param": "t", "start": -1.5, "stop": 1.5, "num": num}]},
    }
    if out is not None:
        job["output"] = {"path": str(out)}
    return job


def test_entropy_job(tmp_path, capsys):
    assert main(["run", write_job(tmp_path, entropy_job())]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["results"]["estimate"]["value"] == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=1e-12)
    assert doc["provenance"]["rng_seed"] == 1


def test_job_is_echoed(tmp_path, capsys):
    job = entropy_job(mc_samples=5000)
    main(["run", write_job(tmp_path, job)])
    doc = json.loads(capsys.readouterr().out)
    assert doc["job"] == job
    # the echoed job runs again to the same report
    main(["run", write_job(tmp_path, doc["job"], "again.json")])
    assert json.loads(capsys.readouterr().out) == doc


def test_schema_error_names_field(tmp_path, capsys):
    assert main(["run", write_job(tmp_path, entropy_job(mc_samples=-5))]) == 2
    err = capsys.readouterr().err
    assert "numeric.mc_samples" in err


@pytest.mark.parametrize("mutate,field", [
    (lambda j: j["numeric"].pop("rng_seed"), "numeric"),
    (lambda j: j["params"].update(extra=1), "params"),
    (lambda j: j.update(command="nope"), "command"),
])
def test_schema_errors_exit_2(tmp_path, capsys, mutate, field):
    job = entropy_job()
    mutate(job)
    assert main(["run", write_job(tmp_path, job)]) == 2
    assert f"schema error at {field}" in capsys.readouterr().err


def test_invalid_json_exit_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", str(path)]) == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_numeric_failure_exit_3(tmp_path, capsys):
    job = {
        "command": "rates",
        "numeric": {"rng_seed": 5},
        "params": {"mode": "ar1", "a": 0.5, "psi": ONE, "n": 5, "method": "quadrature"},
    }
    assert main(["run", write_job(tmp_path, job)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_model_error_exit_3(tmp_path, capsys):
    # a well-formed job whose covariance is not positive definite fails in the model, not the schema
    job = entropy_job()
    job["params"]["distribution"]["cov"] = [[-1.0]]
    assert main(["run", write_job(tmp_path, job)]) == 3
    assert "positive definite" in capsys.readouterr().err


def test_sweep_subcommand_needs_sweep_job(tmp_path, capsys):
    assert main(["sweep", write_job(tmp_path, entropy_job())]) == 2


def test_too_many_cells(tmp_path, capsys):
    job = kyfan_sweep()
    job["grid"]["axes"] = [
        {"param": "t", "start": -1, "stop": 1, "num": 2000},
        {"param": "lam", "start": 0.0, "stop": 1.0, "num": 2000},
    ]
    assert main(["sweep", write_job(tmp_path, job)]) == 2
    assert "schema error at grid" in capsys.readouterr().err


def test_bad_axis_value_exit_2(tmp_path, capsys):
    job = kyfan_sweep()
    job["grid"]["axes"] = [{"param": "lam", "values": [0.2, 1.5]}]
    assert main(["sweep", write_job(tmp_path, job)]) == 2


def test_kyfan_sweep_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["sweep", write_job(tmp_path, kyfan_sweep(out))]) == 0
    capsys.readouterr()
    with open(out / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["t", "verdict", "gap"]
    for col in ("F1", "F2", "in_S"):
        assert col in rows[0]
    assert len(rows) == 8
    assert (out / "sweep.png").stat().st_size > 0
    doc = json.loads((out / "report.json").read_text())
    assert sum(doc["results"]["summary"].values()) == 7
    timing = json.loads((out / "timing.json").read_text())
    assert timing["seconds"] > 0


def test_violated_verdict_still_exits_0(tmp_path, capsys):
    job = {
        "command": "sweep",
        "target": "wlsi",
        "numeric": {"rng_seed": 11},
        "params": {
            "variant": "gaussian", "var1": 1.0, "var2": 2.0,
            "weight": {"kind": "gaussian_bump", "center": 0.0, "width": 1.0, "floor": 1.0, "amplitude": 0.1},
        },
        "grid": {"axes": [{"param": "weight.amplitude", "values": [-0.1, 0.1]}]},
    }
    assert main(["sweep", write_job(tmp_path, job)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["results"]["summary"]["VIOLATED"] == 1
    assert doc["results"]["summary"]["HOLDS"] == 1


def test_reports_are_byte_identical(tmp_path, capsys, monkeypatch):
    texts = []
    for threads in ("1", "4"):
        monkeypatch.setenv("WENTROPY_THREADS", threads)
        out = tmp_path / f"out{threads}"
        main(["sweep", write_job(tmp_path, kyfan_sweep(out, num=9))])
        capsys.readouterr()
        texts.append(((out / "report.json").read_bytes(), (out / "sweep.csv").read_bytes()))
    # the output path differs between the runs; compare everything else
    a = json.loads(texts[0][0])
    b = json.loads(texts[1][0])
    a["job"].pop("output")
    b["job"].pop("output")
    assert a == b
    assert texts[0][1] == texts[1][1]


def test_monte_carlo_reproducible(tmp_path, capsys):
    job = {
        "command": "rates",
        "numeric": {"rng_seed": 9},
        "params": {"mode": "smb", "chain": {"transition": [[0.5, 0.5], [0.5, 0.5]]}, "kind": "additive",
                   "n_grid": [100, 1000], "n_paths": 5},
    }
    path = write_job(tmp_path, job)
    main(["run", path])
    first = capsys.readouterr().out
    main(["run", path])
    assert capsys.readouterr().out == first


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    jsonschema.Draft202012Validator.check_schema(schema)
    assert schema == json.loads(json.dumps(job_schema()))


def test_schema_accepts_and_rejects():
    validator = jsonschema.Draft202012Validator(job_schema())
    assert "sweep" in COMMANDS
    assert validator.is_valid(entropy_job())
    assert validator.is_valid(kyfan_sweep())
    assert not validator.is_valid({**entropy_job(), "target": "kyfan"})


U01 = {"kind": "uniform", "low": 0.0, "high": 1.0}
EXP = {"kind": "exponential", "t": 0.2}
G2 = {"kind": "gaussian", "mean": [0.5], "cov": [[2.0]]}
CHAIN = {"transition": [[0.9, 0.1], [0.2, 0.8]], "psi": [2.0, 3.0]}
COIN = {"kind": "discrete_pmf", "points": [0, 1], "masses": [0.5, 0.5]}
ALL_JOBS = [
    ("entropy", {"distribution": G1, "weight": EXP}),
    ("divergence", {"f": G1, "g": G2, "weight": EXP}),
    ("gibbs", {"f": G1, "g": G2, "weight": ONE}),
    ("concavity", {"f1": G1, "f2": G2, "g1": G2, "g2": G1, "lam": 0.3, "weight": EXP}),
    ("kyfan", {"t": 0.1, "C1": 1.0, "C2": 4.0, "lam": 0.5}),
    ("hadamard", {"C": [[2.0, 0.5], [0.5, 1.0]], "weight": ONE}),
    ("gauss-max", {"distribution": {"kind": "laplace", "scale": 1.0}, "weight": EXP}),
    ("fisher", {"family": {"kind": "gaussian_location", "sigma": 2.0}, "theta": 0.0, "weight": EXP}),
    ("wfii", {"family1": {"kind": "gaussian_location", "sigma": 1.0},
              "family2": {"kind": "gaussian_location", "sigma": 2.0}, "theta": 0.0, "weight": ONE}),
    ("taylor", {"family": {"kind": "gaussian_location"}, "theta1": 0.0, "theta2": 0.1, "weight": EXP}),
    ("wepi", {"X1": G1, "X2": U01, "weight": ONE}),
    ("wlsi", {"variant": "uniform", "a1": 0, "b1": 1, "a2": 0, "b2": 1, "weight": ONE}),
    ("stein", {"sigma": 1.0, "weight": {"kind": "polynomial", "coefficients": [0, 0, 1]}}),
    ("debruijn", {"distribution": G1, "gamma": 0.5, "weight": ONE}),
    ("wep-scan", {"distribution": G1, "weight": ONE, "gamma_grid": [0.25, 0.5, 1.0]}),
    ("rates", {"mode": "iid", "pmf": COIN, "psi": ONE, "kind": "additive", "n_grid": [1, 2, 5]}),
    ("rates", {"mode": "markov_multiplicative", "chain": CHAIN}),
    ("rates", {"mode": "markov_additive", "chain": CHAIN, "J": 20}),
    ("rates", {"mode": "nonstationary", "alpha_w": 1.0, "c": 1.0, "n_grid": [2, 10, 50]}),
    ("rates", {"mode": "ar1", "a": 0.5, "psi": EXP, "n": 2}),
]


@pytest.mark.parametrize("command,params", ALL_JOBS, ids=[f"{c}-{i}" for i, (c, _) in enumerate(ALL_JOBS)])
def test_every_command_runs(command, params):
    job = {"command": command, "numeric": {"rng_seed": 7, "mc_samples": 20000}, "params": params}
    jsonschema.validate(job, job_schema())
    doc, _, status = run_job(job)
    assert status == 0
    assert doc["results"]
    assert doc["job"] == job


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "wentropy.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.startswith("wentropy ")


def test_run_job_status():
    doc, series, status = run_job(kyfan_sweep())
    assert status == 0
    assert "sweep" in series
    assert doc["results"]["summary"]


def test_set_param_paths():
    params = {"weight": {"parts": [[1.0, {}], [0.1, {"width": 1.0}]]}, "t": 0.0}
    out = set_param(params, "weight.parts[1][0]", 0.3)
    assert out["weight"]["parts"][1][0] == 0.3
    assert params["weight"]["parts"][1][0] == 0.1
    out = set_param(params, "weight.parts[1][1].width", 2.0)
    assert out["weight"]["parts"][1][1]["width"] == 2.0


def test_format_float():
    assert format_float(1.0) == "1.0"
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(math.nan) == '"nan"'

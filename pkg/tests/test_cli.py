import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from _sim import small_poisson
from hdlnm.cli import main

LAG_MODEL = {
    "terms": [{"kind": "intercept"},
              {"kind": "lag_tensor", "name": "h", "covariates": ["temp"], "lag": 5,
               "bases": [{"type": "thinplate", "k": 4}, {"type": "thinplate", "k": 4}]}],
    "family": "poisson",
}


def write_run(tmp_path, model, frame, **extra):
    frame.to_csv(tmp_path / "data.csv", index=False)
    config = {"schema_version": 1, "paths": {"data": "data.csv", "out": "out"}, "model": model,
              **extra}
    (tmp_path / "run.json").write_text(json.dumps(config))
    return str(tmp_path / "run.json")


def lag_frame(n=300):
    ds = small_poisson(n)
    return pd.DataFrame({"date": ds.time.astype(str), "count": ds.y.astype(int),
                         "temp": ds.covariates["temp"]})


@pytest.fixture()
def lag_run(tmp_path):
    cfg = write_run(tmp_path, LAG_MODEL, lag_frame(),
                    risk={"n_draws": 200, "reference": 15.0,
                          "x_grid": {"from": 5, "to": 25, "n": 11}},
                    check={"n_draws": 120, "max_lag": 10}, simulate={"n_draws": 3})
    assert main(["fit", "--config", cfg, "--seed", "1"]) == 0
    return tmp_path, cfg


def test_intercept_only_fit(tmp_path):
    frame = pd.DataFrame({"date": ["2020-01-01", "2020-01-02", "2020-01-03"], "count": [1, 2, 3]})
    cfg = write_run(tmp_path, {"terms": [{"kind": "intercept"}]}, frame)
    assert main(["fit", "--config", cfg, "--seed", "0"]) == 0
    model = json.loads((tmp_path / "out" / "model.json").read_text())
    assert model["coefficients"][0] == pytest.approx(np.log(2.0), abs=1e-10)
    report = json.loads((tmp_path / "out" / "fit_report.json").read_text())
    assert report["header"].startswith("hdlnm ")
    assert report["converged"] is True


def test_reruns_are_byte_identical(lag_run):
    tmp_path, cfg = lag_run
    first = (tmp_path / "out" / "model.json").read_bytes()
    assert main(["risk", "--config", cfg, "--seed", "3"]) == 0
    rr = (tmp_path / "out" / "rr_surface.csv").read_bytes()
    assert main(["fit", "--config", cfg, "--seed", "1"]) == 0
    assert main(["risk", "--config", cfg, "--seed", "3"]) == 0
    assert (tmp_path / "out" / "model.json").read_bytes() == first
    assert (tmp_path / "out" / "rr_surface.csv").read_bytes() == rr


def test_seed_required(lag_run, capsys):
    _, cfg = lag_run
    capsys.readouterr()
    assert main(["risk", "--config", cfg]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err == {"error": "ConfigError", "message": "seed required"}
    # predict is deterministic and needs no seed
    assert main(["predict", "--config", cfg]) == 0


def test_schema_errors(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"schema_version": 7}))
    assert main(["fit", "--config", str(tmp_path / "bad.json"), "--seed", "1"]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "schema_version" in err["message"]
    (tmp_path / "broken.json").write_text("{")
    assert main(["fit", "--config", str(tmp_path / "broken.json"), "--seed", "1"]) == 1
    assert main(["fit", "--config", str(tmp_path / "missing.json"), "--seed", "1"]) == 1
    frame = pd.DataFrame({"date": ["2020-01-01"], "count": [1]})
    cfg = write_run(tmp_path, {"terms": [{"kind": "smooth", "variable": "x"}]}, frame)
    assert main(["fit", "--config", cfg, "--seed", "1"]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "intercept" in err["message"]


def test_risk_outputs(lag_run):
    tmp_path, cfg = lag_run
    assert main(["risk", "--config", cfg, "--seed", "2"]) == 0
    out = tmp_path / "out"
    rr = pd.read_csv(out / "rr_surface.csv", comment="#")
    assert len(rr) == 6 * 11
    at_ref = rr[rr["x"] == 15.0]
    assert len(at_ref) == 6
    assert (at_ref[["est", "lo", "hi"]] == 1.0).all().all()
    cr = pd.read_csv(out / "cr.csv", comment="#")
    assert len(cr) == 11 and float(cr.loc[cr["x"] == 15.0, "est"].iloc[0]) == 1.0
    af = json.loads((out / "af.json").read_text())
    assert af["header"].startswith("hdlnm ") and "seed=2" in af["header"]
    assert {"overall", "subsets", "ot", "thresholds"} <= set(af)
    assert (out / "heatmap.svg").read_text().startswith("<svg")
    assert (out / "rr_surface.csv").read_text().startswith("# hdlnm ")


def test_af_is_zero_when_every_day_is_at_ot(tmp_path):
    frame = lag_frame()
    frame["temp"] = 17.0
    cfg = write_run(tmp_path, LAG_MODEL, lag_frame(), risk={"n_draws": 50, "ot": [17.0]})
    assert main(["fit", "--config", cfg, "--seed", "1"]) == 0
    frame.to_csv(tmp_path / "flat.csv", index=False)
    config = json.loads((tmp_path / "run.json").read_text())
    config["paths"]["data"] = "flat.csv"
    config["paths"]["model"] = "out/model.json"
    (tmp_path / "flat.json").write_text(json.dumps(config))
    assert main(["risk", "--config", str(tmp_path / "flat.json"), "--seed", "1"]) == 0
    af = json.loads((tmp_path / "out" / "af.json").read_text())
    assert af["overall"]["est"] == 0.0


def test_check_and_simulate(lag_run):
    tmp_path, cfg = lag_run
    assert main(["check", "--config", cfg, "--seed", "4"]) == 0
    diag = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
    assert diag["n_draws"] == 120 and len(diag["acf"]["lags"]) == 10
    assert main(["simulate", "--config", cfg, "--seed", "4"]) == 0
    lines = (tmp_path / "out" / "ppd_draws.csv").read_text().splitlines()
    assert lines[0].startswith("# hdlnm ")
    assert len(lines) == 2 + 3
    assert len(lines[1].split(",")) == len(pd.read_csv(tmp_path / "data.csv")) - 5


def test_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "hdlnm.cli", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and res.stdout.startswith("hdlnm ")

import csv
import io
import json
import math

import pytest

from randnodal.cli import main
from randnodal.experiment import ExperimentConfig


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_moments_ball(capsys):
    code, out, _ = run(capsys, "moments", "--dim", "3")
    d = json.loads(out)
    assert code == 0 and d["n"] == 3
    assert d["c1"] == pytest.approx(d["c0"] / 5, rel=1e-12)


def test_moments_annulus_and_mc(capsys):
    code, out, _ = run(capsys, "moments", "--dim", "2", "--gamma", "0.5")
    assert code == 0 and json.loads(out)["gamma"] == 0.5
    code, out, _ = run(capsys, "moments", "--dim", "2", "--mc", "20000", "--seed", "1")
    d = json.loads(out)
    assert code == 0 and d["c0_stderr"] > 0
    code, _, err = run(capsys, "moments", "--dim", "2", "--mc", "20000", "--gamma", "0.5")
    assert code == 2 and "cannot be combined" in err


def test_randmat(capsys):
    code, out, _ = run(capsys, "randmat", "--size", "1", "--trace-coupling", "0.1666666667",
                       "--index", "0", "--samples", "100000")
    d = json.loads(out)
    assert code == 0
    assert abs(d["estimate"] - math.sqrt(6) / (4 * math.sqrt(math.pi))) < 4 * d["stderr"]
    code, _, err = run(capsys, "randmat", "--size", "1", "--trace-coupling", "0.1",
                       "--index", "3", "--samples", "100000")
    assert code == 2 and "error" in err


def test_kernel_csv(capsys):
    code, out, _ = run(capsys, "kernel", "--manifold", "torus2", "--L", "100",
                       "--sweep", "100,1000,10000")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 3
    assert float(rows[-1]["rel_error"]) < 0.02
    code, _, err = run(capsys, "kernel", "--manifold", "torus2", "--L", "100", "--derivs", "t")
    assert code == 2


def test_nodal_stdout_and_file(capsys, tmp_path):
    code, out, _ = run(capsys, "nodal", "--manifold", "circle", "--L", "100", "--trials", "5",
                       "--pure")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [r["n_zeros"] for r in rows] == ["20"] * 5
    dest = tmp_path / "t.csv"
    code, out, _ = run(capsys, "nodal", "--manifold", "torus2", "--L", "40", "--trials", "2",
                       "--out", str(dest))
    assert code == 0 and out == ""
    rows = list(csv.DictReader(dest.open()))
    assert len(rows) == 2 and rows[0]["crit0"] == rows[0]["crit1"]


def test_nodal_rejects_coarse_grid(capsys):
    code, _, err = run(capsys, "nodal", "--manifold", "torus2", "--L", "40", "--trials", "1",
                       "--grid", "4")
    assert code == 2 and "nodal" in err


def test_density(capsys):
    code, out, _ = run(capsys, "density", "--manifold", "torus2", "--point", "1.0,2.0",
                       "--L", "400", "--samples", "20000", "--asymptotic")
    d = json.loads(out)
    assert code == 0
    assert set(d) >= {"density", "stderr", "asymptotic_constant", "ratio"}
    assert d["asymptotic_constant"] == pytest.approx(1 / (8 * math.pi ** 2))
    assert 0.8 < d["ratio"] < 1.2
    code, _, err = run(capsys, "density", "--manifold", "torus2", "--point", "0,0",
                       "--L", "400")
    assert code == 2 and "within" in err


def test_experiment_and_summarize(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    ExperimentConfig("circle", [100, 400], 50, seed=2).save(cfg)
    code, out, _ = run(capsys, "experiment", "--config", str(cfg), "--out",
                       str(tmp_path / "o"), "--workers", "2")
    assert code == 0
    s = json.loads(out)
    code, out2, _ = run(capsys, "summarize", "--in", str(tmp_path / "o" / "trials.csv"))
    assert code == 0 and json.loads(out2) == s


def test_experiment_config_errors(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    d = ExperimentConfig("circle", [100], 5).to_dict()
    d.update(L=[], trials=0)
    cfg.write_text(json.dumps(d))
    code, _, err = run(capsys, "experiment", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 2 and "L:" in err and "trials:" in err
    code, _, err = run(capsys, "summarize", "--in", str(tmp_path / "none.csv"))
    assert code == 2 and "none.csv" in err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit):
        main([])
    with pytest.raises(SystemExit):
        main(["density", "--manifold", "torus2", "--point", "a,b", "--L", "4"])

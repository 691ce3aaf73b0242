import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randnodal.experiment import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    SummaryError,
    fit_scaling,
    run_experiment,
    summarize,
    theory_constant,
)


configs = st.builds(
    ExperimentConfig,
    manifold=st.sampled_from(["circle", "torus2", "sphere2"]),
    L=st.lists(st.floats(1.0, 1e5, allow_nan=False), min_size=1, max_size=5, unique=True)
    .map(sorted).filter(lambda v: all(b > a for a, b in zip(v, v[1:]))),
    trials=st.integers(1, 10000),
    seed=st.integers(0, 2 ** 32),
    family=st.just("full"),
    cells_per_wavelength=st.floats(8.0, 64.0),
    exclusion_radius=st.floats(0.0, 0.5),
    workers=st.integers(1, 16),
)


@settings(max_examples=50)
@given(configs)
def test_config_round_trip(cfg):
    back = ExperimentConfig.loads(cfg.dumps())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_config_round_trip_window(tmp_path):
    cfg = ExperimentConfig("torus2", [100, 200], 5, family="window", window=0.5)
    cfg.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg


def test_hash_ignores_workers():
    a = ExperimentConfig("circle", [100], 5, workers=1)
    b = ExperimentConfig("circle", [100], 5, workers=4)
    c = ExperimentConfig("circle", [100], 5, seed=1)
    assert a.config_hash() == b.config_hash() != c.config_hash()


@pytest.mark.parametrize("patch,field", [
    ({"L": []}, "L"),
    ({"L": [200, 100]}, "L"),
    ({"L": [100, 100]}, "L"),
    ({"L": [-1]}, "L"),
    ({"trials": 0}, "trials"),
    ({"manifold": "klein"}, "manifold"),
    ({"family": "window"}, "window"),
    ({"window": 0.5}, "window"),
    ({"cells_per_wavelength": 4}, "cells_per_wavelength"),
    ({"schema_version": 99}, "schema_version"),
    ({"workers": 0}, "workers"),
    ({"colour": "red"}, "colour"),
])
def test_config_schema_errors(patch, field):
    d = ExperimentConfig("circle", [100], 5).to_dict()
    d.update(patch)
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.from_dict(d)
    assert field in ei.value.errors


def test_config_lists_every_bad_field():
    d = ExperimentConfig("circle", [100], 5).to_dict()
    d.update(L=[], trials=0, seed=-1)
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.from_dict(d)
    assert set(ei.value.errors) == {"L", "trials", "seed"}


def test_config_missing_and_malformed():
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.from_dict({"manifold": "circle"})
    assert {"L", "trials", "schema_version"} <= set(ei.value.errors)
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("[1, 2]")


# --------------------------------------------------------------------------
# summaries


def _write(path, text):
    path.write_text(text)
    return path


def test_summary_of_hand_fixture(tmp_path):
    p = _write(tmp_path / "t.csv",
               "trial_id,L,n_zeros,degenerate,seconds,reasons\n"
               "0,100.0,18,0,0.1,\n"
               "1,100.0,20,0,0.1,\n"
               "2,100.0,25,0,0.1,\n")
    s = summarize(p)
    (row,) = s["per_L"]
    assert row["mean"] == pytest.approx(21.0)
    # sample sd of (18, 20, 25) is sqrt(13)
    assert row["stderr"] == pytest.approx(math.sqrt(13) / math.sqrt(3))
    assert row["degenerate_fraction"] == 0
    assert s["fit"] is None and s["statistic"] == "n_zeros"
    assert s["theory_constant"] == pytest.approx(2 / math.sqrt(3))


def test_degenerate_rows_excluded(tmp_path):
    p = _write(tmp_path / "t.csv",
               ",".join(CSV_COLUMNS[2]) + "\n"
               "0,100.0,5,9,9,0,0,0,0.1,0,\n"
               "1,100.0,6,11,11,0,0,0,0.1,0,\n"
               "2,100.0,99,500,1,0,0,1,0.1,3,unbalanced critical points\n"
               "3,100.0,,,,,,1,0.1,3,nodal curve left its cell\n")
    s = summarize(p)
    (row,) = s["per_L"]
    assert row["mean"] == 10.0 and row["b0_mean"] == 5.5
    assert row["degenerate_fraction"] == 0.5 and row["trials"] == 4


@pytest.mark.parametrize("text,needle", [
    ("", "empty"),
    ("trial_id,L,n_zeros,degenerate\n", "no data"),
    ("a,b,c\n1,2,3\n", "line 1"),
    ("trial_id,L,n_zeros,degenerate\n0,100,3,0\n1,100,x,0\n", "line 3"),
    ("trial_id,L,n_zeros,degenerate\n0,100,3,0\n1,100,3\n", "line 3"),
    ("trial_id,L,n_zeros,degenerate\n0,100,3,2\n", "line 2"),
    ("trial_id,L,n_zeros,degenerate\n0,100,,0\n", "line 2"),
])
def test_malformed_csv(tmp_path, text, needle):
    p = _write(tmp_path / "bad.csv", text)
    with pytest.raises(SummaryError, match=needle):
        summarize(p)


def test_missing_csv(tmp_path):
    with pytest.raises(SummaryError, match="nope.csv"):
        summarize(tmp_path / "nope.csv")


# --------------------------------------------------------------------------
# fits


@settings(max_examples=30)
@given(st.floats(0.2, 2.0), st.floats(0.1, 10.0))
def test_fit_recovers_exact_power_law(e, c):
    L = np.array([100.0, 400.0, 1600.0])
    m = c * L ** e
    f = fit_scaling(L, m, 0.01 * m, theory_exponent=e)
    assert f.exponent == pytest.approx(e, abs=1e-9)
    assert f.constant == pytest.approx(c, rel=1e-9)
    assert f.fixed_constant == pytest.approx(c, rel=1e-9)
    assert f.exponent_ci[0] <= f.exponent <= f.exponent_ci[1]
    assert f.constant_ci[0] <= f.constant <= f.constant_ci[1]
    assert f.fixed_constant_ci[0] <= f.fixed_constant <= f.fixed_constant_ci[1]


def test_fit_interval_coverage():
    rng = np.random.default_rng(0)
    L = np.array([100.0, 400.0, 1600.0, 6400.0])
    hits = 0
    for _ in range(400):
        m = 2.0 * L ** 0.5
        se = 0.02 * m
        f = fit_scaling(L, m + se * rng.standard_normal(4), se, 0.5)
        hits += f.exponent_ci[0] <= 0.5 <= f.exponent_ci[1]
    assert 0.91 <= hits / 400 <= 0.99


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_scaling([100], [1.0], [0.1], 0.5)
    with pytest.raises(ValueError):
        fit_scaling([100, 200], [1.0, -1.0], [0.1, 0.1], 0.5)


def test_theory_constants():
    assert theory_constant("circle") == pytest.approx(2 / math.sqrt(3))
    assert theory_constant("torus2") == pytest.approx(0.5)
    assert theory_constant("sphere2", "pure") == pytest.approx(1 / (math.pi * math.sqrt(2)))
    w = theory_constant("torus2", "window", 0.999)
    assert w == pytest.approx(4 * math.pi ** 2 / (4 * math.sqrt(2) * math.pi ** 2), rel=5e-3)


# --------------------------------------------------------------------------
# end to end


def _strip_seconds(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    k = rows[0].index("seconds")
    return [r[:k] + r[k + 1:] for r in rows]


def test_run_experiment_circle(tmp_path):
    cfg = ExperimentConfig("circle", [100, 400, 1600], 200, seed=3)
    s = run_experiment(cfg, tmp_path / "a")
    out = tmp_path / "a"
    assert {p.name for p in out.iterdir()} == {"config.json", "trials.csv", "summary.json",
                                               "scaling_n_zeros.txt"}
    assert json.loads((out / "summary.json").read_text()) == s
    assert s["config_hash"] == cfg.config_hash()
    assert [r["L"] for r in s["per_L"]] == [100, 400, 1600]
    assert 0.45 < s["fit"]["exponent"] < 0.55
    assert s["fit"]["fixed_constant"] == pytest.approx(2 / math.sqrt(3), rel=0.05)
    # summarize is idempotent with the embedded summary
    assert summarize(out / "trials.csv") == s
    lines = (out / "scaling_n_zeros.txt").read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 4


def test_run_experiment_worker_independent(tmp_path):
    cfg = ExperimentConfig("torus2", [30, 60], 4, seed=1)
    run_experiment(cfg, tmp_path / "w1")
    cfg.workers = 3
    run_experiment(cfg, tmp_path / "w3")
    a = _strip_seconds(tmp_path / "w1" / "trials.csv")
    assert a == _strip_seconds(tmp_path / "w3" / "trials.csv")
    assert a[0] == [c for c in CSV_COLUMNS[2] if c != "seconds"]
    assert len(a) == 9


def test_run_experiment_bad_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        run_experiment(ExperimentConfig("circle", [10], 1), blocker / "sub")


def test_circle_sweep_scaling(tmp_path):
    cfg = ExperimentConfig("circle", [400, 1600, 6400], 2000, seed=12)
    fit = run_experiment(cfg, tmp_path)["fit"]
    assert 0.47 <= fit["exponent"] <= 0.53
    # pinned-exponent constant; the free intercept extrapolates to L = 1
    total = fit["fixed_constant"]
    assert total == pytest.approx(2 / math.sqrt(3), rel=0.03)
    assert total / (2 * math.pi) == pytest.approx(1 / (math.pi * math.sqrt(3)), rel=0.03)

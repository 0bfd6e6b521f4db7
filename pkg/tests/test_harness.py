import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmwave_fusion.geo import enu_to_geodetic
from mmwave_fusion.harness.cli import main
from mmwave_fusion.harness.experiment import (ConfigError, ExperimentConfig, compare, comparison_table,
                                              env_overrides, filter_variants, run_experiment)
from mmwave_fusion.harness.metrics import (AlignmentError, align_nearest, compute_error_report, horizontal_errors,
                                           report_from_errors)

ORIGIN = (np.radians(45.42), np.radians(-75.70), 70.0)
SHORT = {"name": "short", "trajectory": {"waypoints": [[-320, 220], [-120, 220]]}, "figures": False}


def short_config(**over):
    cfg = ExperimentConfig.from_dict(SHORT, environ={})
    return cfg.with_overrides(**over) if over else cfg


# --- error statistics ---------------------------------------------------------------


def test_report_hand_arithmetic():
    r = report_from_errors([0.1, 0.2, 0.4, 3.0])
    assert r.rms_2d == np.sqrt(9.21 / 4)
    assert r.max_2d == 3.0
    assert r.pct_sub_30cm == 50.0 and r.pct_sub_1m == 75.0 and r.pct_sub_2m == 75.0
    assert np.array_equal(r.cdf, [[0.1, 0.25], [0.2, 0.5], [0.4, 0.75], [3.0, 1.0]])


def test_report_constant_offset():
    r = report_from_errors(np.full(10, 0.5))
    assert r.rms_2d == 0.5 and r.max_2d == 0.5
    assert (r.pct_sub_2m, r.pct_sub_1m, r.pct_sub_30cm) == (100.0, 100.0, 0.0)


def test_report_perfect_estimate():
    t = np.arange(20) * 0.1
    enu = np.column_stack([np.arange(20.0), np.zeros(20), np.zeros(20)])
    pos = enu_to_geodetic(enu, ORIGIN)
    r = compute_error_report(t, pos, t, pos)
    assert r.rms_2d == 0.0 and r.max_2d == 0.0
    assert r.pct_sub_30cm == 100.0


def test_report_rejects_bad_input():
    for bad in ([], [np.nan], [-1.0]):
        with pytest.raises(ValueError):
            report_from_errors(bad)


def test_horizontal_error_metres():
    truth = enu_to_geodetic(np.array([[0.0, 0.0, 0.0]]), ORIGIN)
    est = enu_to_geodetic(np.array([[3.0, 4.0, 100.0]]), ORIGIN)
    assert horizontal_errors(est, truth)[0] == pytest.approx(5.0, abs=1e-6)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=200))
def test_report_properties(errors):
    r = report_from_errors(errors)
    assert r.pct_sub_30cm <= r.pct_sub_1m <= r.pct_sub_2m
    assert np.all(np.diff(r.cdf[:, 0]) >= 0) and np.all(np.diff(r.cdf[:, 1]) > 0)
    assert r.cdf[-1, 1] == 1.0
    assert r.max_2d == max(errors)
    assert r.rms_2d <= r.max_2d * (1 + 1e-12)


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=50), st.floats(0, 5))
def test_report_monotone_in_errors(errors, extra):
    a = report_from_errors(errors)
    b = report_from_errors(np.asarray(errors) + extra)
    assert b.pct_sub_30cm <= a.pct_sub_30cm and b.pct_sub_2m <= a.pct_sub_2m
    assert b.rms_2d >= a.rms_2d - 1e-12


def test_align_nearest():
    keep, j = align_nearest([0.0, 0.04, 0.06, 0.5, 2.0], [0.0, 0.1, 0.2, 0.3])
    assert keep.tolist() == [True, True, True, False, False]
    assert j[:3].tolist() == [0, 0, 1]
    with pytest.raises(AlignmentError):
        align_nearest([0.0], [0.0, 0.0])
    with pytest.raises(AlignmentError):
        compute_error_report([5.0], [[0, 0, 0]], [0.0, 0.1], [[0, 0, 0], [0, 0, 0]])


# --- configuration -------------------------------------------------------------------


def test_config_errors():
    with pytest.raises(ConfigError, match="unknown config key 'filter.knd'"):
        ExperimentConfig.from_dict({"filter": {"knd": "ekf"}}, environ={})
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig.from_dict({"seed": -1}, environ={})
    with pytest.raises(ConfigError, match="filter.kind"):
        ExperimentConfig.from_dict({"filter": {"kind": "pf"}}, environ={})
    with pytest.raises(ConfigError, match="scene"):
        ExperimentConfig.from_dict({"scene": "nowhere.yaml"}, environ={})
    with pytest.raises(ConfigError, match="unknown preset"):
        ExperimentConfig.load("no_such_preset")


def test_env_overrides():
    assert env_overrides({"MMWF_FILTER__KIND": "ekf", "MMWF_SEED": "3", "OTHER": "x"}) == \
        {"filter": {"kind": "ekf"}, "seed": 3}
    cfg = ExperimentConfig.from_dict(SHORT, environ={"MMWF_FILTER__USE_SBR": "false"})
    assert cfg["filter"]["use_sbr"] is False


def test_presets_load():
    for name in ("high_outage", "low_outage", "nees"):
        cfg = ExperimentConfig.load(name, environ={})
        assert cfg.scene().validate() is not None
    assert ExperimentConfig.load("high_outage", environ={}).digest() != \
        ExperimentConfig.load("low_outage", environ={}).digest()


def test_overrides_and_labels():
    cfg = short_config(**{"filter.kind": "ekf", "seed": 4})
    assert cfg.label == "short:ekf-sbr-on" and cfg["seed"] == 4
    assert [c.label for c in filter_variants(cfg)] == ["short:ukf-sbr-on", "short:ekf-sbr-on"]


# --- experiments -----------------------------------------------------------------------


def test_run_experiment_artifacts(tmp_path):
    res = run_experiment(short_config(figures=True), tmp_path)
    names = {p.name for p in res.files.values()}
    assert {"estimate.csv", "errors.csv", "cdf.csv", "report.json", "error_cdf.png", "plan.png"} <= names
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["stats"]["epochs"] == len(res.output.t)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seeds"]["simulation"] == 0 and "report" in man["outputs"]
    assert res.report.pct_sub_2m > 90.0


def test_compare_self_is_zero_difference(tmp_path):
    cfg = short_config()
    table, _ = compare([cfg, cfg], tmp_path)
    for key in table.values:
        assert table.difference(key) == 0.0
        assert table.winners[key] == "tie"
    assert (tmp_path / "compare.md").exists() and (tmp_path / "compare.csv").exists()


def test_comparison_table_winners():
    a, b = report_from_errors([0.1, 0.2]), report_from_errors([0.1, 0.5])
    t = comparison_table({"a": a, "b": b})
    assert t.winners["rms_2d"] == "a" and t.winners["pct_sub_2m"] == "tie"
    assert t.winners["pct_sub_30cm"] == "a"
    assert "Sub-30 cm" in t.to_text()


# --- CLI --------------------------------------------------------------------------------


def write_config(tmp_path):
    import yaml

    path = tmp_path / "short.yaml"
    path.write_text(yaml.safe_dump({**SHORT, "scene": "downtown.yaml"}))
    return path


def test_cli_pipeline(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 0
    assert main(["fuse", "--config", str(cfg), "--inputs", str(tmp_path / "sim"), "--filter", "ekf",
                 "--out", str(tmp_path / "fuse")]) == 0
    assert main(["evaluate", "--estimate", str(tmp_path / "fuse" / "estimate.csv"),
                 "--truth", str(tmp_path / "sim" / "truth.csv"), "--out", str(tmp_path / "eval")]) == 0
    stats = json.loads((tmp_path / "eval" / "report.json").read_text())["stats"]
    assert stats["epochs"] > 0 and (tmp_path / "eval" / "error_cdf.png").exists()
    capsys.readouterr()


def test_cli_run_and_compare(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--sbr", "off", "--out", str(tmp_path / "run")]) == 0
    assert json.loads((tmp_path / "run" / "report.json").read_text())["sbr"] is False
    assert main(["compare", "--config", str(cfg), "--vary", "filter", "--out", str(tmp_path / "cmp")]) == 0
    assert "winner" in capsys.readouterr().out


def test_cli_config_error(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["compare", "--config", str(write_config(tmp_path)), "--out", str(tmp_path)]) == 2


def test_cli_determinism(tmp_path):
    cfg = write_config(tmp_path)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / d)]) == 0
    for name in ("estimate.csv", "errors.csv", "cdf.csv", "report.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

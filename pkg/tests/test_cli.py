import csv
import json

import numpy as np
import pytest

from gpaims.cli import RunConfig, main, read_config, UsageError


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    code = run_cli("fit", "--dataset", "toy1d", "--samples", 50, "--seed", 3, "--out", out)
    return code, out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_toy_smoke_exit_zero(toy_run):
    code, out = toy_run
    assert code == 0
    for name in ("samples.csv", "levels.csv", "summary.json", "training.csv", "events.jsonl", "config.txt"):
        assert (out / name).exists()
    rows = read_rows(out / "samples.csv")
    assert len(rows) == 50 and list(rows[0]) == ["log_phi1", "nugget", "h"]


def test_summary_map_is_minimum(toy_run):
    _, out = toy_run
    summary = json.loads((out / "summary.json").read_text())
    h = [float(r["h"]) for r in read_rows(out / "samples.csv")]
    assert summary["map_h"] == min(h)
    levels = read_rows(out / "levels.csv")
    assert summary["levels"] == len(levels) - 1
    events = (out / "events.jsonl").read_text().splitlines()
    assert len(events) == len(levels)
    for key in ("seed", "wall_time", "map_lengths", "map_nugget"):
        assert key in summary


def test_rerun_is_byte_identical(toy_run, tmp_path):
    _, out = toy_run
    assert run_cli("fit", "--config", out / "config.txt", "--out", tmp_path) == 0
    for name in ("samples.csv", "levels.csv", "training.csv", "events.jsonl"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_predict_and_diagnose(toy_run, capsys):
    _, out = toy_run
    assert run_cli("predict", "--config", out / "config.txt", "--out", out) == 0
    text = capsys.readouterr().out
    assert "mixture RMSE" in text and "MAP RMSE" in text
    rows = read_rows(out / "predictions.csv")
    assert len(rows) == 100
    assert {"mixture_mean", "mixture_var", "map_mean", "map_var", "actual"} <= set(rows[0])
    assert run_cli("diagnose", "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    resid = read_rows(out / "residuals.csv")
    assert report["count"] == len(resid) == 100
    assert "x1" in resid[0]


def test_predict_with_test_file_equal_to_training(toy_run, tmp_path):
    _, out = toy_run
    test = tmp_path / "t.csv"
    test.write_text((out / "training.csv").read_text())
    dest = tmp_path / "run"
    dest.mkdir()
    for name in ("summary.json", "samples.csv", "training.csv"):
        (dest / name).write_bytes((out / name).read_bytes())
    assert run_cli("predict", "--dataset", "toy1d", "--out", dest, "--test", test) == 0
    rows = read_rows(dest / "predictions.csv")
    train = read_rows(out / "training.csv")
    assert len(rows) == len(train)


def test_perfect_predictions_give_zero_residuals(tmp_path):
    with open(tmp_path / "predictions.csv", "w") as fh:
        fh.write("x1,mixture_mean,mixture_var,map_mean,map_var,actual,mixture_resid,map_resid\n")
        for i in range(5):
            fh.write(f"{i / 5},{i},1.0,{i},2.0,{i},0,0\n")
    assert run_cli("diagnose", "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "residuals.csv")
    assert all(float(r["mixture_resid"]) == 0.0 and float(r["map_resid"]) == 0.0 for r in rows)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["mixture_within"] == 5 and report["count"] == 5


def test_diagnose_without_actuals(tmp_path):
    with open(tmp_path / "predictions.csv", "w") as fh:
        fh.write("x1,mixture_mean,mixture_var,map_mean,map_var,actual,mixture_resid,map_resid\n")
        fh.write("0.1,1,1,1,1,,,\n")
    assert run_cli("diagnose", "--out", tmp_path) == 2


def test_missing_artifacts(tmp_path):
    assert run_cli("predict", "--out", tmp_path) == 2
    assert run_cli("diagnose", "--out", tmp_path) == 2


def test_usage_errors(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("dataset = toy1d\nbogus = 1\n")
    assert run_cli("fit", "--config", cfg, "--out", tmp_path) == 2
    assert run_cli("fit", "--samples", 5, "--out", tmp_path) == 2
    assert run_cli("fit", "--prior", "reference", "--out", tmp_path) == 2
    assert run_cli("fit", "--dataset", "file:/nonexistent.csv", "--out", tmp_path) == 2
    assert run_cli("frobnicate") == 2


def test_not_converged_exit_three(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("dataset = toy1d\nsamples = 30\nmax_levels = 1  # stop early\n")
    assert run_cli("fit", "--config", cfg, "--out", tmp_path) == 3


def test_file_dataset(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 10, size=(10, 1))
    with open(tmp_path / "d.csv", "w") as fh:
        fh.write("x1,y\n")
        for x in X[:, 0]:
            fh.write(f"{float(x)!r},{float(5 + x + np.cos(x))!r}\n")
    cfg = tmp_path / "c.txt"
    cfg.write_text(f"dataset = file:{tmp_path / 'd.csv'}\nsamples = 40\nrescale = true\n")
    out = tmp_path / "run"
    assert run_cli("fit", "--config", cfg, "--out", out) in (0, 3)
    assert run_cli("predict", "--config", cfg, "--out", out) == 2  # needs --test
    test = tmp_path / "t.csv"
    test.write_text("x1\n2.5\n7.5\n")
    assert run_cli("predict", "--config", cfg, "--out", out, "--test", test) == 0
    rows = read_rows(out / "predictions.csv")
    assert rows[0]["actual"] == ""
    assert 0 <= float(rows[0]["x1"]) <= 1


def test_read_config_types(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\nsamples = 100\nstop_ratio = 0.2\nrescale = yes\nprior = lognormal:0,1\n")
    values = read_config(cfg)
    assert values == {"samples": 100, "stop_ratio": 0.2, "rescale": True, "prior": "lognormal:0,1"}
    cfg.write_text("samples = many\n")
    with pytest.raises(UsageError):
        read_config(cfg)
    assert RunConfig().dump().startswith("dataset = branin")

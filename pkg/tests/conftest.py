import csv
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gpaims.cli import main  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with the measured values."""
    lines = []
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if rep.when != "call" and not (outcome == "error" and rep.when == "setup"):
                continue
            detail = [ln for ln in rep.capstdout.splitlines() if ln.startswith("criterion")]
            tag = "PASS" if outcome == "passed" else "FAIL" if outcome == "failed" else outcome.upper()
            lines.append((nodeid.split("::", 1)[1], tag, detail[-1] if detail else ""))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, tag, detail in sorted(lines):
        terminalreporter.write_line(f"{tag:5s} {name}: {detail}")


SEED = 1


def _fit_predict(out, dataset, *extra):
    args = ["--dataset", dataset, "--seed", str(SEED), "--samples", "2000", "--out", str(out), *extra]
    t0 = time.perf_counter()
    code = main(["fit", *args])
    fit_time = time.perf_counter() - t0
    main(["predict", *args])
    main(["diagnose", "--out", str(out)])
    with open(out / "samples.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(out / "predictions.csv", newline="") as fh:
        preds = list(csv.DictReader(fh))
    col = lambda rows, k: np.array([float(r[k]) for r in rows])  # noqa: E731
    p = sum(k.startswith("log_phi") for k in rows[0])
    return {
        "out": out,
        "code": code,
        "fit_time": fit_time,
        "summary": json.loads((out / "summary.json").read_text()),
        "report": json.loads((out / "report.json").read_text()),
        "log_lengths": np.column_stack([col(rows, f"log_phi{i + 1}") for i in range(p)]),
        "h": col(rows, "h"),
        "actual": col(preds, "actual"),
        "mixture_mean": col(preds, "mixture_mean"),
        "map_mean": col(preds, "map_mean"),
    }


@pytest.fixture(scope="session")
def branin_run(tmp_path_factory):
    return _fit_predict(tmp_path_factory.mktemp("branin"), "branin")


@pytest.fixture(scope="session")
def model2d_run(tmp_path_factory):
    return _fit_predict(tmp_path_factory.mktemp("model2d"), "model2d", "--denominator", "cubic")

"""Command-line entry point: ``gpaims fit | predict | diagnose | demo``.

Exit codes: 0 success, 2 usage or input error, 3 sampler did not converge.
"""

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .aims import SamplerConfig, run
from .gp import HyperParams, InvalidArgumentError, TrainingSet, factorize
from .mixture import MixtureEmulator, rmse, standardized_residuals, BAND
from .testbed import (
    BUILTINS,
    DatasetFormatError,
    latin_hypercube,
    load_dataset,
    resolve_dataset,
    simulator,
    write_dataset,
)
from .transforms import parse_prior

log = logging.getLogger("gpaims")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 2, 3


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    dataset: str = "branin"
    samples: int = 2000
    mode: str = "optimize"
    seed: int = 0
    prior: str = "flat"
    weighting: str = "uniform"
    out: str = ""
    ess_gamma: float = 0.5
    spread_decay: float = 0.5
    initial_spread: float = 1.0
    stop_ratio: float = 0.1
    tau_floor: float = 1e-6
    max_levels: int = 50
    workers: int = 1
    denominator: str = "verbatim"
    design_size: int = 0
    test_size: int = 100
    rescale: bool = False
    include_nugget: bool = True

    def sampler_config(self):
        return SamplerConfig(
            sample_count=self.samples,
            ess_gamma=self.ess_gamma,
            spread_decay=self.spread_decay,
            initial_spread=self.initial_spread,
            stop_ratio=self.stop_ratio,
            tau_floor=self.tau_floor,
            mode=self.mode,
            max_levels=self.max_levels,
            master_seed=self.seed,
            workers=self.workers,
        )

    def validate(self):
        try:
            self.sampler_config()
            parse_prior(self.prior)
        except InvalidArgumentError as exc:
            raise UsageError(str(exc)) from None
        if self.weighting not in ("uniform", "importance"):
            raise UsageError(f"weighting must be 'uniform' or 'importance', got {self.weighting!r}")
        if self.denominator not in ("verbatim", "cubic"):
            raise UsageError(f"denominator must be 'verbatim' or 'cubic', got {self.denominator!r}")
        if not (self.dataset in BUILTINS or self.dataset.startswith("file:")):
            raise UsageError(f"unknown dataset {self.dataset!r}")
        return self

    @property
    def out_dir(self):
        return Path(self.out or f"runs/{self.dataset.replace(':', '_').replace('/', '_')}")

    def dump(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def _coerce(field, text):
    if field.type in (bool, "bool"):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{field.name}: expected a boolean, got {text!r}")
    for kind in (int, float):
        if field.type in (kind, kind.__name__):
            try:
                return kind(text)
            except ValueError:
                raise UsageError(f"{field.name}: expected {kind.__name__}, got {text!r}") from None
    return text.strip()


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(fields[key], value)
    return values


def build_config(args):
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for name, attr in (
        ("dataset", "dataset"),
        ("samples", "samples"),
        ("mode", "mode"),
        ("seed", "seed"),
        ("prior", "prior"),
        ("weighting", "weighting"),
        ("out", "out"),
        ("denominator", "denominator"),
        ("workers", "workers"),
    ):
        v = getattr(args, attr, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values).validate()


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------


def _fmt(v):
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fit(cfg):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        ds = resolve_dataset(
            cfg.dataset,
            np.random.default_rng([cfg.seed, 1]),
            n=cfg.design_size or None,
            denominator=cfg.denominator,
            rescale=cfg.rescale,
        )
        data = ds.training_set()
    except (OSError, DatasetFormatError, InvalidArgumentError) as exc:
        raise UsageError(str(exc)) from None
    prior = parse_prior(cfg.prior)
    (out / "config.txt").write_text(cfg.dump())
    write_dataset(out / "training.csv", data.X, data.y)

    events = open(out / "events.jsonl", "w")

    def on_level(record):
        events.write(json.dumps(record) + "\n")
        events.flush()

    t0 = time.perf_counter()
    try:
        result = run(data, cfg.sampler_config(), prior, on_level=on_level)
    finally:
        events.close()
    wall = time.perf_counter() - t0

    p = data.p
    header = [f"log_phi{i + 1}" for i in range(p)] + ["nugget", "h"]
    _write_csv(
        out / "samples.csv",
        header,
        (
            list(z[:p]) + [phi.nugget, h]
            for z, phi, h in zip(result.final_samples, result.hyperparams, result.h_values)
        ),
    )
    _write_csv(
        out / "levels.csv",
        ["level", "tau", "cov_delta", "spread", "local_rate", "global_rate", "dr_rate", "min_h"],
        (
            [s["level"], s["tau"], s["cov_delta"], s["spread"], s["local_rate"],
             s["global_rate"], s["dr_rate"], s["min_h"]]
            for s in (lv.summary() for lv in result.levels)
        ),
    )
    phi = result.map_candidate
    summary = {
        "dataset": cfg.dataset,
        "n": data.n,
        "p": p,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "map_lengths": phi.lengths.tolist(),
        "map_log_lengths": np.log(phi.lengths).tolist(),
        "map_nugget": phi.nugget,
        "map_h": result.map_h,
        "levels": len(result.levels) - 1,
        "converged": result.converged,
        "stop_reason": result.stop_reason,
        "temperatures": result.temperature_trace[1:],
        "input_offset": None if ds.scale_offset is None else ds.scale_offset.tolist(),
        "input_width": None if ds.scale_width is None else ds.scale_width.tolist(),
        "wall_time": wall,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(
        f"fit: {summary['levels']} levels, stop={result.stop_reason}, "
        f"MAP H={result.map_h:.6g}, log-lengths={np.round(np.log(phi.lengths), 4).tolist()}, "
        f"nugget={phi.nugget:.3g} -> {out}"
    )
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _load_fit(out):
    try:
        summary = json.loads((out / "summary.json").read_text())
        train = load_dataset(out / "training.csv")
        rows = _read_csv(out / "samples.csv")
    except (OSError, ValueError) as exc:
        raise UsageError(f"missing or unreadable fit artifacts in {out}: {exc}") from None
    p = summary["p"]
    phis = [
        HyperParams(np.exp([float(r[f"log_phi{i + 1}"]) for i in range(p)]), float(r["nugget"]))
        for r in rows
    ]
    h = np.array([float(r["h"]) for r in rows])
    return summary, TrainingSet(train.inputs, train.outputs), phis, h


def _test_set(cfg, summary, test_path):
    p = summary["p"]
    if test_path:
        try:
            with open(test_path, newline="") as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise UsageError(f"cannot read test inputs: {exc}") from None
        try:
            U = np.array([[float(r[f"x{i + 1}"]) for i in range(p)] for r in rows])
            y = np.array([float(r["y"]) if r.get("y") not in (None, "") else np.nan for r in rows])
        except (KeyError, ValueError) as exc:
            raise UsageError(f"{test_path}: bad test file ({exc})") from None
        if summary.get("input_offset") is not None:
            U = (U - np.array(summary["input_offset"])) / np.array(summary["input_width"])
        return U, y
    if cfg.dataset not in BUILTINS:
        raise UsageError("file datasets need --test <csv> for prediction")
    X = latin_hypercube(cfg.test_size, p, np.random.default_rng([cfg.seed, 2]))
    return X, simulator(cfg.dataset, cfg.denominator)(X)


def cmd_predict(cfg, test_path=None):
    out = cfg.out_dir
    summary, data, phis, h = _load_fit(out)
    X, actual = _test_set(cfg, summary, test_path)
    weights = None
    if cfg.weighting == "importance":
        tau = summary["temperatures"][-1]
        weights = np.exp(-(h - h.min()) * (1.0 - 1.0 / tau))
    mixture = MixtureEmulator(data, phis, weights, include_nugget=cfg.include_nugget)
    map_fact = factorize(data, phis[int(np.argmin(h))])
    mix_mu, mix_var = mixture.predict(X)
    map_mu, map_var = map_fact.predict(X, include_nugget=cfg.include_nugget)
    r_mix, _ = standardized_residuals(mix_mu, mix_var, actual)
    r_map, _ = standardized_residuals(map_mu, map_var, actual)
    p = data.p
    _write_csv(
        out / "predictions.csv",
        [f"x{i + 1}" for i in range(p)]
        + ["mixture_mean", "mixture_var", "map_mean", "map_var", "actual",
           "mixture_resid", "map_resid"],
        (
            list(X[i]) + [mix_mu[i], mix_var[i], map_mu[i], map_var[i], actual[i],
                          r_mix[i], r_map[i]]
            for i in range(len(X))
        ),
    )
    known = ~np.isnan(actual)
    if known.any():
        print(f"mixture RMSE: {rmse(mix_mu[known], actual[known]):.6g}")
        print(f"MAP RMSE:     {rmse(map_mu[known], actual[known]):.6g}")
    print(f"predict: {len(X)} points -> {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_diagnose(cfg):
    out = cfg.out_dir
    try:
        rows = _read_csv(out / "predictions.csv")
    except OSError as exc:
        raise UsageError(f"no predictions in {out}: {exc}") from None
    if not rows or any(r["actual"] == "" for r in rows):
        raise UsageError("diagnose needs predictions with known actual outputs")
    xcols = [c for c in rows[0] if c.startswith("x")]
    col = lambda name: np.array([float(r[name]) for r in rows])  # noqa: E731
    actual = col("actual")
    report = {"count": len(rows)}
    resid = {}
    for kind in ("mixture", "map"):
        r, within = standardized_residuals(col(f"{kind}_mean"), col(f"{kind}_var"), actual)
        resid[kind] = r
        valid = int(np.sum(~np.isnan(r)))
        report[f"{kind}_within"] = within
        report[f"{kind}_flagged"] = len(rows) - valid
        report[f"{kind}_fraction_within"] = within / valid if valid else math.nan
        report[f"{kind}_rmse"] = rmse(col(f"{kind}_mean"), actual)
    report["band"] = BAND
    _write_csv(
        out / "residuals.csv",
        xcols + ["actual", "mixture_resid", "mixture_within", "map_resid", "map_within"],
        (
            [float(rows[i][c]) for c in xcols]
            + [actual[i], resid["mixture"][i], _flag(resid["mixture"][i]),
               resid["map"][i], _flag(resid["map"][i])]
            for i in range(len(rows))
        ),
    )
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(
        f"diagnose: {report['count']} points; within +-{BAND}: "
        f"mixture {report['mixture_within']} ({report['mixture_fraction_within']:.1%}), "
        f"MAP {report['map_within']} ({report['map_fraction_within']:.1%})"
    )
    return EXIT_OK


def _flag(r):
    return "" if math.isnan(r) else str(int(abs(r) <= BAND))


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", type=int, help="samples per annealing level")
    common.add_argument("--mode", choices=["optimize", "sample"])
    common.add_argument("--out", help="artifact directory")
    common.add_argument("--dataset", help="branin | model2d | toy1d | file:<path>")
    common.add_argument("--prior", help="flat | lognormal:mu,sigma")
    common.add_argument("--denominator", choices=["verbatim", "cubic"])
    common.add_argument("--weighting", choices=["uniform", "importance"])
    common.add_argument("--workers", type=int, help="threads running chains concurrently")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gpaims", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="sample the correlation hyper-parameters")
    pr = sub.add_parser("predict", parents=[common], help="mixture and MAP predictions")
    pr.add_argument("--test", help="CSV with x1..xp[,y] columns (raw input units)")
    sub.add_parser("diagnose", parents=[common], help="standardized residual report")
    demo = sub.add_parser("demo", parents=[common], help="fit, predict and diagnose a builtin")
    demo.add_argument("name", choices=sorted(BUILTINS))
    return parser


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "demo":
            args.dataset = args.name
            if args.denominator is None and args.name == "model2d" and not args.config:
                args.denominator = "cubic"
        cfg = build_config(args)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, args.test)
        if args.command == "diagnose":
            return cmd_diagnose(cfg)
        code = cmd_fit(cfg)
        cmd_predict(cfg)
        cmd_diagnose(cfg)
        return code
    except (UsageError, InvalidArgumentError) as exc:
        print(f"gpaims: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``stpnad simulate | train | detect | report``.

Exit codes: 0 ok, 10 anomaly flagged, 2 configuration error, 3 refused to
overwrite existing output, 4 invalid input data.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .detector import (
    PipelineConfig,
    PipelineModel,
    batch_report,
    calibrate_threshold,
    fit_pipeline,
    score_online,
)
from .errors import ConfigError, DataError, ModelError
from .rbm import TrainConfig
from .timeseries_io import load_csv, write_csv
from .varsim import build_case_suite, generate, suite_from_dict

EXIT_OK = 0
EXIT_ANOMALY = 10
EXIT_CONFIG = 2
EXIT_EXISTS = 3
EXIT_INPUT = 4


class OutputExists(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Training run description, read from one JSON file.

    Relative paths are resolved against the directory holding the file.
    """

    train_csv: tuple[Path, ...]
    validation_csv: tuple[Path, ...] = ()
    threshold: float | None = None
    model: Path | None = None
    channels: tuple[str, ...] | None = None
    seed: int = 0
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    REQUIRED = ("train_csv",)
    _PIPELINE_KEYS = (
        "alphabet_size", "depth", "normalization", "threshold_policy", "threshold_quantile",
        "pattern_thresholds", "leave_window_out", "n_hidden", "batch_windows",
        "batch_step", "target_false_alarm", "safety_factor", "hist_bins",
    )

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path = Path(".")) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.REQUIRED) | {"validation_csv", "threshold", "model", "channels", "seed",
                                     "window", "rbm"} | set(cls._PIPELINE_KEYS)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        for key in cls.REQUIRED:
            if key not in d:
                raise ConfigError(f"missing config key: {key}")

        def paths(value, key):
            items = [value] if isinstance(value, str) else value
            if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
                raise ConfigError(f"{key} must be a path or a list of paths")
            return tuple(base_dir / x for x in items)

        train = paths(d["train_csv"], "train_csv")
        if not train:
            raise ConfigError("train_csv is empty")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        try:
            window = replace(PipelineConfig.window, **d.get("window", {}))
            rbm_kw = dict(d.get("rbm", {}))
            if "rng_seed" in rbm_kw:
                raise ConfigError("set the RBM seed with the top-level 'seed' key")
            train_cfg = TrainConfig(**rbm_kw, rng_seed=seed)
        except TypeError as exc:
            raise ConfigError(f"bad window or rbm section: {exc}") from None
        kw = {k: d[k] for k in cls._PIPELINE_KEYS if k in d}
        for key in ("alphabet_size", "pattern_thresholds"):
            if isinstance(kw.get(key), list):
                kw[key] = tuple(kw[key])
        try:
            pipeline = PipelineConfig(window=window, train=train_cfg, **kw)
            pipeline.validate()
        except TypeError as exc:
            raise ConfigError(f"bad pipeline setting: {exc}") from None
        threshold = d.get("threshold")
        if threshold is not None and not (isinstance(threshold, (int, float)) and threshold >= 0):
            raise ConfigError("threshold must be a non-negative number")
        return cls(
            train_csv=train,
            validation_csv=paths(d.get("validation_csv", []), "validation_csv"),
            threshold=None if threshold is None else float(threshold),
            model=None if d.get("model") is None else base_dir / d["model"],
            channels=None if d.get("channels") is None else tuple(d["channels"]),
            seed=seed,
            pipeline=pipeline,
        )

    def with_seed(self, seed: int) -> "RunConfig":
        train = replace(self.pipeline.train, rng_seed=seed)
        return replace(self, seed=seed, pipeline=replace(self.pipeline, train=train))


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _prepare_out_dir(out: Path, force: bool) -> None:
    if out.exists() and not out.is_dir():
        raise OutputExists(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise OutputExists(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n", encoding="utf-8")


# -- commands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.config is not None:
        try:
            suite = suite_from_dict(_read_json(Path(args.config)), **overrides)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (ConfigError, DataError)):
                raise
            raise ConfigError(f"{args.config}: malformed scenario ({exc!r})") from None
    else:
        suite = build_case_suite(args.case, **overrides)
    T = suite.T if args.samples is None else args.samples
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    files = []
    for pat in suite.patterns:
        frame = generate(pat.spec, T, burn_in=suite.burn_in)
        name = f"{pat.name}.csv"
        write_csv(frame, out / name)
        files.append({"name": pat.name, "label": pat.label, "file": name,
                      "seed": pat.spec.rng_seed})
    _write_json(out / "manifest.json", {
        "command": "simulate",
        "version": __version__,
        "samples": T,
        "scenario": suite.to_dict(),
        "files": files,
    })
    print(f"wrote {len(files)} series to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg_path = Path(args.config)
    run = RunConfig.from_dict(_read_json(cfg_path), cfg_path.parent)
    if args.seed is not None:
        run = run.with_seed(args.seed)
    model_path = Path(args.model) if args.model else run.model
    if model_path is None:
        raise ConfigError("missing config key: model (or pass --model)")
    if model_path.exists() and not args.force:
        raise OutputExists(f"model file {model_path} exists (use --force)")
    if not run.validation_csv and run.threshold is None:
        raise ConfigError("missing config key: validation_csv (or give an explicit threshold)")

    train = [load_csv(p, schema=run.channels) for p in run.train_csv]
    model = fit_pipeline(train, run.pipeline)
    if run.threshold is not None:
        threshold = run.threshold
    else:
        val = [load_csv(p, schema=model.channels) for p in run.validation_csv]
        threshold = calibrate_threshold(model, val)
    model = model.with_threshold(threshold)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    model.save(model_path)
    print(f"baseline free energy: mu={model.baseline.mu:.6g} sigma={model.baseline.sigma:.6g}")
    print(f"detection threshold (KLD): {threshold:.6g}")
    print(f"model written to {model_path}")
    return EXIT_OK


def _labels_near(test: Path) -> dict[str, str]:
    """Pattern labels from a simulate manifest sitting next to the test file, if any."""
    manifest = test.parent / "manifest.json"
    try:
        files = json.loads(manifest.read_text(encoding="utf-8"))["files"]
        return {f["file"]: f["label"] for f in files}
    except (OSError, ValueError, KeyError, TypeError):
        return {}


def cmd_detect(args) -> int:
    model = PipelineModel.load(args.model)
    if model.threshold is None:
        raise ConfigError("model has no detection threshold; retrain with validation data")
    tests = [Path(t) for t in args.test]
    stems = [t.stem for t in tests]
    if len(set(stems)) != len(stems):
        raise DataError("test files must have distinct names")
    frames = [load_csv(t) for t in tests]
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    entries = []
    for path, frame in zip(tests, frames):
        if args.mode == "online":
            report = score_online(model, frame)
        else:
            report = batch_report(model, frame)
        report.write(out / path.stem, bins=model.config.hist_bins)
        entries.append({
            "name": path.stem,
            "file": str(path),
            "label": _labels_near(path).get(path.name),
            "dropped_rows": frame.dropped_rows,
            "max_kld": max(k for _, k in report.kld_trace),
            "anomaly": report.any_anomaly,
        })
        flag = "ANOMALY" if report.any_anomaly else "nominal"
        print(f"{path.stem}: max KLD {entries[-1]['max_kld']:.6g} -> {flag}")
    _write_json(out / "manifest.json", {
        "command": "detect",
        "version": __version__,
        "mode": args.mode,
        "model": str(args.model),
        "threshold": model.threshold,
        "tests": entries,
    })
    return EXIT_ANOMALY if any(e["anomaly"] for e in entries) else EXIT_OK


REPORT_HEADER = ["pattern", "label", "n_batches", "kld", "mean_free_energy", "threshold", "anomaly"]


def _report_rows(run_dir: Path) -> list[list]:
    labels = {}
    manifest = run_dir / "manifest.json"
    if manifest.is_file():
        try:
            labels = {e["name"]: e.get("label") for e in json.loads(manifest.read_text())["tests"]}
        except (ValueError, KeyError, TypeError):
            raise DataError(f"{manifest}: malformed detect manifest") from None
    rows = []
    for summary_path in sorted(run_dir.glob("*/summary.json")):
        try:
            s = json.loads(summary_path.read_text(encoding="utf-8"))
            batches = s["batches"]
            worst = max(batches, key=lambda b: b["kld"])
            rows.append([summary_path.parent.name, labels.get(summary_path.parent.name) or "",
                         len(batches), worst["kld"], worst["mu"], s["threshold"],
                         int(s["any_anomaly"])])
        except (ValueError, KeyError, TypeError):
            raise DataError(f"{summary_path}: malformed summary") from None
    return rows


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise DataError(f"no such run directory: {run_dir}")
    rows = _report_rows(run_dir)
    if not rows:
        raise DataError(f"{run_dir} holds no detection summaries")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in rows:
        w.writerow([r[0], r[1], r[2], repr(r[3]), repr(r[4]), repr(r[5]), r[6]])
    (run_dir / "kld_table.csv").write_text(buf.getvalue(), encoding="utf-8")

    width = max(len("pattern"), *(len(r[0]) for r in rows))
    lines = [f"{'pattern':<{width}}  {'label':<9}  {'KLD':>12}  verdict"]
    for r in rows:
        lines.append(f"{r[0]:<{width}}  {r[1]:<9}  {r[3]:>12.4f}  {'ANOMALY' if r[6] else 'nominal'}")
    lines.append(f"threshold {rows[0][5]:.4f}")
    text = "\n".join(lines) + "\n"
    (run_dir / "kld_table.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stpnad",
        description="Spatiotemporal pattern network + RBM anomaly detection for multivariate series.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate VAR scenario data (one CSV per pattern)")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario JSON file")
    src.add_argument("--case", choices=["I", "II"], help="packaged case study")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--samples", type=int, help="samples per pattern (default: scenario T)")
    sim.add_argument("--seed", type=int, help="base seed (overrides the scenario)")
    sim.add_argument("--force", action="store_true", help="write into a non-empty directory")
    sim.set_defaults(func=cmd_simulate)

    tr = sub.add_parser("train", help="fit a pipeline model on nominal CSVs")
    tr.add_argument("--config", required=True, help="run config JSON")
    tr.add_argument("--model", help="model output path (overrides the config)")
    tr.add_argument("--seed", type=int, help="RBM seed (overrides the config)")
    tr.add_argument("--force", action="store_true", help="overwrite an existing model file")
    tr.set_defaults(func=cmd_train)

    de = sub.add_parser("detect", help="score test CSVs against a model")
    de.add_argument("--model", required=True, help="model file from 'train'")
    de.add_argument("--test", required=True, action="append", help="test CSV (repeatable)")
    de.add_argument("--out", required=True, help="run directory for reports")
    de.add_argument("--mode", choices=["batch", "online"], default="batch",
                    help="batch: one KLD per file; online: sliding batches (default: batch)")
    de.add_argument("--force", action="store_true", help="write into a non-empty directory")
    de.set_defaults(func=cmd_detect)

    rp = sub.add_parser("report", help="aggregate a detect run into a KLD table")
    rp.add_argument("run_dir", help="directory written by 'detect'")
    rp.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ModelError) as exc:
        print(f"stpnad: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputExists as exc:
        print(f"stpnad: {exc}", file=sys.stderr)
        return EXIT_EXISTS
    except DataError as exc:
        print(f"stpnad: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

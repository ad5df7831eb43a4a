"""Command line entry point: ``tvseg segment | synth | eval``.

Settings are resolved as defaults, then command-line flags, then a JSON
config file (``--config``), later sources winning. Failures print one JSON
object ``{"error": <category>, "message": ...}`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import pipeline
from .kde import BandwidthError
from .types import GAUSSIAN, LINREG, ConvergenceError, DimensionError, InvalidParameterError, SolverConfig

EXIT_CODES = {
    "usage_error": 2,
    "schema_error": 3,
    "data_error": 3,
    "empty_series": 3,
    "io_error": 4,
    "invalid_parameter": 5,
    "bandwidth_error": 6,
    "convergence_error": 7,
    "internal_error": 1,
}

SEGMENT_DEFAULTS = {
    "model": GAUSSIAN,
    "ar_order": 0,
    "lambda": "1.0",
    "rho": 1.0,
    "clusters": None,
    "bandwidth": None,
    "reweight": 0,
    "seed": 0,
    "standardize": True,
    "label_column": "label",
    "workers": 1,
    "max_admm_iters": SolverConfig.max_admm_iters,
}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def parse_lambda(spec) -> list[float]:
    """``"2.5"``, a comma list ``"1,10,100"``, or a geometric grid ``"geom:lo:hi:num"``."""
    if isinstance(spec, (int, float)):
        return [float(spec)]
    if isinstance(spec, list):
        return [float(v) for v in spec]
    s = str(spec).strip()
    try:
        if s.startswith("geom:"):
            lo, hi, num = s[5:].split(":")
            return [float(v) for v in np.geomspace(float(lo), float(hi), int(num))]
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError("usage_error", f"bad --lambda value {spec!r}: {exc}") from exc


def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError("io_error", f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError("schema_error", f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError("schema_error", f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def resolve(args, defaults: dict) -> dict:
    """Merge defaults, explicitly given flags and the config file."""
    out = dict(defaults)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    file_cfg = _load_config(getattr(args, "config", None))
    solver_keys = {f.name for f in fields(SolverConfig)}
    for key, val in file_cfg.items():
        if key not in defaults and key not in solver_keys and key not in ("input", "out"):
            raise CliError("schema_error", f"unknown config key {key!r}")
        out[key] = val
    return out


def _solver_config(opts: dict) -> SolverConfig:
    known = {f.name for f in fields(SolverConfig)}
    cfg = SolverConfig(rho=float(opts["rho"]), reweight_iters=int(opts["reweight"]),
                       rng_seed=int(opts["seed"]), workers=int(opts["workers"]),
                       max_admm_iters=int(opts["max_admm_iters"]))
    extra = {k: v for k, v in opts.items() if k in known and k not in
             ("rho", "reweight_iters", "rng_seed", "workers", "max_admm_iters", "lam")}
    return replace(cfg, **extra)


def cmd_segment(args) -> dict:
    opts = resolve(args, SEGMENT_DEFAULTS)
    inp = args.input or opts.get("input")
    out = args.out or opts.get("out")
    if not inp or not out:
        raise CliError("usage_error", "--input and --out are required")
    if opts["model"] not in (GAUSSIAN, LINREG):
        raise CliError("usage_error", f"unknown model {opts['model']!r}")
    lams = parse_lambda(opts["lambda"])
    cfg = _solver_config(opts)
    try:
        labeled, st = pipeline.load_csv(inp, ar_order=int(opts["ar_order"]),
                                        label_column=opts["label_column"],
                                        standardize_y=bool(opts["standardize"]))
    except OSError as exc:
        raise CliError("io_error", f"cannot read {inp}: {exc}") from exc
    results = pipeline.lambda_sweep(labeled, opts["model"], cfg, lams, int(opts["ar_order"]),
                                    opts["clusters"], opts["bandwidth"], st, workers=1)
    out = Path(out)
    summary = {"outputs": []}
    single = len(lams) == 1
    for lam, res in zip(lams, results):
        prefix = "" if single else f"lambda_{lam:.6g}_"
        doc, traj = pipeline.save_results(out, res, prefix)
        summary["outputs"].append({"lambda": lam, "result": str(doc), "trajectory": str(traj),
                                   "changepoints": list(res.segment.segmentation.changepoints),
                                   "converged": res.segment.diagnostics.converged,
                                   "accuracy": res.accuracy})
    if not single:
        table = pipeline.sweep_table(results, lams)
        (out / "sweep.json").write_text(json.dumps(table, indent=2) + "\n")
        with open(out / "sweep.csv", "w") as fh:
            fh.write("lambda,changepoints,accuracy,converged\n")
            for row in table:
                acc = "" if row["accuracy"] is None else repr(row["accuracy"])
                fh.write(f"{row['lambda']!r},{row['changepoints']},{acc},{row['converged']}\n")
    return summary


def cmd_synth(args) -> dict:
    try:
        spec_dict = json.loads(Path(args.spec).read_text())
    except OSError as exc:
        raise CliError("io_error", f"cannot read spec {args.spec}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError("schema_error", f"spec {args.spec} is not valid JSON: {exc}") from exc
    spec = pipeline.SyntheticSpec.from_dict(spec_dict)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    data = pipeline.synthesize(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    pipeline.write_csv(args.out, data.raw, data.labels)
    return {"out": args.out, "T": spec.T, "changepoints": list(data.changepoints)}


def _read_labels(path):
    p = Path(path)
    if p.suffix == ".json":
        doc = json.loads(p.read_text())
        if "cluster" not in doc:
            raise CliError("schema_error", f"{path} has no cluster labels (run segment with --clusters)")
        return np.array([str(v) for v in doc["cluster"]["frame_labels"]]), int(doc.get("ar_order", 0))
    import csv
    with open(p, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise CliError("empty_series", f"{path}: no data rows")
    for col in ("label", "mode"):
        if col in rows[0]:
            return np.array([r[col].strip() for r in rows]), 0
    raise CliError("schema_error", f"{path}: missing column 'label'")


def cmd_eval(args) -> dict:
    pred, dropped = _read_labels(args.pred)
    truth, _ = _read_labels(args.truth)
    if truth.size == pred.size + dropped:
        truth = truth[dropped:]
    if truth.size != pred.size:
        raise CliError("data_error", f"length mismatch: {pred.size} predicted vs {truth.size} true labels")
    return {"accuracy": pipeline.frame_accuracy(pred, truth), "frames": int(pred.size)}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvseg", description="Total-variation time-series segmentation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", help="segment a CSV series")
    s.add_argument("--input")
    s.add_argument("--out")
    s.add_argument("--model", choices=[GAUSSIAN, LINREG])
    s.add_argument("--ar-order", dest="ar_order", type=int, choices=[0, 1, 2])
    s.add_argument("--lambda", dest="lambda", help="value, comma list, or geom:lo:hi:num")
    s.add_argument("--rho", type=float)
    s.add_argument("--clusters", type=int)
    s.add_argument("--bandwidth", type=float)
    s.add_argument("--reweight", type=int, help="total passes; later passes reweight edges")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--max-admm-iters", dest="max_admm_iters", type=int)
    s.add_argument("--label-column", dest="label_column")
    s.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)
    s.add_argument("--config", help="JSON file; its keys override flags")
    s.set_defaults(func=cmd_segment)

    y = sub.add_parser("synth", help="generate a synthetic series from a JSON spec")
    y.add_argument("--spec", required=True)
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int)
    y.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="frame accuracy of predicted against true labels")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.set_defaults(func=cmd_eval)
    return ap


def _category(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if hasattr(exc, "category"):
        return exc.category
    if isinstance(exc, BandwidthError):
        return "bandwidth_error"
    if isinstance(exc, ConvergenceError):
        return "convergence_error"
    if isinstance(exc, (InvalidParameterError, DimensionError, ValueError)):
        return "invalid_parameter"
    if isinstance(exc, OSError):
        return "io_error"
    return "internal_error"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            print(json.dumps({"error": "usage_error", "message": "invalid arguments"}), file=sys.stderr)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except Exception as exc:  # every failure maps to a category
        cat = _category(exc)
        print(json.dumps({"error": cat, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES.get(cat, 1)
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())

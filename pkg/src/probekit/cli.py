"""Command line entry point.

Subcommands:
  sweep      run the full pipeline on a manifest, write report + CSVs
  collapse   recompute collapse statistics from an existing report
  synth      generate a synthetic layer family from a spec file
  validate   check a config file and report every problem
  plot-data  flatten a report into plot-ready CSVs

Exit codes: 0 success, 2 bad configuration or usage, 3 data or runtime
failure (unreadable files, strict mode tripping on warnings).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from probekit import __version__
from probekit.collapse import compute_collapse_report
from probekit.errors import ConfigError, ConvergenceError, FormatError
from probekit.pipeline import (
    emit_plot_data,
    load_report,
    run_pipeline,
    validate_config,
    validate_config_data,
    write_collapse_csv,
    write_report,
)
from probekit.sweep import SweepReport
from probekit.synth import LayerFamilySpec, write_layer_family

WORKERS_ENV = "PROBEKIT_WORKERS"


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError([f"{what}: expected comma-separated integers, got {text!r}"])


def _load_json(path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise ConfigError([f"{what}: cannot read: {e}"])
    except json.JSONDecodeError as e:
        raise ConfigError([f"{what}: not valid JSON: {e}"])


def _env_workers() -> int | None:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError([f"{WORKERS_ENV}: must be an integer, got {raw!r}"])


def cmd_sweep(args) -> int:
    doc = _load_json(args.config, "config") if args.config else {}

    overrides = {
        "manifest": args.manifest,
        "out_dir": args.out,
        "k": args.k,
        "c_param": args.c_param,
        "svm_tol": args.svm_tol,
        "svm_max_epochs": args.svm_max_epochs,
        "fraction": args.fraction,
        "d_small": args.d_small,
        "epsilon": args.epsilon,
        "workers": args.workers,
        "seed": args.seed,
        "pca_cap": args.pca_cap,
        "pca_subsample": args.pca_subsample,
        "reference_accuracy": args.reference_accuracy,
    }
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    if args.models is not None:
        doc["models"] = [m for m in args.models.split(",") if m]
    if args.grid is not None:
        doc["grid"] = _parse_int_list(args.grid, "grid")
    if args.no_full:
        doc["include_full"] = False
    if args.strict:
        doc["strict"] = True
    if args.skip_collapse:
        doc["skip_collapse"] = True
    if args.workers is None and "workers" not in doc:
        env = _env_workers()
        if env is not None:
            doc["workers"] = env

    config = validate_config_data(doc)
    status = run_pipeline(config)

    report = load_report(Path(config.out_dir) / "report.json")
    _print_summary(report)
    print(f"report: {Path(config.out_dir) / 'report.json'}")
    if status != 0:
        print("strict mode: warnings present, failing", file=sys.stderr)
    return status


def _print_summary(report: dict) -> None:
    for m in report["sweep"]["min_pcs"]:
        d_min = "-" if m["d_min"] is None else m["d_min"]
        var = m["variance_at_d_min"]
        var_text = "-" if var is None else f"{var:.3f}"
        print(
            f"{m['layer_id']:>12}  {m['model_kind']:>4}  "
            f"best={m['best_accuracy']:.4f}  d_min={d_min}  variance={var_text}"
        )
    collapse = report.get("collapse")
    if collapse is not None:
        print(f"collapse boundary: {collapse['boundary_note']}")
    for w in report.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)


def cmd_collapse(args) -> int:
    diags = []
    if args.d_small is not None and args.d_small < 1:
        diags.append("d_small: must be >= 1")
    if args.epsilon is not None and not 0 <= args.epsilon < 1:
        diags.append("epsilon: must be in [0, 1)")
    if args.reference_accuracy is not None and not 0 <= args.reference_accuracy <= 1:
        diags.append("reference_accuracy: must be in [0, 1]")
    if diags:
        raise ConfigError(diags)

    report_doc = load_report(args.report)
    sweep = SweepReport.from_dict(report_doc["sweep"])
    out_dir = Path(args.out) if args.out else Path(args.report).parent
    out_dir.mkdir(parents=True, exist_ok=True)

    collapse = compute_collapse_report(
        sweep,
        args.manifest,
        reference_accuracy=args.reference_accuracy,
        d_small=args.d_small if args.d_small is not None else 10,
        epsilon=args.epsilon if args.epsilon is not None else 0.02,
    )
    doc = collapse.to_dict()
    write_report(doc, out_dir / "collapse.json")
    write_collapse_csv({"collapse": doc}, out_dir / "collapse.csv")
    print(f"collapse boundary: {collapse.boundary_note}")
    for note in collapse.notes:
        print(f"note: {note}", file=sys.stderr)
    print(f"collapse report: {out_dir / 'collapse.json'}")
    return 0


def cmd_synth(args) -> int:
    try:
        spec = LayerFamilySpec.from_json(args.spec)
    except OSError as e:
        raise ConfigError([f"synth spec: cannot read: {e}"])
    except json.JSONDecodeError as e:
        raise ConfigError([f"synth spec: not valid JSON: {e}"])
    except (ValueError, TypeError) as e:
        raise ConfigError([f"synth spec: {e}"])
    manifest_path = write_layer_family(spec, args.out)
    print(f"manifest: {manifest_path}")
    return 0


def cmd_validate(args) -> int:
    validate_config(args.config)
    print("config ok")
    return 0


def cmd_plot_data(args) -> int:
    try:
        paths = emit_plot_data(args.report, args.out)
    except KeyError as e:
        raise ValueError(f"report is missing field {e}")
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probekit",
        description="Probe layerwise activations: PCA sweeps, surrogate "
        "classifiers, and collapse detection.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("sweep", help="run the sweep pipeline on a manifest")
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--manifest", help="activation manifest JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--models", help="comma-separated subset of knn,ncc,svm")
    p.add_argument("--grid", help="comma-separated projection dimensions")
    p.add_argument("--k", type=int, help="neighbors for the knn probe")
    p.add_argument("--c-param", dest="c_param", type=float, help="svm penalty C")
    p.add_argument("--svm-tol", dest="svm_tol", type=float, help="svm convergence tolerance")
    p.add_argument("--svm-max-epochs", dest="svm_max_epochs", type=int)
    p.add_argument("--fraction", type=float, help="threshold fraction for d_min")
    p.add_argument("--d-small", dest="d_small", type=int, help="dimension budget for collapse")
    p.add_argument("--epsilon", type=float, help="accuracy slack for collapse")
    p.add_argument("--workers", type=int, help=f"worker threads (or ${WORKERS_ENV})")
    p.add_argument("--seed", type=int)
    p.add_argument("--pca-cap", dest="pca_cap", type=int, help="max PCA components per layer")
    p.add_argument("--pca-subsample", dest="pca_subsample", type=int,
                   help="fit PCA on this many train rows")
    p.add_argument("--reference-accuracy", dest="reference_accuracy", type=float)
    p.add_argument("--no-full", dest="no_full", action="store_true",
                   help="skip the full-dimension baseline cells")
    p.add_argument("--strict", action="store_true",
                   help="exit 3 if the run produced warnings")
    p.add_argument("--skip-collapse", dest="skip_collapse", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("collapse", help="recompute collapse stats from a report")
    p.add_argument("--report", required=True, help="report.json from a sweep run")
    p.add_argument("--manifest", required=True, help="activation manifest JSON")
    p.add_argument("--out", help="output directory (default: report's directory)")
    p.add_argument("--d-small", dest="d_small", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--reference-accuracy", dest="reference_accuracy", type=float)
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("synth", help="generate a synthetic layer family")
    p.add_argument("--spec", required=True, help="family spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="validate a config file")
    p.add_argument("config", help="config JSON to check")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plot-data", help="write plot-ready CSVs from a report")
    p.add_argument("--report", required=True, help="report.json from a sweep run")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plot_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as e:
        for diag in e.diagnostics:
            print(f"config error: {diag}", file=sys.stderr)
        return 2
    except (FormatError, ConvergenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

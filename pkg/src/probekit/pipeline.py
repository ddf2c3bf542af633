"""End-to-end run: validated config in, report files out.

A run writes four files into out_dir: report.json (everything the run
learned, plus the config echo and a timestamp), curves.csv, min_pcs.csv
and collapse.csv. Apart from the generated_at timestamp the outputs are a
pure function of config and input data, reruns produce byte-identical
files. JSON is dumped with sorted keys; CSV numbers are written with
repr so they round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

from probekit.activation_io import load_manifest
from probekit.collapse import CollapseReport, compute_collapse_report
from probekit.errors import ConfigError
from probekit.sweep import MODEL_KINDS, SweepGrid, SweepReport, run_sweep

REPORT_VERSION = 1


@dataclass
class RunConfig:
    manifest: str
    out_dir: str
    models: list[str] = field(default_factory=lambda: list(MODEL_KINDS))
    grid: list[int] | None = None
    k: int = 10
    c_param: float = 1.0
    svm_tol: float = 1e-4
    svm_max_epochs: int = 1000
    fraction: float = 0.9
    d_small: int = 10
    epsilon: float = 0.02
    include_full: bool = True
    workers: int = 1
    seed: int = 0
    pca_cap: int = 4096
    pca_subsample: int | None = None
    reference_accuracy: float | None = None
    strict: bool = False
    skip_collapse: bool = False

    def to_dict(self) -> dict:
        doc = asdict(self)
        # Path objects are not JSON values
        doc["manifest"] = str(doc["manifest"])
        doc["out_dir"] = str(doc["out_dir"])
        return doc


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return _is_int(v) or isinstance(v, float)


def validate_config_data(doc: dict) -> RunConfig:
    """Build a RunConfig from a plain dict, collecting every problem into
    one ConfigError instead of stopping at the first."""
    diags = []
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])
    known = {f.name for f in fields(RunConfig)}
    for key in sorted(set(doc) - known):
        diags.append(f"unknown config field {key!r}")
    doc = {k: v for k, v in doc.items() if k in known}

    manifest = doc.get("manifest")
    if not isinstance(manifest, str) or not manifest:
        diags.append("manifest: required, must be a path string")
    elif not Path(manifest).is_file():
        diags.append(f"manifest: file not found: {manifest}")
    else:
        try:
            loaded = load_manifest(manifest)
            for entry in loaded.layers:
                for p in (entry.train_path, entry.test_path):
                    if not Path(p).is_file():
                        diags.append(f"manifest: missing activation file: {p}")
        except (ValueError, KeyError, TypeError, OSError) as e:
            diags.append(f"manifest: unreadable: {e}")

    out_dir = doc.get("out_dir")
    if not isinstance(out_dir, str) or not out_dir:
        diags.append("out_dir: required, must be a path string")

    models = doc.get("models", list(MODEL_KINDS))
    if not isinstance(models, list) or not models:
        diags.append("models: must be a non-empty list")
    else:
        for m in models:
            if m not in MODEL_KINDS:
                diags.append(f"models: unknown model kind {m!r}")
        if len(set(models)) != len(models):
            diags.append("models: duplicate entries")

    grid = doc.get("grid")
    if grid is not None:
        if not isinstance(grid, list) or not all(_is_int(d) for d in grid):
            diags.append("grid: must be a list of integers")
        else:
            try:
                SweepGrid(dims=grid).validate()
            except ValueError as e:
                diags.append(f"grid: {e}")

    def check(name, default, ok, requirement):
        v = doc.get(name, default)
        if not ok(v):
            diags.append(f"{name}: {requirement}")

    check("k", 10, lambda v: _is_int(v) and v >= 1, "must be an integer >= 1")
    check("c_param", 1.0, lambda v: _is_num(v) and v > 0, "must be a number > 0")
    check("svm_tol", 1e-4, lambda v: _is_num(v) and v > 0, "must be a number > 0")
    check("svm_max_epochs", 1000, lambda v: _is_int(v) and v >= 1, "must be an integer >= 1")
    check("fraction", 0.9, lambda v: _is_num(v) and 0 < v <= 1, "must be in (0, 1]")
    check("d_small", 10, lambda v: _is_int(v) and v >= 1, "must be an integer >= 1")
    check("epsilon", 0.02, lambda v: _is_num(v) and 0 <= v < 1, "must be in [0, 1)")
    check("include_full", True, lambda v: isinstance(v, bool), "must be a boolean")
    check("workers", 1, lambda v: _is_int(v) and v >= 1, "must be an integer >= 1")
    check("seed", 0, lambda v: _is_int(v) and v >= 0, "must be an integer >= 0")
    check("pca_cap", 4096, lambda v: _is_int(v) and v >= 1, "must be an integer >= 1")
    check(
        "pca_subsample",
        None,
        lambda v: v is None or (_is_int(v) and v >= 2),
        "must be an integer >= 2 or null",
    )
    check(
        "reference_accuracy",
        None,
        lambda v: v is None or (_is_num(v) and 0 <= v <= 1),
        "must be in [0, 1] or null",
    )
    check("strict", False, lambda v: isinstance(v, bool), "must be a boolean")
    check("skip_collapse", False, lambda v: isinstance(v, bool), "must be a boolean")

    if diags:
        raise ConfigError(diags)

    kwargs = {f.name: doc[f.name] for f in fields(RunConfig) if f.name in doc}
    cfg = RunConfig(**kwargs)
    if cfg.c_param is not None:
        cfg.c_param = float(cfg.c_param)
    cfg.svm_tol = float(cfg.svm_tol)
    cfg.fraction = float(cfg.fraction)
    cfg.epsilon = float(cfg.epsilon)
    if cfg.reference_accuracy is not None:
        cfg.reference_accuracy = float(cfg.reference_accuracy)
    return cfg


def validate_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError([f"cannot read config: {e}"])
    except json.JSONDecodeError as e:
        raise ConfigError([f"config is not valid JSON: {e}"])
    return validate_config_data(doc)


def build_report_doc(config: RunConfig, sweep: SweepReport, collapse: CollapseReport | None) -> dict:
    warnings = list(sweep.warnings)
    if collapse is not None:
        warnings += collapse.notes
    return {
        "version": REPORT_VERSION,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "config": config.to_dict(),
        "sweep": sweep.to_dict(),
        "collapse": None if collapse is None else collapse.to_dict(),
        "warnings": warnings,
    }


def write_report(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(doc, indent=2, sort_keys=True))
        f.write("\n")


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_curves_csv(doc: dict, path) -> None:
    var_by_layer = {
        l["layer_id"]: dict(zip(l["grid"], l["cumulative_variance"]))
        for l in doc["sweep"]["layers"]
    }
    rows = []
    for c in doc["sweep"]["curves"]:
        var_map = var_by_layer.get(c["layer_id"], {})
        for d, a in zip(c["dims"], c["accuracies"]):
            rows.append([c["layer_id"], c["model_kind"], d, a, var_map.get(d)])
        if c.get("full_dim_accuracy") is not None:
            rows.append([c["layer_id"], c["model_kind"], "full", c["full_dim_accuracy"], None])
    _write_csv(path, ["layer_id", "model", "d", "accuracy", "cumulative_variance"], rows)


def write_min_pcs_csv(doc: dict, path) -> None:
    rows = [
        [
            m["layer_id"],
            m["model_kind"],
            m["best_accuracy"],
            m["threshold"],
            m["d_min"],
            m["variance_at_d_min"],
        ]
        for m in doc["sweep"]["min_pcs"]
    ]
    _write_csv(
        path,
        ["layer_id", "model", "best_accuracy", "threshold", "d_min", "variance_at_d_min"],
        rows,
    )


def write_collapse_csv(doc: dict, path) -> None:
    collapse = doc.get("collapse")
    rows = []
    if collapse is not None:
        for l in collapse["layers"]:
            acc = l["accuracy_at_d_small"]
            rows.append(
                [
                    l["layer_id"],
                    l["nc1"],
                    l["nc4"],
                    acc.get("knn"),
                    acc.get("ncc"),
                    acc.get("svm"),
                ]
            )
    _write_csv(
        path,
        ["layer_id", "nc1", "nc4", "knn_at_d_small", "ncc_at_d_small", "svm_at_d_small"],
        rows,
    )


def emit_plot_data(report, out_dir) -> list[Path]:
    """Flatten a report into plot-ready CSVs (long format, one observation
    per row). Accepts a report dict or a report.json path."""
    if not isinstance(report, dict):
        report = load_report(report)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = {l["layer_id"]: i for i, l in enumerate(report["sweep"]["layers"])}

    acc_rows = []
    for c in report["sweep"]["curves"]:
        idx = order.get(c["layer_id"], -1)
        for d, a in zip(c["dims"], c["accuracies"]):
            acc_rows.append([idx, c["layer_id"], c["model_kind"], d, a, 0])
        if c.get("full_dim_accuracy") is not None:
            layer_dim = report["sweep"]["layers"][idx]["dim"] if idx >= 0 else None
            acc_rows.append(
                [idx, c["layer_id"], c["model_kind"], layer_dim, c["full_dim_accuracy"], 1]
            )
    acc_path = out_dir / "plot_accuracy_by_dim.csv"
    _write_csv(acc_path, ["layer_index", "layer_id", "model", "d", "accuracy", "is_full"], acc_rows)

    min_rows = [
        [
            order.get(m["layer_id"], -1),
            m["layer_id"],
            m["model_kind"],
            m["d_min"],
            m["variance_at_d_min"],
            m["best_accuracy"],
        ]
        for m in report["sweep"]["min_pcs"]
    ]
    min_path = out_dir / "plot_min_pcs_by_layer.csv"
    _write_csv(
        min_path,
        ["layer_index", "layer_id", "model", "d_min", "variance_at_d_min", "best_accuracy"],
        min_rows,
    )

    var_rows = []
    for l in report["sweep"]["layers"]:
        for d, v in zip(l["grid"], l["cumulative_variance"]):
            var_rows.append([order[l["layer_id"]], l["layer_id"], d, v])
    var_path = out_dir / "plot_variance_by_layer.csv"
    _write_csv(var_path, ["layer_index", "layer_id", "d", "cumulative_variance"], var_rows)

    paths = [acc_path, min_path, var_path]
    if report.get("collapse"):
        nc_rows = [
            [order.get(l["layer_id"], -1), l["layer_id"], l["nc1"], l["nc4"]]
            for l in report["collapse"]["layers"]
        ]
        nc_path = out_dir / "plot_collapse_by_layer.csv"
        _write_csv(nc_path, ["layer_index", "layer_id", "nc1", "nc4"], nc_rows)
        paths.append(nc_path)
    return paths


def run_pipeline(config: RunConfig) -> int:
    """Execute a validated config. Returns a process exit status: 0 on
    success, 3 when strict mode saw warnings. Writes report.json plus the
    three summary CSVs into config.out_dir."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(config.manifest)

    sweep = run_sweep(
        manifest,
        models=config.models,
        grid=config.grid,
        seed=config.seed,
        k=config.k,
        c_param=config.c_param,
        svm_tol=config.svm_tol,
        svm_max_epochs=config.svm_max_epochs,
        fraction=config.fraction,
        include_full=config.include_full,
        workers=config.workers,
        out_dir=out_dir,
        pca_cap=config.pca_cap,
        pca_subsample=config.pca_subsample,
    )

    collapse = None
    if not config.skip_collapse:
        collapse = compute_collapse_report(
            sweep,
            manifest,
            reference_accuracy=config.reference_accuracy,
            d_small=config.d_small,
            epsilon=config.epsilon,
        )

    doc = build_report_doc(config, sweep, collapse)
    write_report(doc, out_dir / "report.json")
    write_curves_csv(doc, out_dir / "curves.csv")
    write_min_pcs_csv(doc, out_dir / "min_pcs.csv")
    write_collapse_csv(doc, out_dir / "collapse.csv")

    if config.strict and doc["warnings"]:
        return 3
    return 0

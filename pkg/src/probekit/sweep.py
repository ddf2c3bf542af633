"""PCA dimensionality sweep across layers and probe models.

For each layer in a manifest: standardize on train statistics, fit one PCA
at the largest grid dimension, then evaluate each requested probe model on
each grid dimension's projection (plus the full standardized features when
include_full is set). Fitting PCA once per layer is not an approximation,
truncated projections of one model are exactly the smaller-k models.

Completed cells append to an NDJSON journal so interrupted runs resume
without recomputation; fitted PCA models persist next to the journal for
the same reason. Cells are independent, so a worker pool may evaluate them
in any order without changing the resulting report.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from probekit.activation_io import Manifest, load_manifest, read_activation_set
from probekit.errors import FormatError
from probekit.pca import (
    PcaModel,
    explained_variance_cumulative,
    fit_pca,
    load_pca,
    project,
    save_pca,
)
from probekit.preprocess import apply_standardizer, fit_standardizer
from probekit.probes import (
    evaluate_accuracy,
    fit_knn,
    fit_linear_svm,
    fit_ncc,
    predict_knn,
    predict_ncc,
    predict_svm,
)

MODEL_KINDS = ("knn", "ncc", "svm")

GRID_BASE = tuple(range(1, 21)) + (
    30, 40, 50, 100, 150, 200, 250, 300, 400, 500,
    750, 1000, 1250, 1500, 1750, 2000,
)


def default_grid(layer_dim: int) -> list[int]:
    """Dense at low dimension, sparse at high, truncated to the layer width
    (which is always included as the last point)."""
    if layer_dim < 1:
        raise ValueError("layer_dim must be >= 1")
    dims = list(GRID_BASE)
    nxt = 3000
    while nxt <= layer_dim:
        dims.append(nxt)
        nxt += 1000
    dims = [d for d in dims if d <= layer_dim]
    if not dims or dims[-1] != layer_dim:
        dims.append(layer_dim)
    return dims


@dataclass
class SweepGrid:
    dims: list[int]

    def validate(self):
        if not self.dims:
            raise ValueError("grid is empty")
        if any(d < 1 for d in self.dims):
            raise ValueError("grid dimensions must be >= 1")
        if any(b <= a for a, b in zip(self.dims, self.dims[1:])):
            raise ValueError("grid dimensions must be strictly increasing")


@dataclass
class AccuracyCurve:
    """Accuracy as a function of retained PCA dimensions, one per
    (layer, model) pair. full_dim_accuracy is the no-PCA baseline."""

    layer_id: str
    model_kind: str
    dims: list[int]
    accuracies: list[float]
    full_dim_accuracy: float | None = None

    def accuracy_at(self, d: int) -> float:
        i = self.dims.index(d)
        return self.accuracies[i]

    def best_accuracy(self) -> float:
        best = max(self.accuracies)
        if self.full_dim_accuracy is not None:
            best = max(best, self.full_dim_accuracy)
        return best

    def best_at_most(self, d_small: int) -> float:
        vals = [a for d, a in zip(self.dims, self.accuracies) if d <= d_small]
        if not vals:
            raise ValueError(
                f"curve for {self.layer_id}/{self.model_kind} has no grid point <= {d_small}"
            )
        return max(vals)

    def to_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "model_kind": self.model_kind,
            "dims": list(self.dims),
            "accuracies": [float(a) for a in self.accuracies],
            "full_dim_accuracy": self.full_dim_accuracy,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AccuracyCurve":
        return cls(
            layer_id=doc["layer_id"],
            model_kind=doc["model_kind"],
            dims=[int(d) for d in doc["dims"]],
            accuracies=[float(a) for a in doc["accuracies"]],
            full_dim_accuracy=doc.get("full_dim_accuracy"),
        )


@dataclass
class MinPcStat:
    """Smallest grid dimension whose accuracy reaches fraction * best,
    where best includes the full-dimension baseline."""

    layer_id: str
    model_kind: str
    best_accuracy: float
    threshold: float
    d_min: int | None
    variance_at_d_min: float | None

    def to_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "model_kind": self.model_kind,
            "best_accuracy": self.best_accuracy,
            "threshold": self.threshold,
            "d_min": self.d_min,
            "variance_at_d_min": self.variance_at_d_min,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MinPcStat":
        return cls(
            layer_id=doc["layer_id"],
            model_kind=doc["model_kind"],
            best_accuracy=float(doc["best_accuracy"]),
            threshold=float(doc["threshold"]),
            d_min=doc.get("d_min"),
            variance_at_d_min=doc.get("variance_at_d_min"),
        )


@dataclass
class LayerSummary:
    layer_id: str
    dim: int
    n_train: int
    n_test: int
    grid: list[int]
    k_max: int
    cumulative_variance: list[float]

    def to_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "dim": self.dim,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "grid": list(self.grid),
            "k_max": self.k_max,
            "cumulative_variance": [float(v) for v in self.cumulative_variance],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LayerSummary":
        return cls(
            layer_id=doc["layer_id"],
            dim=int(doc["dim"]),
            n_train=int(doc["n_train"]),
            n_test=int(doc["n_test"]),
            grid=[int(d) for d in doc["grid"]],
            k_max=int(doc["k_max"]),
            cumulative_variance=[float(v) for v in doc["cumulative_variance"]],
        )


@dataclass
class SweepReport:
    seed: int
    models: list[str]
    fraction: float
    layers: list[LayerSummary]
    curves: list[AccuracyCurve]
    min_pcs: list[MinPcStat]
    params: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def curve(self, layer_id: str, model_kind: str) -> AccuracyCurve:
        for c in self.curves:
            if c.layer_id == layer_id and c.model_kind == model_kind:
                return c
        raise KeyError(f"no curve for ({layer_id}, {model_kind})")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "models": list(self.models),
            "fraction": self.fraction,
            "layers": [l.to_dict() for l in self.layers],
            "curves": [c.to_dict() for c in self.curves],
            "min_pcs": [m.to_dict() for m in self.min_pcs],
            "params": dict(self.params),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepReport":
        return cls(
            seed=int(doc["seed"]),
            models=list(doc["models"]),
            fraction=float(doc["fraction"]),
            layers=[LayerSummary.from_dict(l) for l in doc["layers"]],
            curves=[AccuracyCurve.from_dict(c) for c in doc["curves"]],
            min_pcs=[MinPcStat.from_dict(m) for m in doc["min_pcs"]],
            params=dict(doc.get("params", {})),
            warnings=list(doc.get("warnings", [])),
        )


def min_pcs_for_fraction(curve: AccuracyCurve, fraction: float = 0.9, variance=None) -> MinPcStat:
    """variance maps a grid dimension to cumulative explained variance;
    accepts a PcaModel, a dict, a callable, or None."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    best = curve.best_accuracy()
    threshold = fraction * best
    d_min = None
    for d, a in zip(curve.dims, curve.accuracies):
        if a >= threshold:
            d_min = d
            break
    var = None
    if d_min is not None and variance is not None:
        if isinstance(variance, PcaModel):
            var = explained_variance_cumulative(variance, min(d_min, variance.k_max))
        elif isinstance(variance, dict):
            var = variance.get(d_min)
        else:
            var = variance(d_min)
        if var is not None:
            var = float(var)
    return MinPcStat(
        layer_id=curve.layer_id,
        model_kind=curve.model_kind,
        best_accuracy=float(best),
        threshold=float(threshold),
        d_min=d_min,
        variance_at_d_min=var,
    )


def _journal_key(layer_id, model, d):
    return (layer_id, model, -1 if d is None else int(d))


def _load_journal(path: Path, seed: int, warnings: list):
    """Returns (accuracy, warning) per completed cell. Rows written under a
    different seed are ignored; unreadable rows (a crash mid-append) are
    skipped with a note."""
    done = {}
    if not path.exists():
        return done
    foreign = 0
    corrupt = 0
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                key = _journal_key(row["layer_id"], row["model"], row.get("d"))
                if int(row["seed"]) != seed:
                    foreign += 1
                    continue
                done[key] = (float(row["accuracy"]), row.get("warning"))
            except (ValueError, KeyError, TypeError):
                corrupt += 1
    if foreign:
        warnings.append(f"journal: ignored {foreign} rows from a different seed")
    if corrupt:
        warnings.append(f"journal: skipped {corrupt} unreadable rows")
    return done


def _safe_name(layer_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in layer_id)


def _cell_seed(seed: int, layer_index: int, d) -> int:
    entropy = [seed, layer_index, 0xFFFFFFFF if d is None else int(d)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def run_sweep(
    manifest,
    models=MODEL_KINDS,
    grid=None,
    seed: int = 0,
    *,
    k: int = 10,
    c_param: float = 1.0,
    svm_tol: float = 1e-4,
    svm_max_epochs: int = 1000,
    fraction: float = 0.9,
    include_full: bool = True,
    workers: int = 1,
    out_dir=None,
    pca_cap: int = 4096,
    pca_subsample: int | None = None,
    epsilon_std: float = 1e-8,
) -> SweepReport:
    """Evaluate every (layer, model, dimension) cell and summarize.

    manifest: Manifest object or path to a manifest JSON file.
    grid: explicit list of dimensions for every layer; None picks the
    default grid per layer width. Explicit grids override pca_cap but must
    stay within what PCA can produce, min(n_train - 1, layer width).
    out_dir: where the journal and PCA models go; None disables resume.
    """
    if isinstance(manifest, (str, Path)):
        manifest = load_manifest(manifest)
    if not isinstance(manifest, Manifest):
        raise TypeError("manifest must be a Manifest or a path")
    models = list(models)
    if not models:
        raise ValueError("no models requested")
    for m in models:
        if m not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {m!r}, expected one of {MODEL_KINDS}")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if pca_cap < 1:
        raise ValueError("pca_cap must be >= 1")
    if pca_subsample is not None and pca_subsample < 2:
        raise ValueError("pca_subsample must be >= 2")
    if grid is not None:
        explicit = SweepGrid(dims=[int(d) for d in grid])
        explicit.validate()
    else:
        explicit = None

    warnings = []
    journal_path = None
    pca_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        journal_path = out_dir / "journal.ndjson"
        pca_dir = out_dir / "pca"
        pca_dir.mkdir(exist_ok=True)
    done = _load_journal(journal_path, seed, warnings) if journal_path else {}

    lock = threading.Lock()
    journal_file = open(journal_path, "a", encoding="utf-8") if journal_path else None

    def record(layer_id, model, d, accuracy, wall_ms, warning):
        row = {
            "layer_id": layer_id,
            "model": model,
            "d": d,
            "accuracy": accuracy,
            "wall_ms": wall_ms,
            "seed": seed,
            "warning": warning,
        }
        with lock:
            done[_journal_key(layer_id, model, d)] = (accuracy, warning)
            if journal_file is not None:
                journal_file.write(json.dumps(row) + "\n")
                journal_file.flush()

    layer_summaries = []
    curves = []
    expected_classes = None
    try:
        for layer_index, entry in enumerate(manifest.layers):
            train = read_activation_set(entry.train_path)
            test = read_activation_set(entry.test_path)
            lid = entry.layer_id
            if train.n_features != test.n_features or train.n_features != entry.dim:
                raise ValueError(
                    f"layer {lid}: width mismatch between manifest ({entry.dim}), "
                    f"train ({train.n_features}), test ({test.n_features})"
                )
            if train.n_classes != test.n_classes:
                raise ValueError(f"layer {lid}: train/test n_classes differ")
            if expected_classes is None:
                expected_classes = train.n_classes
            elif train.n_classes != expected_classes:
                raise ValueError(f"layer {lid}: n_classes differs from earlier layers")

            p = train.n_features
            n_train = train.n_samples
            rank_limit = min(n_train - 1, p)
            if explicit is not None:
                dims = list(explicit.dims)
                if dims[-1] > rank_limit:
                    raise ValueError(
                        f"layer {lid}: grid dimension {dims[-1]} exceeds what PCA "
                        f"can produce here (min(n_train - 1, width) = {rank_limit})"
                    )
            else:
                cap = min(rank_limit, pca_cap)
                full_grid = default_grid(p)
                dims = [d for d in full_grid if d <= cap]
                if len(dims) < len(full_grid):
                    warnings.append(
                        f"layer {lid}: grid clipped to {dims[-1]} "
                        f"(PCA limit min(n_train - 1, width, pca_cap) = {cap})"
                    )

            std = fit_standardizer(train, epsilon=epsilon_std)
            x_train = apply_standardizer(std, train)
            x_test = apply_standardizer(std, test)

            k_max = dims[-1]
            pca_path = pca_dir / f"{layer_index:02d}_{_safe_name(lid)}.pcm" if pca_dir else None
            pca = None
            if pca_path is not None and pca_path.exists():
                try:
                    cached = load_pca(pca_path)
                except FormatError:
                    warnings.append(f"layer {lid}: unreadable PCA cache, refitting")
                else:
                    if cached.k_max >= k_max and cached.n_features == p:
                        pca = cached
            if pca is None:
                fit_rows = x_train
                if pca_subsample is not None and pca_subsample < n_train:
                    idx_rng = np.random.default_rng(
                        np.random.SeedSequence([seed, layer_index, 0x9CA])
                    )
                    idx = idx_rng.choice(n_train, size=pca_subsample, replace=False)
                    idx.sort()
                    fit_rows = x_train[idx]
                    k_fit_limit = min(fit_rows.shape[0] - 1, p)
                    if k_max > k_fit_limit:
                        raise ValueError(
                            f"layer {lid}: pca_subsample={pca_subsample} cannot "
                            f"support {k_max} components"
                        )
                pca = fit_pca(fit_rows, k_max)
                if pca_path is not None:
                    save_pca(pca, pca_path)

            proj_train = project(pca, x_train, k_max)
            proj_test = project(pca, x_test, k_max)
            cum_var = [explained_variance_cumulative(pca, d) for d in dims]
            layer_summaries.append(
                LayerSummary(
                    layer_id=lid,
                    dim=p,
                    n_train=n_train,
                    n_test=test.n_samples,
                    grid=dims,
                    k_max=k_max,
                    cumulative_variance=cum_var,
                )
            )

            cells = []
            for model in models:
                for d in dims:
                    cells.append((model, d))
                if include_full:
                    cells.append((model, None))
            pending = [c for c in cells if _journal_key(lid, c[0], c[1]) not in done]

            def run_cell(cell, lid=lid, layer_index=layer_index):
                model, d = cell
                if d is None:
                    ztr, zte = x_train, x_test
                else:
                    ztr, zte = proj_train[:, :d], proj_test[:, :d]
                t0 = time.perf_counter()
                warning = None
                if model == "knn":
                    fitted = fit_knn(ztr, train.labels, k=k)
                    pred = predict_knn(fitted, zte)
                elif model == "ncc":
                    fitted = fit_ncc(ztr, train.labels)
                    pred = predict_ncc(fitted, zte)
                else:
                    fitted = fit_linear_svm(
                        ztr,
                        train.labels,
                        c_param=c_param,
                        tol=svm_tol,
                        max_epochs=svm_max_epochs,
                        seed=_cell_seed(seed, layer_index, d),
                        strict=False,
                    )
                    if not fitted.converged.all():
                        worst = float(fitted.duality_gap.max())
                        warning = (
                            f"svm did not converge: layer {lid} "
                            f"d={'full' if d is None else d} "
                            f"worst relative gap {worst:.2e}"
                        )
                    pred = predict_svm(fitted, zte)
                accuracy = evaluate_accuracy(pred, test.labels)
                wall_ms = 1e3 * (time.perf_counter() - t0)
                record(lid, model, d, accuracy, wall_ms, warning)

            if workers > 1 and len(pending) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    list(pool.map(run_cell, pending))
            else:
                for cell in pending:
                    run_cell(cell)

            # Cell warnings surface here, in grid order, so the report does
            # not depend on worker scheduling or on journal replay.
            for model in models:
                grid_cells = [(d,) for d in dims] + ([(None,)] if include_full else [])
                for (d,) in grid_cells:
                    w = done[_journal_key(lid, model, d)][1]
                    if w:
                        warnings.append(w)
                curves.append(
                    AccuracyCurve(
                        layer_id=lid,
                        model_kind=model,
                        dims=list(dims),
                        accuracies=[done[_journal_key(lid, model, d)][0] for d in dims],
                        full_dim_accuracy=(
                            done[_journal_key(lid, model, None)][0] if include_full else None
                        ),
                    )
                )
    finally:
        if journal_file is not None:
            journal_file.close()

    min_pcs = []
    summaries = {s.layer_id: s for s in layer_summaries}
    for curve in curves:
        var_map = dict(
            zip(summaries[curve.layer_id].grid, summaries[curve.layer_id].cumulative_variance)
        )
        min_pcs.append(min_pcs_for_fraction(curve, fraction, var_map))

    return SweepReport(
        seed=seed,
        models=models,
        fraction=fraction,
        layers=layer_summaries,
        curves=curves,
        min_pcs=min_pcs,
        params={
            "k": k,
            "c_param": c_param,
            "svm_tol": svm_tol,
            "svm_max_epochs": svm_max_epochs,
            "include_full": include_full,
            "pca_cap": pca_cap,
            "pca_subsample": pca_subsample,
            "grid": None if explicit is None else list(explicit.dims),
        },
        warnings=warnings,
    )

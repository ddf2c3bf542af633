"""Neural-collapse statistics and collapse-boundary detection.

nc1_ratio measures within-class scatter against between-class scatter
(trace ratio); values near zero mean samples sit on their class means.
nc4_agreement measures how often a nearest-class-mean rule reproduces the
network's own predictions. Both are computed on raw activations, before
standardization or PCA, because those transforms rescale the geometry the
statistics are about.

The boundary detector asks a sharper question of the sweep output: from
which layer onward do a handful of principal components carry essentially
all of the reference accuracy, for every probe model at once?
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from probekit.activation_io import Manifest, load_manifest, read_activation_set
from probekit.probes import fit_ncc, predict_ncc
from probekit.sweep import MODEL_KINDS, SweepReport


def nc1_ratio(x, labels) -> float:
    """trace(within-class covariance) / trace(between-class covariance).

    Computed from sums of squared deviations, never materializing a p x p
    matrix, so wide layers are fine.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2:
        raise ValueError("x must be 2-d")
    if labels.shape != (x.shape[0],):
        raise ValueError("labels length != n_samples")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("need at least 2 classes")
    n = x.shape[0]
    grand = x.mean(axis=0)
    within_ss = 0.0
    between_ss = 0.0
    for c in classes:
        rows = x[labels == c]
        mean_c = rows.mean(axis=0)
        within_ss += float(((rows - mean_c) ** 2).sum())
        between_ss += rows.shape[0] * float(((mean_c - grand) ** 2).sum())
    if between_ss <= 0.0:
        raise ValueError("between-class scatter is zero, nc1 undefined")
    return (within_ss / n) / (between_ss / n)


def nc4_agreement(ncc_pred, network_pred) -> float:
    """Fraction of samples where a nearest-class-mean rule matches the
    network's own prediction."""
    ncc_pred = np.asarray(ncc_pred)
    network_pred = np.asarray(network_pred)
    if ncc_pred.shape != network_pred.shape:
        raise ValueError("prediction vectors differ in length")
    return float(np.mean(ncc_pred == network_pred))


@dataclass
class LayerCollapse:
    layer_id: str
    nc1: float | None
    nc4: float | None
    accuracy_at_d_small: dict

    def to_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "nc1": self.nc1,
            "nc4": self.nc4,
            "accuracy_at_d_small": dict(self.accuracy_at_d_small),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LayerCollapse":
        return cls(
            layer_id=doc["layer_id"],
            nc1=doc.get("nc1"),
            nc4=doc.get("nc4"),
            accuracy_at_d_small=dict(doc.get("accuracy_at_d_small", {})),
        )


@dataclass
class CollapseReport:
    d_small: int
    epsilon: float
    reference_accuracy: float | None
    layers: list[LayerCollapse]
    boundary: tuple[int, int] | None
    boundary_note: str
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "d_small": self.d_small,
            "epsilon": self.epsilon,
            "reference_accuracy": self.reference_accuracy,
            "layers": [l.to_dict() for l in self.layers],
            "boundary": None if self.boundary is None else list(self.boundary),
            "boundary_note": self.boundary_note,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CollapseReport":
        boundary = doc.get("boundary")
        return cls(
            d_small=int(doc["d_small"]),
            epsilon=float(doc["epsilon"]),
            reference_accuracy=doc.get("reference_accuracy"),
            layers=[LayerCollapse.from_dict(l) for l in doc["layers"]],
            boundary=None if boundary is None else (int(boundary[0]), int(boundary[1])),
            boundary_note=doc.get("boundary_note", ""),
            notes=list(doc.get("notes", [])),
        )


def detect_collapse_layer(
    report: SweepReport,
    reference_accuracy: float,
    d_small: int = 10,
    epsilon: float = 0.02,
) -> tuple[int, int] | None:
    """Earliest layer index L such that every model reaches at least
    (1 - epsilon) * reference_accuracy within d_small dimensions at L and
    at every later layer. Returns the boundary (L - 1, L); (-1, 0) means
    even the first tap qualifies; None means no layer does.
    """
    if reference_accuracy is None:
        raise ValueError("reference_accuracy is required")
    if d_small < 1:
        raise ValueError("d_small must be >= 1")
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must be in [0, 1)")
    layer_ids = [l.layer_id for l in report.layers]
    curve_map = {(c.layer_id, c.model_kind): c for c in report.curves}
    needed = (1.0 - epsilon) * reference_accuracy
    qualified = []
    for lid in layer_ids:
        flags = []
        for model in MODEL_KINDS:
            curve = curve_map.get((lid, model))
            if curve is None:
                raise ValueError(
                    f"boundary detection needs all of {MODEL_KINDS}, "
                    f"missing {model} for layer {lid}"
                )
            flags.append(curve.best_at_most(d_small) >= needed)
        qualified.append(all(flags))
    for L in range(len(qualified)):
        if all(qualified[L:]):
            return (L - 1, L)
    return None


def boundary_text(boundary, layer_ids) -> str:
    if boundary is None:
        return "no collapse boundary found"
    before, after = boundary
    if before < 0:
        return f"collapsed from first tap ({layer_ids[after]})"
    return f"between {layer_ids[before]} and {layer_ids[after]}"


def compute_collapse_report(
    sweep_report: SweepReport,
    manifest,
    reference_accuracy: float | None = None,
    d_small: int = 10,
    epsilon: float = 0.02,
) -> CollapseReport:
    """Per-layer nc1/nc4 from the manifest's raw activations plus the
    boundary decision from the sweep curves.

    reference_accuracy defaults to the manifest's network_test_accuracy.
    nc4 is skipped (None) for layers whose test split lacks network
    predictions. The boundary is skipped, with a note, when the reference
    or any of the three models is missing.
    """
    if isinstance(manifest, (str, Path)):
        manifest = load_manifest(manifest)
    if not isinstance(manifest, Manifest):
        raise TypeError("manifest must be a Manifest or a path")
    if reference_accuracy is None:
        reference_accuracy = manifest.network_test_accuracy

    notes = []
    layers = []
    layer_ids = []
    for entry in manifest.layers:
        train = read_activation_set(entry.train_path)
        test = read_activation_set(entry.test_path)
        lid = entry.layer_id
        layer_ids.append(lid)
        nc1 = nc1_ratio(train.data, train.labels)
        if test.network_preds is not None:
            # means from raw train activations, matched on the raw test split
            ncc = fit_ncc(np.asarray(train.data, dtype=np.float64), train.labels)
            probe = predict_ncc(ncc, np.asarray(test.data, dtype=np.float64))
            nc4 = nc4_agreement(probe, test.network_preds)
        else:
            nc4 = None
            notes.append(f"layer {lid}: no network predictions, nc4 skipped")
        acc_small = {}
        for c in sweep_report.curves:
            if c.layer_id == lid:
                try:
                    acc_small[c.model_kind] = c.best_at_most(d_small)
                except ValueError:
                    pass
        layers.append(LayerCollapse(layer_id=lid, nc1=nc1, nc4=nc4, accuracy_at_d_small=acc_small))

    present = {c.model_kind for c in sweep_report.curves}
    boundary = None
    if reference_accuracy is None:
        notes.append("no reference accuracy available, boundary detection skipped")
        note = "boundary detection skipped"
    elif not set(MODEL_KINDS) <= present:
        missing = sorted(set(MODEL_KINDS) - present)
        notes.append(f"boundary detection needs models {missing}, skipped")
        note = "boundary detection skipped"
    else:
        boundary = detect_collapse_layer(sweep_report, reference_accuracy, d_small, epsilon)
        note = boundary_text(boundary, layer_ids)

    return CollapseReport(
        d_small=d_small,
        epsilon=epsilon,
        reference_accuracy=reference_accuracy,
        layers=layers,
        boundary=boundary,
        boundary_note=note,
        notes=notes,
    )

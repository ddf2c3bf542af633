"""Synthetic layerwise activation families with controllable collapse.

Each layer plants the class means as a simplex inside a random
``signal_dim``-dimensional subspace, adds within-class Gaussian noise in
that subspace, and ambient Gaussian noise in its orthogonal complement.
Shrinking the within-class noise layer by layer mimics a network whose
representations progressively concentrate at their class means; from
``collapse_at`` onward the within-class spread drops to 1e-3 of the class
mean separation. Labels are shared across layers (same samples at every
depth) and the simulated network head applies the nearest-class-mean rule
to the final layer, which populates ``network_preds``.

Everything is a pure function of the spec seed, so generated families are
bitwise reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from probekit.activation_io import ActivationSet, Manifest, ManifestLayer, write_activation_set

COLLAPSED_STD_FACTOR = 1e-3


@dataclass
class LayerFamilySpec:
    n_layers: int
    n_train: int
    n_test: int
    n_classes: int
    dims: list[int]
    signal_dim: int
    within_std: list[float]
    noise_dims_std: float
    collapse_at: int | None = None
    separation: float = 5.0
    seed: int = 0

    def validate(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if len(self.dims) != self.n_layers or len(self.within_std) != self.n_layers:
            raise ValueError("dims and within_std must have one entry per layer")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_train < self.n_classes or self.n_test < 1:
            raise ValueError("need n_train >= n_classes and n_test >= 1")
        if not 1 <= self.signal_dim <= min(self.dims):
            raise ValueError("signal_dim must satisfy 1 <= signal_dim <= min(dims)")
        if any(s <= 0 for s in self.within_std):
            raise ValueError("within_std entries must be positive")
        if self.noise_dims_std < 0:
            raise ValueError("noise_dims_std must be nonnegative")
        if self.separation <= 0:
            raise ValueError("separation must be positive")
        if self.collapse_at is not None and not 0 <= self.collapse_at < self.n_layers:
            raise ValueError("collapse_at must lie in [0, n_layers)")

    @classmethod
    def from_dict(cls, doc: dict) -> "LayerFamilySpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        missing = {"n_layers", "n_train", "n_test", "n_classes", "dims",
                   "signal_dim", "within_std", "noise_dims_std"} - set(doc)
        if missing:
            raise ValueError(f"missing spec fields: {sorted(missing)}")
        spec = cls(**doc)
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, path) -> "LayerFamilySpec":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


_SCALE_DECAY = 0.92


def _simplex_vertices(n_classes: int, signal_dim: int, separation: float) -> np.ndarray:
    """Centered simplex with C vertices and mean pairwise distance
    ``separation``, in signal_dim coordinates (zero-padded beyond the C-1
    dimensions the simplex spans).

    The vertices sit on a discrete polynomial curve (orthonormalized
    Vandermonde columns) with geometrically decaying coordinate scales.
    That gives the class-mean covariance distinct, ordered eigenvalues, so
    the leading principal components of near-collapsed data are the first
    curve coordinates rather than an arbitrary rotation of a degenerate
    eigenspace, and low-degree coordinate prefixes keep every vertex
    linearly separable from the rest (a polynomial of matching degree can
    isolate any single point of the curve).
    """
    if signal_dim < n_classes - 1:
        raise ValueError(
            f"signal_dim={signal_dim} too small for a {n_classes}-class "
            f"simplex (needs >= {n_classes - 1})"
        )
    # Chebyshev-style nodes: wider spacing mid-curve, where neighboring
    # classes crowd each other the most.
    t = -np.cos((np.arange(n_classes) + 0.5) * np.pi / n_classes)
    vander = np.vander(t, N=n_classes, increasing=True)
    q, _ = np.linalg.qr(vander)  # column 0 is constant, the rest zero-mean
    coords = q[:, 1:] * _SCALE_DECAY ** np.arange(1, n_classes)
    diff = coords[:, None, :] - coords[None, :, :]
    pair = np.sqrt((diff**2).sum(axis=2))
    mean_sep = pair.sum() / (n_classes * (n_classes - 1))
    coords *= separation / mean_sep
    out = np.zeros((n_classes, signal_dim))
    out[:, : n_classes - 1] = coords
    return out


def _random_orthonormal(rng: np.random.Generator, p: int, k: int) -> np.ndarray:
    """Seeded orthonormal embedding leaving a few features signal-free.

    Those features then carry ambient noise only, the way some channels of
    a real layer carry no class signal. Per-feature standardization turns
    them into unit-variance directions, which keeps explained-variance
    shares from concentrating entirely on the signal subspace. Their count
    stays small so principal components estimated from a finite sample do
    not pick up enough of them to blur the projected classes.
    """
    support = max(k, p - max(4, p // 8))
    rows = rng.choice(p, size=min(support, p), replace=False)
    rows.sort()
    g = rng.standard_normal((rows.size, k))
    q, r = np.linalg.qr(g)
    out = np.zeros((p, k))
    out[rows] = q * np.sign(np.diag(r))
    return out


def _balanced_labels(n: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    return labels


def generate_layer_family(spec: LayerFamilySpec) -> list[tuple[ActivationSet, ActivationSet]]:
    """Generate one (train, test) ActivationSet pair per layer."""
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    label_ss, *layer_ss = root.spawn(spec.n_layers + 1)

    label_rng = np.random.default_rng(label_ss)
    y_train = _balanced_labels(spec.n_train, spec.n_classes, label_rng)
    y_test = _balanced_labels(spec.n_test, spec.n_classes, label_rng)

    means_signal = _simplex_vertices(spec.n_classes, spec.signal_dim, spec.separation)
    collapsed_std = COLLAPSED_STD_FACTOR * spec.separation

    layers = []
    final_test_signal = None
    final_train_signal = None
    for l in range(spec.n_layers):
        rng = np.random.default_rng(layer_ss[l])
        p = spec.dims[l]
        sigma = spec.within_std[l]
        if spec.collapse_at is not None and l >= spec.collapse_at:
            sigma = collapsed_std
        basis = _random_orthonormal(rng, p, spec.signal_dim)

        split_data = []
        for y in (y_train, y_test):
            n = y.shape[0]
            signal = means_signal[y] + sigma * rng.standard_normal((n, spec.signal_dim))
            ambient = spec.noise_dims_std * rng.standard_normal((n, p))
            ambient -= (ambient @ basis) @ basis.T
            split_data.append((signal, signal @ basis.T + ambient))

        if l == spec.n_layers - 1:
            final_train_signal = split_data[0][0]
            final_test_signal = split_data[1][0]
        layers.append((split_data[0][1], split_data[1][1]))

    # The simulated network head classifies by nearest planted class mean on
    # the final layer; measured in signal coordinates, which an orthonormal
    # embedding does not change.
    def ncc_rule(signal):
        d2 = (
            np.einsum("ij,ij->i", means_signal, means_signal)[None, :]
            - 2.0 * signal @ means_signal.T
        )
        return d2.argmin(axis=1)

    preds_train = ncc_rule(final_train_signal)
    preds_test = ncc_rule(final_test_signal)

    out = []
    for l, (train_data, test_data) in enumerate(layers):
        layer_id = f"layer{l}"
        out.append(
            (
                ActivationSet(
                    layer_id=layer_id,
                    data=train_data.astype(np.float32),
                    labels=y_train,
                    n_classes=spec.n_classes,
                    network_preds=preds_train,
                    split_tag="train",
                ),
                ActivationSet(
                    layer_id=layer_id,
                    data=test_data.astype(np.float32),
                    labels=y_test,
                    n_classes=spec.n_classes,
                    network_preds=preds_test,
                    split_tag="test",
                ),
            )
        )
    return out


def write_layer_family(spec: LayerFamilySpec, out_dir) -> Path:
    """Generate a family, write PROBEAK1 files plus manifest, return the
    manifest path. Measured head accuracy on the test labels goes into the
    manifest as network_test_accuracy."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    family = generate_layer_family(spec)
    entries = []
    for i, (train, test) in enumerate(family):
        train_name = f"{i:02d}_{train.layer_id}_train.act"
        test_name = f"{i:02d}_{test.layer_id}_test.act"
        write_activation_set(train, out_dir / train_name)
        write_activation_set(test, out_dir / test_name)
        entries.append(
            ManifestLayer(
                layer_id=train.layer_id,
                train_path=train_name,
                test_path=test_name,
                dim=train.n_features,
                tap_point="synthetic",
            )
        )
    final_test = family[-1][1]
    accuracy = float(np.mean(final_test.network_preds == final_test.labels))
    manifest = Manifest(layers=entries, network_test_accuracy=accuracy)
    manifest_path = out_dir / "manifest.json"
    manifest.save(manifest_path)
    return manifest_path


def make_blobs(
    n: int,
    n_classes: int,
    d: int,
    within_std: float,
    separation: float,
    seed: int,
) -> ActivationSet:
    """Isotropic Gaussian blobs at seeded random centers with pairwise
    center distance >= separation. Labels are balanced."""
    if n < n_classes:
        raise ValueError("need n >= n_classes")
    if n_classes < 2 or d < 1:
        raise ValueError("need n_classes >= 2 and d >= 1")
    if within_std < 0 or separation <= 0:
        raise ValueError("need within_std >= 0 and separation > 0")
    rng = np.random.default_rng(seed)
    box = separation * max(2.0, 3.0 * n_classes ** (1.0 / d))
    centers = np.empty((n_classes, d))
    placed = 0
    for _ in range(100_000):
        cand = rng.uniform(0.0, box, size=d)
        if placed == 0 or np.linalg.norm(centers[:placed] - cand, axis=1).min() >= separation:
            centers[placed] = cand
            placed += 1
            if placed == n_classes:
                break
    if placed < n_classes:
        raise ValueError("could not place centers at the requested separation")
    labels = _balanced_labels(n, n_classes, rng)
    data = centers[labels] + within_std * rng.standard_normal((n, d))
    return ActivationSet(
        layer_id="blobs",
        data=data.astype(np.float32),
        labels=labels,
        n_classes=n_classes,
        split_tag="train",
    )

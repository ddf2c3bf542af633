"""Binary container for one layer's activations plus the sidecar manifest.

File layout ("PROBEAK1", all integers and floats little-endian):

    offset  size  field
    0       8     magic, b"PROBEAK1"
    8       4     format_version (u32), currently 1
    12      8     n_samples (u64)
    20      8     n_features (u64)
    28      8     n_classes (u64)
    36      4     flags (u32): bit 0 = network_preds present,
                               bit 1 = split is "test" (else "train")
    40      2     layer_id byte length (u16)
    42      var   layer_id, UTF-8

    payload, immediately after the header:
      n_samples * n_features  f32, row-major (one row per sample)
      n_samples               u16 labels
      n_samples               u16 network predictions, only if flags bit 0

Labels are u16 on disk, which caps n_classes at 65536. Spatial activations
are stored flattened channel-major, one row per sample; the producer decides
how to flatten, this module only stores and validates.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from probekit.errors import FormatError

MAGIC = b"PROBEAK1"
FORMAT_VERSION = 1

_FLAG_PREDS = 0x1
_FLAG_TEST_SPLIT = 0x2

# magic + u32 + 3*u64 + u32 + u16 length prefix
_FIXED_HEADER = struct.Struct("<8sIQQQIH")

_MAX_CLASSES = 1 << 16


@dataclass
class ActivationSet:
    """One layer's activations for one split, immutable after construction."""

    layer_id: str
    data: np.ndarray          # n x p float32, finite
    labels: np.ndarray        # length n, class indices in [0, n_classes)
    n_classes: int
    network_preds: np.ndarray | None = None
    split_tag: str = "train"

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.network_preds is not None:
            self.network_preds = np.asarray(self.network_preds, dtype=np.int64)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_features(self) -> int:
        return self.data.shape[1]

    def validate(self):
        """Raise ValueError on any invariant violation."""
        if self.data.ndim != 2:
            raise ValueError("data must be a 2-D matrix")
        if self.split_tag not in ("train", "test"):
            raise ValueError(f"split_tag must be 'train' or 'test', got {self.split_tag!r}")
        if not np.isfinite(self.data).all():
            raise ValueError("non-finite data")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_classes > _MAX_CLASSES:
            raise ValueError(f"n_classes exceeds format limit {_MAX_CLASSES}")
        if self.labels.shape != (self.n_samples,):
            raise ValueError("labels length != n_samples")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label >= n_classes (or negative)")
        if self.network_preds is not None:
            if self.network_preds.shape != (self.n_samples,):
                raise ValueError("network_preds length != n_samples")
            if self.network_preds.size and (
                self.network_preds.min() < 0 or self.network_preds.max() >= self.n_classes
            ):
                raise ValueError("network prediction >= n_classes (or negative)")


@dataclass
class ActivationSetHeader:
    magic: bytes
    format_version: int
    n_samples: int
    n_features: int
    n_classes: int
    flags: int
    layer_id: str

    @property
    def has_preds(self) -> bool:
        return bool(self.flags & _FLAG_PREDS)

    @property
    def split_tag(self) -> str:
        return "test" if self.flags & _FLAG_TEST_SPLIT else "train"

    @property
    def header_size(self) -> int:
        return _FIXED_HEADER.size + len(self.layer_id.encode("utf-8"))

    @property
    def payload_offset(self) -> int:
        return self.header_size

    @property
    def payload_size(self) -> int:
        n = self.n_samples
        size = n * self.n_features * 4 + n * 2
        if self.has_preds:
            size += n * 2
        return size


def header_size(layer_id: str) -> int:
    """On-disk header size for a given layer id; constant otherwise."""
    return _FIXED_HEADER.size + len(layer_id.encode("utf-8"))


def write_activation_set(aset: ActivationSet, path) -> None:
    """Write ``aset`` to ``path`` in PROBEAK1 format.

    The set is validated first; a file written here reads back bitwise equal.
    """
    aset.validate()
    layer_bytes = aset.layer_id.encode("utf-8")
    if len(layer_bytes) > 0xFFFF:
        raise ValueError("layer_id longer than 65535 bytes")
    flags = 0
    if aset.network_preds is not None:
        flags |= _FLAG_PREDS
    if aset.split_tag == "test":
        flags |= _FLAG_TEST_SPLIT
    header = _FIXED_HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        aset.n_samples,
        aset.n_features,
        aset.n_classes,
        flags,
        len(layer_bytes),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(layer_bytes)
        f.write(np.ascontiguousarray(aset.data, dtype="<f4").tobytes())
        f.write(aset.labels.astype("<u2").tobytes())
        if aset.network_preds is not None:
            f.write(aset.network_preds.astype("<u2").tobytes())


def _read_header(f, path) -> ActivationSetHeader:
    raw = f.read(_FIXED_HEADER.size)
    if len(raw) < _FIXED_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, p, c, flags, id_len = _FIXED_HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {version}")
    id_raw = f.read(id_len)
    if len(id_raw) < id_len:
        raise FormatError(f"{path}: truncated header")
    try:
        layer_id = id_raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: layer_id is not valid UTF-8") from e
    return ActivationSetHeader(magic, version, n, p, c, flags, layer_id)


def validate_header(path) -> ActivationSetHeader:
    """Parse and check the header without touching the payload."""
    with open(path, "rb") as f:
        return _read_header(f, path)


def _read_exact(f, dtype, count, path):
    arr = np.fromfile(f, dtype=dtype, count=count)
    if arr.size < count:
        raise FormatError(f"{path}: truncated payload")
    return arr


def read_activation_set(path) -> ActivationSet:
    """Load a PROBEAK1 file.

    The data matrix is read straight into its final buffer, so memory use is
    one copy of the matrix plus the label vectors.
    """
    with open(path, "rb") as f:
        header = _read_header(f, path)
        n, p = header.n_samples, header.n_features
        data = _read_exact(f, np.dtype("<f4"), n * p, path).reshape(n, p)
        labels = _read_exact(f, np.dtype("<u2"), n, path).astype(np.int64)
        preds = None
        if header.has_preds:
            preds = _read_exact(f, np.dtype("<u2"), n, path).astype(np.int64)
    aset = ActivationSet(
        layer_id=header.layer_id,
        data=data,
        labels=labels,
        n_classes=header.n_classes,
        network_preds=preds,
        split_tag=header.split_tag,
    )
    try:
        aset.validate()
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    return aset


@dataclass
class ManifestLayer:
    layer_id: str
    train_path: str
    test_path: str
    dim: int
    tap_point: str | None = None


@dataclass
class Manifest:
    """Sidecar JSON listing one file pair per layer, in network order."""

    layers: list[ManifestLayer] = field(default_factory=list)
    network_test_accuracy: float | None = None
    extra: dict = field(default_factory=dict)

    def layer_ids(self) -> list[str]:
        return [layer.layer_id for layer in self.layers]

    def to_dict(self) -> dict:
        doc = dict(self.extra)
        doc["layers"] = [
            {
                "layer_id": layer.layer_id,
                "train_path": layer.train_path,
                "test_path": layer.test_path,
                "dim": layer.dim,
                **({"tap_point": layer.tap_point} if layer.tap_point is not None else {}),
            }
            for layer in self.layers
        ]
        if self.network_test_accuracy is not None:
            doc["network_test_accuracy"] = self.network_test_accuracy
        return doc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def load_manifest(path) -> Manifest:
    """Load a manifest; relative layer paths resolve against its directory."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, dict) or "layers" not in doc:
        raise FormatError(f"{path}: manifest must be an object with a 'layers' list")
    base = path.parent
    layers = []
    for i, entry in enumerate(doc["layers"]):
        try:
            layers.append(
                ManifestLayer(
                    layer_id=entry["layer_id"],
                    train_path=str(base / entry["train_path"]),
                    test_path=str(base / entry["test_path"]),
                    dim=int(entry["dim"]),
                    tap_point=entry.get("tap_point"),
                )
            )
        except KeyError as e:
            raise FormatError(f"{path}: layers[{i}] missing field {e}") from e
    extra = {k: v for k, v in doc.items() if k not in ("layers", "network_test_accuracy")}
    return Manifest(
        layers=layers,
        network_test_accuracy=doc.get("network_test_accuracy"),
        extra=extra,
    )

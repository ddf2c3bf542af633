"""Principal components of standardized activations.

Fitting runs a thin SVD of the (already centered) matrix when p <= n, and
switches to the n x n Gram matrix when p > n, so cost is bounded by
min(n, p)^3 and a p x p covariance is never formed. Explained-variance
ratios divide each squared singular value by the total sum of squares of
the input, which equals the sum over all min(n, p) squared singular values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from probekit.errors import FormatError

_PCA_MAGIC = b"PROBEPC1"
_PCA_VERSION = 1
_PCA_HEADER = struct.Struct("<8sIQQQ")


@dataclass
class PcaModel:
    components: np.ndarray               # k_max x p, orthonormal rows
    singular_values: np.ndarray          # length k_max, nonincreasing
    explained_variance_ratio: np.ndarray  # length k_max, each in [0, 1]
    n_fit: int
    k_max: int

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


def _enforce_sign(components: np.ndarray) -> np.ndarray:
    # Deterministic orientation: the entry of largest magnitude in each
    # component is made positive.
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def _complete_orthonormal(rows: np.ndarray, k: int, p: int) -> np.ndarray:
    """Extend a set of orthonormal rows to k rows via Gram-Schmidt on the
    canonical basis. Only reached when the input is rank-deficient."""
    out = [r for r in rows]
    e = 0
    while len(out) < k and e < p:
        v = np.zeros(p)
        v[e] = 1.0
        e += 1
        for u in out:
            v -= (u @ v) * u
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            out.append(v / nrm)
    if len(out) < k:
        raise ValueError("could not complete an orthonormal basis")
    return np.asarray(out)


def fit_pca(X: np.ndarray, k_max: int) -> PcaModel:
    """Fit the top ``k_max`` principal components of a centered matrix.

    The caller standardizes; column means are assumed ~0. Requires
    ``1 <= k_max <= min(n - 1, p)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    n, p = X.shape
    if not np.isfinite(X).all():
        raise ValueError("non-finite input")
    limit = min(n - 1, p)
    if not 1 <= k_max <= limit:
        raise ValueError(f"k_max out of range: need 1 <= k_max <= min(n-1, p) = {limit}")

    total_ss = float(np.sum(X * X))
    if p <= n:
        _, s, vt = np.linalg.svd(X, full_matrices=False)
        components = vt[:k_max]
        sing = s[:k_max]
    else:
        gram = X @ X.T
        w, u = np.linalg.eigh(gram)
        order = np.argsort(w)[::-1][:k_max]
        w = np.clip(w[order], 0.0, None)
        # eigenvalues this far below the leading one are eigh roundoff, and
        # dividing by their square roots would produce garbage directions
        good = w > w[0] * 1e-10
        sing = np.where(good, np.sqrt(w), 0.0)
        u = u[:, order]
        components = np.zeros((k_max, p))
        if good.any():
            components[good] = (u[:, good].T @ X) / sing[good, None]
        if not good.all():
            components = _complete_orthonormal(components[good], k_max, p)

    components = _enforce_sign(np.ascontiguousarray(components))
    denom = total_ss if total_ss > 0 else 1.0
    ratios = (sing * sing) / denom
    return PcaModel(
        components=components,
        singular_values=sing,
        explained_variance_ratio=ratios,
        n_fit=n,
        k_max=k_max,
    )


def project(model: PcaModel, X: np.ndarray, d: int) -> np.ndarray:
    """Project rows of ``X`` onto the first ``d`` components."""
    if not 1 <= d <= model.k_max:
        raise ValueError(f"d out of range: need 1 <= d <= {model.k_max}")
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(
            f"width mismatch: model has {model.n_features} features, input {X.shape}"
        )
    return X @ model.components[:d].T


def explained_variance_cumulative(model: PcaModel, d: int) -> float:
    """Fraction of total variance captured by the first ``d`` components."""
    if not 1 <= d <= model.k_max:
        raise ValueError(f"d out of range: need 1 <= d <= {model.k_max}")
    return float(np.sum(model.explained_variance_ratio[:d]))


def save_pca(model: PcaModel, path) -> None:
    """Serialize to a little-endian binary blob (for sweep resume)."""
    k, p = model.components.shape
    with open(path, "wb") as f:
        f.write(_PCA_HEADER.pack(_PCA_MAGIC, _PCA_VERSION, model.n_fit, k, p))
        f.write(model.singular_values.astype("<f8").tobytes())
        f.write(model.explained_variance_ratio.astype("<f8").tobytes())
        f.write(np.ascontiguousarray(model.components, dtype="<f8").tobytes())


def load_pca(path) -> PcaModel:
    with open(path, "rb") as f:
        raw = f.read(_PCA_HEADER.size)
        if len(raw) < _PCA_HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, n_fit, k, p = _PCA_HEADER.unpack(raw)
        if magic != _PCA_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != _PCA_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        sing = np.fromfile(f, dtype="<f8", count=k)
        ratios = np.fromfile(f, dtype="<f8", count=k)
        comps = np.fromfile(f, dtype="<f8", count=k * p)
        if sing.size < k or ratios.size < k or comps.size < k * p:
            raise FormatError(f"{path}: truncated payload")
    return PcaModel(
        components=comps.reshape(k, p),
        singular_values=sing,
        explained_variance_ratio=ratios,
        n_fit=n_fit,
        k_max=k,
    )

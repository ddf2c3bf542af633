"""The three surrogate classifiers: k-NN, nearest class-center, linear SVM.

All predictions are deterministic. Ties break toward the lower class index
(votes, centroid distances, affine scores), and k-NN resolves equal
distances at the neighborhood boundary toward the lower training-row index.
k-NN search is exact, using blocked dense distance computation, no
approximate index.

The SVM is one-vs-rest with an L1 hinge, solved by dual coordinate descent
over the box-constrained dual (alpha in [0, c_param]) in randomized
permutation order from a seeded generator. The bias is learned by
augmenting each sample with a constant 1 feature, which makes the dual a
pure box problem; the bias therefore carries the same L2 penalty as the
weights. A run stops when the relative duality gap drops below ``tol``,
which certifies the reported objective to that accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from probekit.errors import ConvergenceError


# ----------------------------------------------------------------------
# k-nearest neighbors


@dataclass
class KnnModel:
    k: int
    train_points: np.ndarray   # n x d
    train_labels: np.ndarray   # length n


def fit_knn(X: np.ndarray, y: np.ndarray, k: int = 10) -> KnnModel:
    """Store the training set verbatim for exact neighbor search."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be n x d with matching label vector")
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k must satisfy 1 <= k <= n, got k={k}, n={X.shape[0]}")
    return KnnModel(k=k, train_points=X, train_labels=y)


def _squared_distances(Q: np.ndarray, T: np.ndarray, t_sq: np.ndarray) -> np.ndarray:
    q_sq = np.einsum("ij,ij->i", Q, Q)
    d2 = q_sq[:, None] + t_sq[None, :] - 2.0 * (Q @ T.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _k_nearest_rows(d2: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest per row; boundary ties go to lower indices."""
    q, n = d2.shape
    if k == n:
        return np.broadcast_to(np.arange(n), (q, n))
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
    sel = np.empty((q, k), dtype=np.int64)
    for r in range(q):
        row = d2[r]
        less = np.nonzero(row < kth[r])[0]
        need = k - less.size
        ties = np.nonzero(row == kth[r])[0][:need]
        sel[r, : less.size] = less
        sel[r, less.size :] = ties
    return sel


def predict_knn(m: KnnModel, Q: np.ndarray, block_size: int = 512) -> np.ndarray:
    """Majority vote among the k Euclidean-nearest training points."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != m.train_points.shape[1]:
        raise ValueError(
            f"width mismatch: model is {m.train_points.shape[1]}-dimensional, "
            f"queries have shape {Q.shape}"
        )
    T = m.train_points
    t_sq = np.einsum("ij,ij->i", T, T)
    n_classes = int(m.train_labels.max()) + 1
    out = np.empty(Q.shape[0], dtype=np.int64)
    for start in range(0, Q.shape[0], block_size):
        block = Q[start : start + block_size]
        d2 = _squared_distances(block, T, t_sq)
        neighbors = _k_nearest_rows(d2, m.k)
        votes = m.train_labels[neighbors]
        offsets = np.arange(block.shape[0]) * n_classes
        counts = np.bincount(
            (votes + offsets[:, None]).ravel(), minlength=block.shape[0] * n_classes
        ).reshape(block.shape[0], n_classes)
        out[start : start + block.shape[0]] = counts.argmax(axis=1)
    return out


# ----------------------------------------------------------------------
# nearest class-center


@dataclass
class NccModel:
    centroids: np.ndarray   # C x d
    class_ids: np.ndarray   # length C


def fit_ncc(X: np.ndarray, y: np.ndarray) -> NccModel:
    """Per-class mean vectors; every class in [0, C) needs a training row."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be n x d with matching label vector")
    if y.size == 0:
        raise ValueError("empty training set")
    n_classes = int(y.max()) + 1
    centroids = np.empty((n_classes, X.shape[1]))
    for c in range(n_classes):
        rows = X[y == c]
        if rows.shape[0] == 0:
            raise ValueError(f"empty class {c}")
        centroids[c] = rows.mean(axis=0)
    return NccModel(centroids=centroids, class_ids=np.arange(n_classes))


def predict_ncc(m: NccModel, Q: np.ndarray) -> np.ndarray:
    """Label of the Euclidean-nearest centroid; ties take the lower class."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != m.centroids.shape[1]:
        raise ValueError(
            f"width mismatch: centroids are {m.centroids.shape[1]}-dimensional, "
            f"queries have shape {Q.shape}"
        )
    # argmin of ||q - c||^2 = argmin of ||c||^2 - 2 q.c, per query row
    c_sq = np.einsum("ij,ij->i", m.centroids, m.centroids)
    scores = c_sq[None, :] - 2.0 * (Q @ m.centroids.T)
    return m.class_ids[scores.argmin(axis=1)]


# ----------------------------------------------------------------------
# one-vs-rest soft-margin linear SVM


@dataclass
class LinearSvmModel:
    weights: np.ndarray        # C x d
    biases: np.ndarray         # length C
    c_param: float
    objective: np.ndarray      # per-class primal objective at the solution
    duality_gap: np.ndarray    # per-class relative gap at stop (certificate)
    epochs: np.ndarray         # per-class epochs run
    converged: np.ndarray      # per-class bool


@njit(cache=True, nogil=True)
def _cd_epoch(Z, s, alpha, w, qii, c, perm):
    n, m = Z.shape
    for t in range(n):
        i = perm[t]
        g = 0.0
        for j in range(m):
            g += w[j] * Z[i, j]
        g = g * s[i] - 1.0
        a_old = alpha[i]
        a_new = a_old - g / qii[i]
        if a_new < 0.0:
            a_new = 0.0
        elif a_new > c:
            a_new = c
        if a_new != a_old:
            step = (a_new - a_old) * s[i]
            for j in range(m):
                w[j] += step * Z[i, j]
            alpha[i] = a_new


def _solve_binary(Z, s, c_param, tol, max_epochs, rng, trace=None):
    """Dual coordinate descent for one binary problem on augmented features.

    Returns (w_aug, primal, relative_gap, epochs, converged). The dual
    objective is nondecreasing across epochs; ``trace`` collects
    (primal, dual) pairs per epoch when a list is passed in.
    """
    n = Z.shape[0]
    alpha = np.zeros(n)
    w = np.zeros(Z.shape[1])
    qii = np.einsum("ij,ij->i", Z, Z)  # >= 1 thanks to the bias column
    primal = 0.5 * float(w @ w) + c_param * n  # objective at alpha = 0
    rel_gap = np.inf
    epochs = 0
    converged = False
    for epochs in range(1, max_epochs + 1):
        _cd_epoch(Z, s, alpha, w, qii, c_param, rng.permutation(n))
        w_sq = float(w @ w)
        hinge = float(np.clip(1.0 - s * (Z @ w), 0.0, None).sum())
        primal = 0.5 * w_sq + c_param * hinge
        dual = float(alpha.sum()) - 0.5 * w_sq
        if trace is not None:
            trace.append((primal, dual))
        rel_gap = (primal - dual) / max(1.0, abs(primal))
        if rel_gap <= tol:
            converged = True
            break
    return w, primal, rel_gap, epochs, converged


def fit_linear_svm(
    X: np.ndarray,
    y: np.ndarray,
    c_param: float = 1.0,
    tol: float = 1e-4,
    max_epochs: int = 1000,
    seed: int = 0,
    strict: bool = True,
) -> LinearSvmModel:
    """Train one-vs-rest linear SVMs with hinge loss.

    Each class c solves min_w 0.5 ||w||^2 + c_param * sum_i hinge(s_i, w, x_i)
    with s_i = +1 for samples of class c and -1 otherwise, over bias-augmented
    features. Training is deterministic given ``seed``. With ``strict`` a
    class that fails to reach ``tol`` within ``max_epochs`` raises
    ConvergenceError carrying its duality gap; otherwise the partially
    converged model is returned with the gap recorded per class.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be n x d with matching label vector")
    if not np.isfinite(X).all():
        raise ValueError("non-finite input")
    if c_param <= 0:
        raise ValueError("c_param must be positive")
    n_classes = int(y.max()) + 1
    if n_classes < 2:
        raise ValueError("need at least 2 classes")

    n, d = X.shape
    Z = np.ascontiguousarray(np.hstack([X, np.ones((n, 1))]))
    weights = np.empty((n_classes, d))
    biases = np.empty(n_classes)
    objective = np.empty(n_classes)
    gaps = np.empty(n_classes)
    epochs_used = np.empty(n_classes, dtype=np.int64)
    converged = np.empty(n_classes, dtype=bool)

    children = np.random.SeedSequence(seed).spawn(n_classes)
    for c in range(n_classes):
        pos = y == c
        if not pos.any() or pos.all():
            raise ValueError(
                f"degenerate binary problem for class {c}: one side of the "
                "one-vs-rest split is empty"
            )
        s = np.where(pos, 1.0, -1.0)
        rng = np.random.default_rng(children[c])
        w_aug, primal, gap, n_epochs, ok = _solve_binary(
            Z, s, c_param, tol, max_epochs, rng
        )
        weights[c] = w_aug[:d]
        biases[c] = w_aug[d]
        objective[c] = primal
        gaps[c] = gap
        epochs_used[c] = n_epochs
        converged[c] = ok

    if strict and not converged.all():
        worst = int(np.argmax(gaps))
        raise ConvergenceError(
            f"SVM for class {worst} did not converge in {max_epochs} epochs; "
            f"relative duality gap {gaps[worst]:.3e} > tol {tol:.1e}"
        )
    return LinearSvmModel(
        weights=weights,
        biases=biases,
        c_param=c_param,
        objective=objective,
        duality_gap=gaps,
        epochs=epochs_used,
        converged=converged,
    )


def predict_svm(m: LinearSvmModel, Q: np.ndarray) -> np.ndarray:
    """Argmax of the per-class affine scores; ties take the lower class."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != m.weights.shape[1]:
        raise ValueError(
            f"width mismatch: model is {m.weights.shape[1]}-dimensional, "
            f"queries have shape {Q.shape}"
        )
    scores = Q @ m.weights.T + m.biases
    return scores.argmax(axis=1)


def evaluate_accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of exact label matches."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty label vectors")
    return float(np.mean(pred == truth))

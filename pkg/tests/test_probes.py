"""Unit coverage for the three probe classifiers.

Oracles here are deliberately dumb: full distance matrices, stable sorts,
and a projected-gradient QP solver. The acceptance gate reruns them at the
sizes the build contract pins; these tests keep individual behaviors and
edge cases pinned down where failures are easy to localize.
"""

import numpy as np
import pytest

from probekit import (
    ConvergenceError,
    evaluate_accuracy,
    fit_knn,
    fit_linear_svm,
    fit_ncc,
    predict_knn,
    predict_ncc,
    predict_svm,
)
from probekit.probes import LinearSvmModel, _solve_binary


# ----------------------------------------------------------------------
# oracles


def knn_oracle(train_x, train_y, queries, k):
    """Exhaustive sort by (distance, train index); majority vote with count
    ties broken toward the lower class index."""
    n = train_x.shape[0]
    n_classes = int(train_y.max()) + 1
    out = np.empty(queries.shape[0], dtype=np.int64)
    for qi, q in enumerate(queries):
        d2 = ((train_x - q) ** 2).sum(axis=1)
        order = np.lexsort((np.arange(n), d2))[:k]
        counts = np.bincount(train_y[order], minlength=n_classes)
        out[qi] = counts.argmax()
    return out


def ncc_oracle_centroids(train_x, train_y):
    n_classes = int(train_y.max()) + 1
    return np.stack([train_x[train_y == c].mean(axis=0) for c in range(n_classes)])


def ncc_oracle_predict(centroids, queries):
    d2 = ((queries[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def svm_dual_oracle(x, s, c_param, iters=30000):
    """Projected gradient ascent on the box-constrained dual of the binary
    hinge problem over bias-augmented features. Returns the dual optimum,
    which equals the primal optimum at the solution."""
    z = np.hstack([x, np.ones((x.shape[0], 1))])
    q = (s[:, None] * z) @ (s[:, None] * z).T
    step = 1.0 / np.linalg.eigvalsh(q).max()
    alpha = np.zeros(x.shape[0])
    for _ in range(iters):
        alpha = np.clip(alpha + step * (1.0 - q @ alpha), 0.0, c_param)
    return float(alpha.sum() - 0.5 * alpha @ q @ alpha)


# ----------------------------------------------------------------------
# k-nearest neighbors


def test_knn_k_equals_n_predicts_global_majority(rng):
    x = rng.standard_normal((9, 3))
    y = np.array([0, 0, 0, 0, 1, 1, 1, 2, 2])
    model = fit_knn(x, y, k=9)
    pred = predict_knn(model, rng.standard_normal((5, 3)))
    assert (pred == 0).all()


def test_knn_exact_match_wins_at_k_1(rng):
    x = rng.standard_normal((20, 4))
    y = rng.integers(0, 3, size=20)
    model = fit_knn(x, y, k=1)
    assert np.array_equal(predict_knn(model, x[7:12]), y[7:12])


def test_knn_equidistant_tie_takes_lower_class():
    # query at the exact midpoint; with k=2 both neighbors vote once, so the
    # class tie resolves downward
    x = np.array([[0.0, 0.0], [2.0, 0.0]])
    y = np.array([1, 0])
    model = fit_knn(x, y, k=2)
    assert predict_knn(model, np.array([[1.0, 0.0]]))[0] == 0


def test_knn_neighbor_boundary_tie_takes_lower_train_index():
    # three training points, two of them equidistant from the query; k=2 must
    # keep the one with the lower row index, which decides the vote
    x = np.array([[0.0, 0.0], [4.0, 0.0], [-4.0, 0.0]])
    y = np.array([0, 1, 2])
    model = fit_knn(x, y, k=2)
    # neighbors: index 0 (distance 1) then tie between 1 and 2 (distance 3 vs 5)
    assert predict_knn(model, np.array([[1.0, 0.0]]))[0] == 0
    # put the query dead center so rows 1 and 2 tie exactly
    model2 = fit_knn(np.array([[3.0, 0.0], [-3.0, 0.0]]), np.array([1, 0]), k=1)
    assert predict_knn(model2, np.array([[0.0, 0.0]]))[0] == 1  # row 0 wins the tie


def test_knn_matches_oracle_with_integer_grid_ties(rng):
    # integer coordinates force exact distance ties in float arithmetic
    x = rng.integers(-3, 4, size=(60, 2)).astype(np.float64)
    y = rng.integers(0, 4, size=60)
    q = rng.integers(-3, 4, size=(25, 2)).astype(np.float64)
    for k in (1, 3, 10):
        model = fit_knn(x, y, k=k)
        assert np.array_equal(predict_knn(model, q), knn_oracle(x, y, q, k))


def test_knn_matches_oracle_random(rng):
    for _ in range(5):
        n = int(rng.integers(30, 200))
        d = int(rng.integers(2, 12))
        x = rng.standard_normal((n, d))
        y = rng.integers(0, 5, size=n)
        q = rng.standard_normal((12, d))
        k = int(rng.choice([1, 3, 10]))
        model = fit_knn(x, y, k=k)
        assert np.array_equal(predict_knn(model, q), knn_oracle(x, y, q, k))


def test_knn_block_size_does_not_change_predictions(rng):
    x = rng.standard_normal((150, 6))
    y = rng.integers(0, 3, size=150)
    q = rng.standard_normal((97, 6))
    model = fit_knn(x, y, k=7)
    assert np.array_equal(predict_knn(model, q, block_size=13), predict_knn(model, q))


def test_knn_validation(rng):
    x = rng.standard_normal((5, 2))
    y = np.zeros(5, dtype=int)
    with pytest.raises(ValueError, match="k must satisfy"):
        fit_knn(x, y, k=6)
    with pytest.raises(ValueError, match="k must satisfy"):
        fit_knn(x, y, k=0)
    model = fit_knn(x, y, k=2)
    with pytest.raises(ValueError, match="width mismatch"):
        predict_knn(model, np.zeros((2, 3)))


# ----------------------------------------------------------------------
# nearest class-center


def test_ncc_centroid_arithmetic():
    x = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 10.0]])
    y = np.array([0, 0, 1])
    model = fit_ncc(x, y)
    assert np.array_equal(model.centroids, np.array([[1.0, 0.0], [10.0, 10.0]]))


def test_ncc_single_sample_classes(rng):
    x = rng.standard_normal((4, 3))
    model = fit_ncc(x, np.arange(4))
    assert np.allclose(model.centroids, x)


def test_ncc_centroids_match_groupwise_oracle(rng):
    x = rng.standard_normal((300, 8)) * 2.0
    y = rng.integers(0, 6, size=300)
    model = fit_ncc(x, y)
    assert np.abs(model.centroids - ncc_oracle_centroids(x, y)).max() < 1e-6


def test_ncc_query_at_centroid(rng):
    x = rng.standard_normal((50, 4)) + 4.0 * rng.integers(0, 3, size=(50, 1))
    y = rng.integers(0, 3, size=50)
    model = fit_ncc(x, y)
    assert np.array_equal(predict_ncc(model, model.centroids), np.arange(3))


def test_ncc_midpoint_tie_takes_lower_class():
    x = np.array([[0.0, 0.0], [2.0, 0.0]])
    y = np.array([0, 1])
    model = fit_ncc(x, y)
    assert predict_ncc(model, np.array([[1.0, 0.0]]))[0] == 0


def test_ncc_thousand_queries_match_oracle(rng):
    x = rng.standard_normal((400, 10))
    y = rng.integers(0, 7, size=400)
    q = rng.standard_normal((1000, 10))
    model = fit_ncc(x, y)
    assert np.array_equal(predict_ncc(model, q), ncc_oracle_predict(model.centroids, q))


def test_ncc_empty_class_rejected(rng):
    x = rng.standard_normal((6, 2))
    y = np.array([0, 0, 2, 2, 2, 2])  # class 1 missing
    with pytest.raises(ValueError, match="empty class 1"):
        fit_ncc(x, y)


# ----------------------------------------------------------------------
# linear SVM


def separable_instance(rng, n_classes=2, per_class=5, d=2, gap=6.0):
    # centered simplex centers keep the dual problem well conditioned
    centers = gap * (np.eye(n_classes, d) - 1.0 / n_classes)
    x = np.vstack([c + 0.4 * rng.standard_normal((per_class, d)) for c in centers])
    y = np.repeat(np.arange(n_classes), per_class)
    return x, y


def test_svm_objective_matches_qp_oracle_on_separable_instance(rng):
    x, y = separable_instance(rng, n_classes=2, per_class=5)
    model = fit_linear_svm(x, y, c_param=1.0, tol=1e-6, max_epochs=20000)
    for c in range(2):
        s = np.where(y == c, 1.0, -1.0)
        oracle = svm_dual_oracle(x, s, 1.0)
        assert abs(model.objective[c] - oracle) / max(1.0, abs(oracle)) < 1e-3


def test_svm_separates_well_separated_blobs(rng):
    x, y = separable_instance(rng, n_classes=3, per_class=8, d=3, gap=8.0)
    model = fit_linear_svm(x, y, tol=1e-5, max_epochs=20000)
    assert model.converged.all()
    assert np.array_equal(predict_svm(model, x), y)


def test_svm_learns_a_bias(rng):
    # both clusters on the same side of the origin, so a homogeneous linear
    # decision through zero cannot separate them
    x = np.vstack(
        [
            np.array([2.0, 2.0]) + 0.1 * rng.standard_normal((8, 2)),
            np.array([4.0, 4.0]) + 0.1 * rng.standard_normal((8, 2)),
        ]
    )
    y = np.repeat([0, 1], 8)
    model = fit_linear_svm(x, y, c_param=10.0, tol=1e-4, max_epochs=50000)
    assert np.array_equal(predict_svm(model, x), y)
    # scores of a zero-bias version misclassify at least one sample
    homogeneous = LinearSvmModel(
        weights=model.weights, biases=np.zeros_like(model.biases), c_param=1.0,
        objective=model.objective, duality_gap=model.duality_gap,
        epochs=model.epochs, converged=model.converged,
    )
    assert not np.array_equal(predict_svm(homogeneous, x), y)


def test_svm_one_hot_weights_pick_matching_class():
    model = LinearSvmModel(
        weights=np.eye(3),
        biases=np.zeros(3),
        c_param=1.0,
        objective=np.zeros(3),
        duality_gap=np.zeros(3),
        epochs=np.ones(3, dtype=np.int64),
        converged=np.ones(3, dtype=bool),
    )
    assert np.array_equal(predict_svm(model, np.eye(3)), np.arange(3))


def test_svm_bias_shift_invariance(rng):
    weights = rng.standard_normal((4, 5))
    biases = rng.standard_normal(4)
    q = rng.standard_normal((30, 5))
    base = LinearSvmModel(
        weights=weights, biases=biases, c_param=1.0,
        objective=np.zeros(4), duality_gap=np.zeros(4),
        epochs=np.ones(4, dtype=np.int64), converged=np.ones(4, dtype=bool),
    )
    shifted = LinearSvmModel(
        weights=weights, biases=biases + 3.7, c_param=1.0,
        objective=np.zeros(4), duality_gap=np.zeros(4),
        epochs=np.ones(4, dtype=np.int64), converged=np.ones(4, dtype=bool),
    )
    assert np.array_equal(predict_svm(base, q), predict_svm(shifted, q))


def test_svm_predictions_match_score_matrix_oracle(rng):
    weights = rng.standard_normal((5, 6))
    biases = rng.standard_normal(5)
    q = rng.standard_normal((200, 6))
    model = LinearSvmModel(
        weights=weights, biases=biases, c_param=1.0,
        objective=np.zeros(5), duality_gap=np.zeros(5),
        epochs=np.ones(5, dtype=np.int64), converged=np.ones(5, dtype=bool),
    )
    scores = q @ weights.T + biases
    assert np.array_equal(predict_svm(model, q), scores.argmax(axis=1))


def test_svm_deterministic_given_seed(rng):
    x, y = separable_instance(rng, n_classes=3, per_class=6, d=3)
    a = fit_linear_svm(x, y, seed=11, tol=1e-5, max_epochs=20000)
    b = fit_linear_svm(x, y, seed=11, tol=1e-5, max_epochs=20000)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.biases, b.biases)
    assert np.array_equal(a.objective, b.objective)


def test_svm_dual_objective_is_monotone(rng):
    x, y = separable_instance(rng, n_classes=2, per_class=10, d=3, gap=2.0)
    z = np.hstack([x, np.ones((x.shape[0], 1))])
    s = np.where(y == 0, 1.0, -1.0)
    trace = []
    _solve_binary(z, s, 1.0, 1e-8, 200, np.random.default_rng(0), trace=trace)
    duals = [d for _, d in trace]
    assert all(b >= a - 1e-9 for a, b in zip(duals, duals[1:]))
    # primal always bounds dual from above
    assert all(p >= d - 1e-9 for p, d in trace)


def test_svm_non_convergence_strict_raises(rng):
    x = rng.standard_normal((60, 4))
    y = rng.integers(0, 2, size=60)  # pure noise, hard margin unreachable
    with pytest.raises(ConvergenceError, match="relative duality gap"):
        fit_linear_svm(x, y, tol=1e-10, max_epochs=2, strict=True)


def test_svm_non_convergence_loose_reports_gap(rng):
    x = rng.standard_normal((60, 4))
    y = rng.integers(0, 2, size=60)
    model = fit_linear_svm(x, y, tol=1e-10, max_epochs=2, strict=False)
    assert not model.converged.all()
    assert (model.duality_gap[~model.converged] > 1e-10).all()
    assert (model.epochs == 2).all()


def test_svm_degenerate_split_rejected(rng):
    x = rng.standard_normal((4, 2))
    # class 1 has no samples, so its one-vs-rest positive side is empty
    with pytest.raises(ValueError, match="degenerate binary problem"):
        fit_linear_svm(x, np.array([0, 0, 2, 2]))
    with pytest.raises(ValueError, match="at least 2 classes"):
        fit_linear_svm(x, np.zeros(4, dtype=int))


def test_svm_validation(rng):
    x = rng.standard_normal((6, 2))
    y = np.array([0, 0, 0, 1, 1, 1])
    with pytest.raises(ValueError, match="c_param"):
        fit_linear_svm(x, y, c_param=0.0)
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        fit_linear_svm(bad, y)
    model = fit_linear_svm(x, y, tol=1e-4, max_epochs=10000)
    with pytest.raises(ValueError, match="width mismatch"):
        predict_svm(model, np.zeros((2, 3)))


# ----------------------------------------------------------------------
# accuracy


def test_accuracy_trivial_cases():
    assert evaluate_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert evaluate_accuracy([0, 1, 0, 1], [1, 0, 1, 0]) == 0.0


def test_accuracy_random_ten_class_pair_near_chance():
    rng = np.random.default_rng(123)
    a = rng.integers(0, 10, size=10000)
    b = rng.integers(0, 10, size=10000)
    assert abs(evaluate_accuracy(a, b) - 0.1) < 0.01


def test_accuracy_validation():
    with pytest.raises(ValueError, match="length mismatch"):
        evaluate_accuracy([1, 2], [1])
    with pytest.raises(ValueError, match="empty"):
        evaluate_accuracy([], [])

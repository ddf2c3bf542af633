"""PCA against a dense eigendecomposition oracle, plus the structural
properties the sweep relies on (nestedness, sign determinism, isometry)."""

import numpy as np
import pytest

from probekit import FormatError, PcaModel, load_pca, save_pca
from probekit.pca import explained_variance_cumulative, fit_pca, project


def centered(rng, n, p, scale=None):
    x = rng.standard_normal((n, p))
    if scale is not None:
        x *= scale
    return x - x.mean(axis=0)


def eig_oracle(x):
    """Eigendecomposition of the population covariance, descending order."""
    n = x.shape[0]
    cov = x.T @ x / n
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    return w[order], v[:, order].T  # rows are components


def match_up_to_sign(a, b, tol):
    return min(np.abs(a - b).max(), np.abs(a + b).max()) <= tol


def test_matches_eigendecomposition_on_random_50x6(rng):
    x = centered(rng, 50, 6, scale=np.linspace(0.4, 2.5, 6))
    model = fit_pca(x, k_max=6)
    eigvals, eigvecs = eig_oracle(x)
    for i in range(6):
        assert match_up_to_sign(model.components[i], eigvecs[i], 1e-6)
    # partial explained-variance sums against eigenvalue partial sums
    total = eigvals.sum()
    for d in range(1, 7):
        assert abs(explained_variance_cumulative(model, d) - eigvals[:d].sum() / total) < 1e-6


def test_gram_route_matches_direct_route(rng):
    # p > n switches to the Gram matrix; both routes see the same spectrum
    x = centered(rng, 12, 30)
    model = fit_pca(x, k_max=11)
    eigvals, eigvecs = eig_oracle(x)
    for i in range(11):
        assert match_up_to_sign(model.components[i], eigvecs[i], 1e-6)
    assert np.allclose(model.singular_values**2 / x.shape[0], eigvals[:11], atol=1e-8)


def test_two_point_axis_example():
    x = np.array([[-1.0, 0.0], [1.0, 0.0]])
    model = fit_pca(x, k_max=1)
    assert abs(explained_variance_cumulative(model, 1) - 1.0) < 1e-12
    assert match_up_to_sign(model.components[0], np.array([1.0, 0.0]), 1e-12)


def test_full_projection_is_an_isometry(rng):
    x = centered(rng, 40, 8)
    model = fit_pca(x, k_max=8)
    q = rng.standard_normal((15, 8))
    z = project(model, q, 8)
    d_before = np.linalg.norm(q[:, None, :] - q[None, :, :], axis=2)
    d_after = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=2)
    assert np.abs(d_before - d_after).max() < 1e-5


def test_rank_one_reconstruction_error_is_trailing_spectrum(rng):
    x = centered(rng, 30, 5)
    model = fit_pca(x, k_max=5)
    z = project(model, x, 1)
    recon = z @ model.components[:1]
    err = float(((x - recon) ** 2).sum())
    trailing = float((model.singular_values[1:] ** 2).sum())
    assert abs(err - trailing) < 1e-6


def test_zero_matrix_projects_to_zero(rng):
    x = centered(rng, 20, 4)
    model = fit_pca(x, k_max=4)
    assert np.array_equal(project(model, np.zeros((3, 4)), 2), np.zeros((3, 2)))


def test_projection_nestedness(rng):
    x = centered(rng, 25, 9)
    model = fit_pca(x, k_max=8)
    full = project(model, x, 8)
    # matmul reassociates across output widths, so allow last-ulp slack
    for d in (1, 3, 5):
        assert np.allclose(project(model, x, d), full[:, :d], atol=1e-12, rtol=0)
    # a smaller fit of the same data shares the leading components bitwise
    small = fit_pca(x, k_max=3)
    assert np.array_equal(small.components, model.components[:3])


def test_sign_convention_is_deterministic(rng):
    x = centered(rng, 40, 6)
    model = fit_pca(x, k_max=6)
    idx = np.argmax(np.abs(model.components), axis=1)
    assert (model.components[np.arange(6), idx] > 0).all()
    again = fit_pca(x.copy(), k_max=6)
    assert np.array_equal(model.components, again.components)


def test_components_orthonormal_even_when_rank_deficient(rng):
    base = rng.standard_normal((2, 10))
    coef = rng.standard_normal((8, 2))
    x = coef @ base  # rank 2, p > n
    x -= x.mean(axis=0)
    model = fit_pca(x, k_max=7)
    gram = model.components @ model.components.T
    assert np.abs(gram - np.eye(7)).max() < 1e-6
    assert abs(explained_variance_cumulative(model, 7) - 1.0) < 1e-9
    assert (model.explained_variance_ratio[2:] < 1e-12).all()


def test_cumulative_variance_monotone_and_complete(rng):
    x = centered(rng, 60, 8)
    model = fit_pca(x, k_max=8)
    vals = [explained_variance_cumulative(model, d) for d in range(1, 9)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - 1.0) < 1e-9


def test_save_load_round_trip(tmp_path, rng):
    x = centered(rng, 30, 6)
    model = fit_pca(x, k_max=5)
    path = tmp_path / "layer.pcm"
    save_pca(model, path)
    loaded = load_pca(path)
    assert isinstance(loaded, PcaModel)
    assert loaded.n_fit == model.n_fit
    assert loaded.k_max == model.k_max
    assert np.array_equal(loaded.components, model.components)
    assert np.array_equal(loaded.singular_values, model.singular_values)
    assert np.array_equal(loaded.explained_variance_ratio, model.explained_variance_ratio)


def test_blob_load_rejects_corruption(tmp_path, rng):
    x = centered(rng, 10, 4)
    path = tmp_path / "m.pcm"
    save_pca(fit_pca(x, k_max=3), path)
    raw = path.read_bytes()
    path.write_bytes(b"WRONGMAG" + raw[8:])
    with pytest.raises(FormatError, match="bad magic"):
        load_pca(path)
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(FormatError, match="truncated"):
        load_pca(path)


def test_argument_validation(rng):
    x = centered(rng, 10, 4)
    with pytest.raises(ValueError, match="k_max"):
        fit_pca(x, k_max=0)
    with pytest.raises(ValueError, match="k_max"):
        fit_pca(x, k_max=5)  # min(n - 1, p) = 4
    bad = x.copy()
    bad[0, 0] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        fit_pca(bad, k_max=2)
    model = fit_pca(x, k_max=3)
    with pytest.raises(ValueError, match="d out of range"):
        project(model, x, 4)
    with pytest.raises(ValueError, match="width mismatch"):
        project(model, np.zeros((2, 5)), 2)
    with pytest.raises(ValueError, match="d out of range"):
        explained_variance_cumulative(model, 0)

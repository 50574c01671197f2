"""Principal components of expression plus the survival screen."""

import csv
import warnings

import numpy as np
import pytest

from topicsurv.data import SurvivalLabel
from topicsurv.errors import InputError
from topicsurv.superpc import (
    DEFAULT_ETA_GRID,
    PcaBasis,
    fit_pca,
    screen_components,
    use_basis_pca,
)


def exponential_labels(rng, log_hazard, censor_scale=3.0):
    out = []
    for lh in np.asarray(log_hazard, dtype=np.float64):
        t = rng.exponential(np.exp(-lh))
        c = rng.exponential(censor_scale)
        out.append(SurvivalLabel(float(min(t, c)) + 1e-9, 1 if t <= c else 0))
    return tuple(out)


def test_components_are_orthonormal():
    rng = np.random.default_rng(0)
    basis = fit_pca(rng.normal(size=(30, 8)))
    gram = basis.component_vectors @ basis.component_vectors.T
    assert np.allclose(gram, np.eye(basis.component_vectors.shape[0]), atol=1e-8)
    assert np.all(np.diff(basis.explained_variance) <= 1e-12)


def test_collinear_data_gives_diagonal_direction():
    z = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    basis = fit_pca(z)
    # the second direction is numerically null and is dropped
    assert basis.component_vectors.shape[0] == 1
    direction = basis.component_vectors[0]
    assert np.allclose(np.abs(direction), 1 / np.sqrt(2), atol=1e-12)


def test_reconstruction():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(20, 6))
    basis = fit_pca(z)
    centered = z - basis.column_means
    scores = centered @ basis.component_vectors.T
    assert np.allclose(scores @ basis.component_vectors, centered, atol=1e-8)


def test_rank_bound_wide_matrix():
    rng = np.random.default_rng(2)
    basis = fit_pca(rng.normal(size=(10, 50)))
    # centering removes one degree of freedom
    assert basis.component_vectors.shape[0] <= 9
    gram = basis.component_vectors @ basis.component_vectors.T
    assert np.allclose(gram, np.eye(gram.shape[0]), atol=1e-8)


def test_gram_route_matches_svd_route():
    rng = np.random.default_rng(3)
    tall = rng.normal(size=(40, 12))
    wide_of_tall = fit_pca(np.hstack([tall, np.zeros((40, 50))]))
    narrow = fit_pca(tall)
    r = narrow.component_vectors.shape[0]
    assert np.allclose(
        np.abs(wide_of_tall.component_vectors[:r, :12]),
        np.abs(narrow.component_vectors),
        atol=1e-8,
    )


def test_mean_row_scores_zero():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(25, 5))
    basis = fit_pca(z)
    full = PcaBasis(
        component_vectors=basis.component_vectors,
        column_means=basis.column_means,
        explained_variance=basis.explained_variance,
        retained_indices=tuple(range(basis.component_vectors.shape[0])),
    )
    assert np.allclose(use_basis_pca(basis.column_means, full), 0.0, atol=1e-12)
    # training rows reproduce their stored centered projections
    scores = use_basis_pca(z, full)
    assert np.allclose(scores, (z - basis.column_means) @ basis.component_vectors.T)


def test_adding_a_component_shifts_its_score_by_one():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(25, 5))
    basis = fit_pca(z)
    full = PcaBasis(
        component_vectors=basis.component_vectors,
        column_means=basis.column_means,
        explained_variance=basis.explained_variance,
        retained_indices=tuple(range(basis.component_vectors.shape[0])),
    )
    x = rng.normal(size=5)
    base = use_basis_pca(x, full)
    for k in range(len(full.retained_indices)):
        shifted = use_basis_pca(x + basis.component_vectors[k], full)
        delta = shifted - base
        expect = np.zeros_like(base)
        expect[k] = 1.0
        assert np.allclose(delta, expect, atol=1e-10)


def test_retained_subset_selects_columns():
    rng = np.random.default_rng(6)
    z = rng.normal(size=(20, 4))
    basis = fit_pca(z)
    sub = PcaBasis(
        component_vectors=basis.component_vectors,
        column_means=basis.column_means,
        explained_variance=basis.explained_variance,
        retained_indices=(2, 0),
    )
    out = use_basis_pca(z[:3], sub)
    assert out.shape == (3, 2)
    all_scores = (z[:3] - basis.column_means) @ basis.component_vectors.T
    assert np.allclose(out, all_scores[:, [2, 0]])
    empty = PcaBasis(
        component_vectors=basis.component_vectors,
        column_means=basis.column_means,
        explained_variance=basis.explained_variance,
        retained_indices=(),
    )
    assert use_basis_pca(z[:3], empty).shape == (3, 0)


def test_strong_direction_is_retained(tmp_path):
    rng = np.random.default_rng(7)
    n = 120
    z = np.hstack([rng.normal(scale=2.0, size=(n, 1)), rng.normal(scale=0.3, size=(n, 3))])
    labels = exponential_labels(rng, 0.8 * z[:, 0])
    basis = fit_pca(z)
    report = tmp_path / "screen.csv"
    screened = screen_components(basis, z, labels, report_path=str(report))
    assert 0 in screened.retained_indices
    assert screened.eta in DEFAULT_ETA_GRID
    with open(report) as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["p_value"]) < 1e-4
    shares = [float(r["variance_share"]) for r in rows]
    assert abs(sum(shares) - 1.0) < 1e-9
    assert shares[0] > 0.9


def test_noise_passes_at_the_nominal_rate(tmp_path):
    # under no association the screen keeps about eta of the components
    rng = np.random.default_rng(8)
    n, p = 1050, 1000
    z = rng.normal(size=(n, p))
    labels = exponential_labels(rng, np.zeros(n))
    basis = fit_pca(z)
    report = tmp_path / "screen.csv"
    screen_components(basis, z, labels, eta_grid=(0.05,), report_path=str(report))
    with open(report) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) >= 1000
    frac = np.mean([float(r["p_value"]) < 0.05 for r in rows])
    assert abs(frac - 0.05) < 0.02


def test_nothing_passing_warns_and_retains_nothing():
    rng = np.random.default_rng(9)
    n = 60
    z = rng.normal(size=(n, 3))
    labels = exponential_labels(rng, np.zeros(n))
    basis = fit_pca(z)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        screened = screen_components(basis, z, labels, eta_grid=(1e-6,))
    assert screened.retained_indices == ()
    assert any("no component passed" in str(w.message) for w in caught)
    assert use_basis_pca(z, screened).shape == (n, 0)


def test_threshold_tie_prefers_smallest():
    # one overwhelming direction, everything else flat: every threshold
    # retains the same single component, so the smallest threshold wins
    rng = np.random.default_rng(10)
    n = 100
    z = np.hstack([rng.normal(scale=2.0, size=(n, 1)), rng.normal(scale=0.2, size=(n, 2))])
    labels = exponential_labels(rng, 0.9 * z[:, 0])
    basis = fit_pca(z)
    screened = screen_components(basis, z, labels)
    assert screened.retained_indices == (0,)
    assert screened.eta == min(DEFAULT_ETA_GRID)


def test_screen_input_validation():
    rng = np.random.default_rng(11)
    z = rng.normal(size=(30, 3))
    labels = exponential_labels(rng, np.zeros(30))
    basis = fit_pca(z)
    with pytest.raises(InputError):
        screen_components(basis, z, labels, eta_grid=())
    with pytest.raises(InputError):
        screen_components(basis, z, labels, eta_grid=(0.0,))
    with pytest.raises(InputError):
        screen_components(basis, z, labels[:-1])
    with pytest.raises(InputError):
        use_basis_pca(np.zeros(5), basis)
    with pytest.raises(InputError):
        fit_pca(np.zeros((2, 2)))

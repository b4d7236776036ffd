import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import eval_hermite

from qtrack.errors import GridMismatchError
from qtrack.fock import coherent_state, fock_state, thermal_state
from qtrack.phase_space import (
    KL_FLOOR_MASS,
    NormalizationWarning,
    PhaseSpaceField,
    PhaseSpaceGrid,
    ensemble_field,
    kl_divergence,
    positive_part,
    trajectory_error_stats,
    wigner,
    wigner_many,
)
from qtrack.quantum import TrajectoryLog

from conftest import random_density_matrix

GRID = PhaseSpaceGrid()


# -- oracles -------------------------------------------------------------------


def hermite_function(n, x):
    norm = math.sqrt(2.0**n * math.factorial(n) * math.sqrt(math.pi))
    return eval_hermite(n, x) * np.exp(-x * x / 2) / norm


def wigner_integral(rho, x, p, half_width=16.0, points=4001):
    """(1/2π) ∫ <x - z/2|ρ|x + z/2> e^{ipz} dz by the trapezoid rule."""
    dim = rho.shape[0]
    z = np.linspace(-half_width, half_width, points)
    left = np.array([hermite_function(n, x - z / 2) for n in range(dim)])
    right = np.array([hermite_function(n, x + z / 2) for n in range(dim)])
    kernel = np.einsum("mz,mn,nz->z", left, rho, right)
    return float((np.trapezoid(kernel * np.exp(1j * p * z), z) / (2 * math.pi)).real)


def gaussian_field(grid, mx, mp, var=1.0):
    xg, pg = grid.mesh()
    vals = np.exp(-((xg - mx) ** 2 + (pg - mp) ** 2) / (2 * var)) / (2 * math.pi * var)
    return PhaseSpaceField(grid, vals, "pdf").normalized()


def log(values):
    values = np.asarray(values, dtype=float)
    return TrajectoryLog(np.arange(values.size) * 1.0, values, -values)


# -- grid ------------------------------------------------------------------------


def test_default_grid():
    assert (GRID.n_x, GRID.n_p) == (201, 201)
    assert GRID.dx == pytest.approx(0.06)
    assert GRID.xs[100] == 0.0 and GRID.ps[-1] == pytest.approx(6.0)


@pytest.mark.parametrize("kwargs", [{"n_x": 1}, {"x_max": -7.0}, {"p_min": 6.0}])
def test_invalid_grid(kwargs):
    with pytest.raises(ValueError):
        PhaseSpaceGrid(**kwargs)


def test_field_shape_checked():
    with pytest.raises(GridMismatchError):
        PhaseSpaceField(GRID, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        PhaseSpaceField(PhaseSpaceGrid(n_x=2, n_p=2), -np.ones((2, 2)), "pdf")


# -- Wigner functions --------------------------------------------------------------


def test_ground_state_profile():
    w = wigner(fock_state(0, 60))
    xg, pg = GRID.mesh()
    np.testing.assert_allclose(w.values, np.exp(-xg**2 - pg**2) / math.pi, atol=1e-13)
    assert w.values[100, 100] == pytest.approx(1 / math.pi, abs=1e-12)


def test_thermal_origin():
    n_bar = 1.5415
    w = wigner(thermal_state(n_bar, 120))
    assert w.values[100, 100] == pytest.approx(1 / (math.pi * (2 * n_bar + 1)), abs=1e-9)


def test_fock1_origin_negative():
    w = wigner(fock_state(1, 60))
    assert w.values[100, 100] == pytest.approx(-1 / math.pi, abs=1e-12)


def test_against_integral_transform(rng):
    rho = random_density_matrix(8, rng)
    grid = PhaseSpaceGrid(-2, 2, -2, 2, 5, 5)
    w = wigner(rho, grid, check=False).values
    for i, x in enumerate(grid.xs):
        for j, p in enumerate(grid.ps):
            assert w[i, j] == pytest.approx(wigner_integral(rho, x, p), abs=1e-10)


@pytest.mark.parametrize("dim", [60, 120])
@pytest.mark.parametrize(
    "make",
    [lambda d: thermal_state(1.5, d), lambda d: coherent_state(1.0 + 0.8j, d), lambda d: fock_state(3, d)],
    ids=["thermal", "coherent", "fock3"],
)
def test_normalisation(make, dim):
    w = wigner(make(dim))
    assert abs(w.mass() - 1) <= 1e-2
    assert w.meta["normalization_residual"] == pytest.approx(w.mass() - 1)


def test_coherent_peak_location():
    alpha = 1.0 + 0.5j
    w = wigner(coherent_state(alpha, 60))
    i, j = np.unravel_index(np.argmax(w.values), w.values.shape)
    assert GRID.xs[i] == pytest.approx(math.sqrt(2) * alpha.real, abs=GRID.dx)
    assert GRID.ps[j] == pytest.approx(math.sqrt(2) * alpha.imag, abs=GRID.dp)


def test_position_marginal_of_ground_state():
    w = wigner(fock_state(0, 60))
    marginal = w.values.sum(axis=1) * GRID.dp
    exact = np.exp(-GRID.xs**2) / math.sqrt(math.pi)
    l1 = np.sum(np.abs(marginal - exact)) * GRID.dx
    assert l1 <= 0.01


def test_batch_matches_single(rng):
    rhos = [random_density_matrix(12, rng) for _ in range(3)]
    many = wigner_many(rhos, GRID)
    for rho, f in zip(rhos, many):
        np.testing.assert_allclose(f.values, wigner(rho, GRID).values, atol=1e-14)
    assert wigner_many([], GRID) == []


def test_small_grid_warns():
    with pytest.warns(NormalizationWarning):
        wigner(thermal_state(2.0, 60), PhaseSpaceGrid(-1, 1, -1, 1, 21, 21))


def test_mismatched_batch():
    with pytest.raises(ValueError):
        wigner_many([fock_state(0, 4), fock_state(0, 5)])


# -- histograms ----------------------------------------------------------------


def test_single_particle_cell():
    f = ensemble_field([0.3], [-1.2], [1.0])
    assert np.count_nonzero(f.values) == 1
    assert f.values.max() == pytest.approx(1 / GRID.cell_area)
    i, j = np.argwhere(f.values)[0]
    assert GRID.xs[i] == pytest.approx(0.3) and GRID.ps[j] == pytest.approx(-1.2)


def test_cell_edge_is_lower_inclusive():
    grid = PhaseSpaceGrid(0.0, 4.0, 0.0, 4.0, 5, 5)
    # cells are centred on grid points, so x = 0.5 is the lower edge of the cell around x = 1
    f = ensemble_field([0.5], [1.5], [1.0], grid)
    assert tuple(np.argwhere(f.values)[0]) == (1, 2)


def test_out_of_bounds_reported():
    f = ensemble_field([0.0, 10.0, -6.02], [0.0, 0.0, 0.0], [0.5, 0.3, 0.2])
    assert f.meta["out_of_bounds_count"] == 1
    assert f.meta["out_of_bounds_mass"] == pytest.approx(0.3)
    assert f.mass() == pytest.approx(0.7, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.5, 5.0))
@settings(max_examples=30, deadline=None)
def test_histogram_mass_conservation(seed, scale):
    rng = np.random.default_rng(seed)
    n = 500
    w = rng.random(n)
    w /= w.sum()
    f = ensemble_field(rng.standard_normal(n) * scale, rng.standard_normal(n) * scale, w)
    assert f.mass() + f.meta["out_of_bounds_mass"] == pytest.approx(1.0, abs=1e-9)


# -- positive part and KL ------------------------------------------------------------


def test_positive_part_of_fock1():
    f = positive_part(wigner(fock_state(1, 60)))
    assert f.values[100, 100] == 0.0
    assert f.mass() == pytest.approx(1.0, abs=1e-12)
    assert f.meta["clipped_mass"] > 0


def test_positive_part_identity_on_positive_field():
    w = wigner(fock_state(0, 30))
    f = positive_part(w)
    np.testing.assert_allclose(f.values, w.values / w.mass(), rtol=1e-14)


def test_positive_part_single_negative_cell():
    grid = PhaseSpaceGrid(0, 1, 0, 1, 3, 3)
    area, eps = grid.cell_area, 0.01
    vals = np.full((3, 3), (1.0 + eps * area) / (8 * area))
    vals[1, 1] = -eps
    field = PhaseSpaceField(grid, vals, "wigner")
    assert field.mass() == pytest.approx(1.0, abs=1e-14)
    f = positive_part(field)
    assert f.values[1, 1] == 0.0
    expected = vals / (1.0 + eps * area)
    expected[1, 1] = 0.0
    np.testing.assert_allclose(f.values, expected, rtol=1e-14)


def test_positive_part_requires_wigner():
    with pytest.raises(ValueError):
        positive_part(gaussian_field(GRID, 0, 0))


def test_kl_self_is_zero():
    f = gaussian_field(GRID, 0.3, -0.2)
    assert kl_divergence(f, f) == 0.0


def test_kl_gaussian_offset():
    grid = PhaseSpaceGrid(-8, 8, -8, 8, 401, 401)
    delta = 0.5
    kl = kl_divergence(gaussian_field(grid, 0, 0), gaussian_field(grid, delta, 0))
    assert kl == pytest.approx(delta**2 / 2, abs=0.01)


def test_kl_disjoint_cells_use_floor():
    grid = PhaseSpaceGrid(0, 1, 0, 1, 2, 2)
    a = np.zeros((2, 2))
    b = np.zeros((2, 2))
    a[0, 0] = b[1, 1] = 1.0 / grid.cell_area
    kl = kl_divergence(PhaseSpaceField(grid, a), PhaseSpaceField(grid, b))
    assert kl == pytest.approx(math.log(1.0 / KL_FLOOR_MASS), rel=1e-12)
    assert math.isfinite(kl)


def test_kl_input_checks():
    f = gaussian_field(GRID, 0, 0)
    with pytest.raises(GridMismatchError):
        kl_divergence(f, gaussian_field(PhaseSpaceGrid(n_x=101), 0, 0))
    with pytest.raises(ValueError):
        kl_divergence(PhaseSpaceField(GRID, f.values * 2), f)


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.5, 2.0))
@settings(max_examples=25, deadline=None)
def test_kl_non_negative(mx, mp, var):
    grid = PhaseSpaceGrid(n_x=61, n_p=61)
    kl = kl_divergence(gaussian_field(grid, 0, 0), gaussian_field(grid, mx, mp, var))
    assert kl >= 0.0


# -- trajectory errors --------------------------------------------------------------


def test_error_stats_identical_and_offset():
    truth = log(np.sin(np.arange(50.0)))
    assert trajectory_error_stats(truth, truth, 0) == (0.0, 0.0)
    shifted = TrajectoryLog(truth.times, truth.mean_x + 0.7, truth.mean_p - 0.2)
    assert trajectory_error_stats(truth, shifted, 0) == pytest.approx((0.0, 0.0), abs=1e-15)


def test_error_stats_alternating():
    truth = log(np.zeros(40))
    c = 0.3
    alt = TrajectoryLog(truth.times, c * (-1.0) ** np.arange(40), np.zeros(40))
    sx, sp = trajectory_error_stats(truth, alt, 0)
    assert sx == pytest.approx(c) and sp == 0.0


def test_error_stats_discard_and_mismatch():
    truth = log(np.zeros(30))
    est = TrajectoryLog(truth.times, np.r_[np.full(20, 5.0), np.zeros(10)], np.zeros(30))
    assert trajectory_error_stats(truth, est, 20.0) == (0.0, 0.0)
    assert all(math.isnan(v) for v in trajectory_error_stats(truth, est, 100.0))
    with pytest.raises(ValueError):
        trajectory_error_stats(truth, log(np.zeros(10)), 0)

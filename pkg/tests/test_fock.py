import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qtrack.errors import InvalidDimensionError, InvalidParamsError
from qtrack.fock import (
    TruncationWarning,
    build_ladder_ops,
    build_quadratures,
    check_truncation,
    coherent_state,
    density_matrix_violations,
    expectation,
    fock_state,
    maximally_mixed,
    number_operator,
    purity,
    thermal_state,
)
from qtrack.params import ModelParams, auto_dim, thermal_occupancy

from conftest import random_density_matrix


# -- oracles -----------------------------------------------------------------


def thermal_series_mean(n_bar, dim):
    """Mean of the truncated geometric distribution, summed term by term."""
    r = n_bar / (n_bar + 1.0)
    weights = [r**n for n in range(dim)]
    return sum(n * w for n, w in enumerate(weights)) / sum(weights)


# -- ladder operators ----------------------------------------------------------


def test_ladder_dim2():
    a, ad = build_ladder_ops(2)
    np.testing.assert_array_equal(a, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(ad, a.conj().T)


def test_ladder_dim3_entry():
    a, _ = build_ladder_ops(3)
    assert a[1, 2] == pytest.approx(1.41421356, abs=1e-8)


@pytest.mark.parametrize("dim", [2, 16, 100])
def test_number_spectrum_from_product(dim):
    a, ad = build_ladder_ops(dim)
    n = ad @ a
    np.testing.assert_allclose(n, np.diag(np.arange(dim)), rtol=0, atol=1e-12)
    np.testing.assert_array_equal(np.diag(number_operator(dim)).real, np.arange(dim))


@pytest.mark.parametrize("bad", [1, 0, -3, 2.5])
def test_invalid_dimension(bad):
    with pytest.raises(InvalidDimensionError):
        build_ladder_ops(bad)


# -- quadratures ---------------------------------------------------------------


def test_quadratures_dim2():
    x, p = build_quadratures(2)
    s = 1 / math.sqrt(2)
    np.testing.assert_allclose(x, [[0, s], [s, 0]], atol=1e-15)
    np.testing.assert_allclose(p, p.conj().T, atol=1e-15)


@pytest.mark.parametrize("dim", [16, 60, 120])
def test_commutator_interior(dim):
    x, p = build_quadratures(dim)
    c = (x @ p - p @ x) / 1j
    inner = c[: dim - 1, : dim - 1]
    assert np.max(np.abs(inner - np.eye(dim - 1))) <= 1e-12
    # the truncation pushes the whole defect into the last diagonal entry
    assert c[dim - 1, dim - 1] == pytest.approx(1 - dim, abs=1e-12)
    assert np.trace(c) == pytest.approx(0.0, abs=1e-10)


@given(st.integers(min_value=2, max_value=40))
@settings(max_examples=25, deadline=None)
def test_quadratures_hermitian_and_number_identity(dim):
    x, p = build_quadratures(dim)
    assert np.max(np.abs(x - x.conj().T)) <= 1e-12
    assert np.max(np.abs(p - p.conj().T)) <= 1e-12
    # (x² + p²)/2 = a†a + 1/2 away from the truncation edge
    h = 0.5 * (x @ x + p @ p)
    np.testing.assert_allclose(np.diag(h)[:-1].real, np.arange(dim - 1) + 0.5, atol=1e-12)


# -- expectation, purity and reference states ------------------------------------


def test_expectation_identity(rng):
    rho = random_density_matrix(8, rng)
    assert expectation(np.eye(8), rho) == pytest.approx(1.0, abs=1e-12)


def test_expectation_dim_mismatch():
    with pytest.raises(InvalidDimensionError):
        expectation(np.eye(3), np.eye(4) / 4)


def test_ground_state_position_zero():
    x, _ = build_quadratures(20)
    assert expectation(x, fock_state(0, 20)) == 0


@given(st.integers(min_value=2, max_value=30), st.integers(min_value=0, max_value=2**31))
@settings(max_examples=30, deadline=None)
def test_expectation_matches_trace_product(dim, seed):
    rng = np.random.default_rng(seed)
    rho = random_density_matrix(dim, rng)
    x, _ = build_quadratures(dim)
    val = expectation(x, rho)
    assert val == pytest.approx(np.trace(x @ rho), abs=1e-12)
    assert abs(val.imag) <= 1e-10


def test_thermal_mean_and_purity_dim100():
    rho = thermal_state(1.5, 100)
    mean = expectation(number_operator(100), rho).real
    assert mean == pytest.approx(1.5, abs=1e-6)
    assert mean == pytest.approx(thermal_series_mean(1.5, 100), abs=1e-12)
    assert purity(rho) == pytest.approx(1 / (2 * 1.5 + 1), abs=1e-6)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-15)


def test_thermal_zero_is_ground():
    np.testing.assert_array_equal(thermal_state(0.0, 5), fock_state(0, 5))


def test_thermal_rejects_negative():
    with pytest.raises(ValueError):
        thermal_state(-0.1, 10)


def test_thermal_truncation_error_monotone():
    errs = [abs(expectation(number_operator(d), thermal_state(3.0, d)).real - 3.0) for d in (10, 20, 40, 80)]
    assert all(a > b for a, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("dim", [2, 10, 100])
def test_maximally_mixed_purity(dim):
    assert purity(maximally_mixed(dim)) == pytest.approx(1.0 / dim, rel=1e-12)


def test_pure_ground_purity():
    assert purity(fock_state(0, 10)) == 1.0


def test_coherent_state_moments():
    alpha = 1.2 - 0.7j
    rho = coherent_state(alpha, 60)
    x, p = build_quadratures(60)
    assert expectation(x, rho).real == pytest.approx(math.sqrt(2) * alpha.real, abs=1e-10)
    assert expectation(p, rho).real == pytest.approx(math.sqrt(2) * alpha.imag, abs=1e-10)
    assert purity(rho) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize(
    "state",
    [thermal_state(2.0, 40), fock_state(3, 40), coherent_state(1 + 1j, 40), maximally_mixed(40)],
    ids=["thermal", "fock", "coherent", "mixed"],
)
def test_reference_states_are_valid(state):
    assert density_matrix_violations(state) == []


def test_violations_detect_each_failure():
    rho = np.diag([1.2, -0.2]).astype(complex)
    msgs = density_matrix_violations(rho)
    assert any("smallest eigenvalue" in m for m in msgs)
    rho = np.array([[0.5, 0.1], [0.0, 0.6]], dtype=complex)
    msgs = density_matrix_violations(rho)
    assert any("hermiticity" in m for m in msgs)
    assert any("trace" in m for m in msgs)


def test_truncation_warning():
    with pytest.warns(TruncationWarning):
        check_truncation(maximally_mixed(20))
    check_truncation(fock_state(0, 20))


# -- parameters ------------------------------------------------------------------


@pytest.mark.parametrize(
    "kbt, expected",
    [(0.0, 0.0), (2.0, 1.0 / (math.exp(0.5) - 1.0)), (0.25, 1.0 / (math.exp(4.0) - 1.0))],
)
def test_thermal_occupancy(kbt, expected):
    assert thermal_occupancy(kbt, 1.0) == pytest.approx(expected, rel=1e-14)


def test_thermal_occupancy_values():
    assert thermal_occupancy(2.0) == pytest.approx(1.5415, abs=1e-4)
    assert thermal_occupancy(0.25) == pytest.approx(0.01866, abs=1e-5)


def test_params_collect_all_violations():
    with pytest.raises(InvalidParamsError) as info:
        ModelParams(eta=1.5, k=-1.0, damping=0.0, dim=1)
    assert len(info.value.violations) == 4
    assert any("η ∈ (0,1]" in v for v in info.value.violations)


def test_params_digest_stable():
    a, b = ModelParams(), ModelParams()
    assert a.digest() == b.digest()
    assert a.digest() != ModelParams(kbt=1.0).digest()


@pytest.mark.parametrize("kbt, dim", [(0.0, 60), (0.25, 60), (1.0, 80), (1.25, 90), (2.0, 120), (5.0, 120)])
def test_auto_dim(kbt, dim):
    assert auto_dim(kbt) == dim

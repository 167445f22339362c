import numpy as np
import pytest

from rmm_interp.conductivity import (
    ConductivityField,
    build_kl_basis,
    correlation_matrix,
    export_kl,
    kappa,
    kl_decompose,
    mean_conductivity,
    sigma_y,
    standard_normal_draws,
    temperature_grid,
    truncation_for_fraction,
)
from rmm_interp.model_api import InvalidArgumentError


@pytest.fixture(scope="module")
def full_kl():
    return build_kl_basis()


def test_trace_equals_node_count(full_kl):
    assert full_kl.total_variance == pytest.approx(600.0, rel=1e-8)
    assert full_kl.d == 11
    assert full_kl.modes.shape == (600, 11)
    assert np.all(np.diff(full_kl.kl_eigs) <= 0)


def test_modes_are_orthonormal(full_kl):
    np.testing.assert_allclose(full_kl.modes.T @ full_kl.modes, np.eye(11), atol=1e-10)


def test_captured_fraction_reported(full_kl):
    assert 0.0 < full_kl.captured_fraction < 1.0
    assert full_kl.captured_fraction == pytest.approx(full_kl.kl_eigs.sum() / 600.0)
    assert full_kl.truncation_for_fraction(full_kl.captured_fraction) == 11


def test_mean_branches():
    zero = np.zeros(11)
    kl = build_kl_basis(n_nodes=100)
    assert kappa(900.0, zero, kl) == pytest.approx(27.30, abs=1e-12)
    assert kappa(300.0, zero, kl) == pytest.approx(44.01, abs=1e-12)


def test_mean_trend_jump_at_breakpoint():
    jump = float(mean_conductivity(800.0 - 1e-9) - mean_conductivity(800.0))
    assert jump == pytest.approx(-0.0333 * 800 + 54 - 27.30, abs=1e-6)
    assert jump == pytest.approx(0.06, abs=1e-6)


def test_sigma_y():
    assert sigma_y(0.0) == pytest.approx(0.08)
    assert sigma_y(400.0) == pytest.approx(0.16)


def test_kappa_positive_for_random_inputs(rng, small_kl):
    T = rng.uniform(0.0, 1250.0, 1000)
    for s in standard_normal_draws(5, 100, small_kl.d):
        assert np.all(ConductivityField(small_kl, 3.0 * s)(T) > 0)


def test_out_of_range_temperature_is_clamped(small_kl):
    s = np.ones(small_kl.d)
    values, clamped = kappa(np.array([-50.0, 1300.0]), s, small_kl, return_flag=True)
    assert clamped
    inside = kappa(np.array([0.0, 1250.0]), s, small_kl)
    np.testing.assert_allclose(values, inside)


def test_parameter_dimension_checked(small_kl):
    with pytest.raises(InvalidArgumentError):
        ConductivityField(small_kl, np.zeros(small_kl.d + 1))


def test_correlation_matrix_properties():
    grid = temperature_grid(50)
    C = correlation_matrix(grid)
    np.testing.assert_allclose(np.diag(C), 1.0)
    np.testing.assert_allclose(C, C.T)
    with pytest.raises(InvalidArgumentError):
        correlation_matrix(grid, corr_length=0.0)


def test_decompose_rejects_bad_input():
    C = correlation_matrix(temperature_grid(20))
    with pytest.raises(InvalidArgumentError):
        kl_decompose(C, d=21)
    bad = C.copy()
    bad[0, 1] += 1e-3
    with pytest.raises(InvalidArgumentError):
        kl_decompose(bad, d=3)


def test_truncation_for_fraction():
    eigs = np.array([4.0, 3.0, 2.0, 1.0])
    assert truncation_for_fraction(eigs, 0.4) == 1
    assert truncation_for_fraction(eigs, 0.7) == 2
    assert truncation_for_fraction(eigs, 1.0) == 4
    with pytest.raises(InvalidArgumentError):
        truncation_for_fraction(eigs, 0.0)


def test_draws_are_reproducible_and_standard():
    a = standard_normal_draws(7, 4000, 11)
    b = standard_normal_draws(7, 4000, 11)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (4000, 11)
    assert abs(a.mean()) < 0.02
    assert a.std() == pytest.approx(1.0, abs=0.02)
    assert not np.array_equal(a, standard_normal_draws(8, 4000, 11))
    # 样本数不影响前面的样本
    np.testing.assert_array_equal(standard_normal_draws(7, 10, 11), a[:10])


def test_export_writes_csv_files(tmp_path, small_kl):
    written = export_kl(small_kl, tmp_path, realizations=5, seed=1)
    assert [p.name for p in written] == ["kl_modes.csv", "kl_eigenvalues.csv", "realizations.csv"]
    modes = np.loadtxt(tmp_path / "kl_modes.csv", delimiter=",", skiprows=1)
    assert modes.shape == (60, small_kl.d + 1)
    realizations = np.loadtxt(tmp_path / "realizations.csv", delimiter=",", skiprows=1)
    assert realizations.shape == (60, 6)
    assert np.all(realizations[:, 1:] > 0)
    eigs = np.loadtxt(tmp_path / "kl_eigenvalues.csv", delimiter=",", skiprows=1)
    assert eigs[-1, 2] == pytest.approx(small_kl.captured_fraction)

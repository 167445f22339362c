import numpy as np
import pytest
from pydantic import ValidationError

from rmm_interp.kinetics import (
    S_MAX,
    S_MIN,
    KineticsParams,
    initial_state,
    kinetics_forcing,
    kinetics_jacobian,
    param_grid,
)
from rmm_interp.model_api import InvalidArgumentError, make_time_grid
from rmm_interp.ode_integrator import integrate


def test_forcing_at_initial_state():
    np.testing.assert_allclose(kinetics_forcing(np.array([0.5, 0.5, 0.5]), 0.0, 1.0), [-1.25, 3.0, 0.0])


def test_forcing_only_quadratic_v_terms_survive():
    np.testing.assert_allclose(kinetics_forcing(np.array([0.0, 1.0, 0.0]), 0.0, 0.005), [1000.0, -2000.0, 0.0])


def test_forcing_accepts_batches():
    x = np.array([[0.5, 0.5, 0.5], [0.0, 1.0, 0.0]])
    out = kinetics_forcing(x, np.zeros(2), np.array([1.0]))
    np.testing.assert_allclose(out[0], kinetics_forcing(x[0], 0.0, 1.0))
    np.testing.assert_allclose(out[1], kinetics_forcing(x[1], 0.0, 1.0))


def test_forcing_rejects_non_positive_stiffness():
    with pytest.raises(InvalidArgumentError):
        kinetics_forcing(np.ones(3), 0.0, 0.0)


def test_jacobian_at_origin_is_linear_part():
    J = kinetics_jacobian(np.zeros(3), 1.0)
    assert J[0, 0] == pytest.approx(-6.0)
    np.testing.assert_allclose(J, [[-6.0, 0.0, 1.0], [11.0, 0.0, 1.0], [1.0, 0.0, -1.0]])


def test_jacobian_matches_forward_difference(rng):
    eps = 1e-6
    for _ in range(20):
        x = rng.uniform(0.0, 1.0, 3)
        v = rng.standard_normal(3)
        s = rng.uniform(0.1, S_MAX)
        fd = (kinetics_forcing(x + eps * v, 0.0, s) - kinetics_forcing(x, 0.0, s)) / eps
        np.testing.assert_allclose(fd, kinetics_jacobian(x, s) @ v, atol=1e-4 * (1 + np.abs(fd).max()))


def test_param_grid_ends_at_upper_bound():
    grid = param_grid(300)
    assert grid.size == 300
    assert grid[0] == pytest.approx(S_MIN + (S_MAX - S_MIN) / 300)
    assert grid[-1] == S_MAX
    assert np.all(np.diff(grid) > 0)


def test_params_validated_against_range():
    assert KineticsParams(s=0.5).x0 == (0.5, 0.5, 0.5)
    with pytest.raises(ValidationError):
        KineticsParams(s=2.0)


def test_stiff_end_needs_more_steps(kinetics):
    grid = make_time_grid(0.0, 1.0, 50)
    stiff = integrate(kinetics, initial_state(), [S_MIN], grid)
    mild = integrate(kinetics, initial_state(), [S_MAX], grid)
    assert np.all(np.isfinite(stiff.states)) and np.all(np.isfinite(mild.states))
    assert stiff.n_steps > 3 * mild.n_steps

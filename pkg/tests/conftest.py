import numpy as np
import pytest
import scipy.optimize

from rmm_interp.basis import assemble_basis, build_snapshot
from rmm_interp.conductivity import build_kl_basis
from rmm_interp.heat_model import HeatDomain
from rmm_interp.kinetics import S_MAX, S_MIN, initial_state, kinetics_forcing, kinetics_model
from rmm_interp.model_api import ModelSystem, make_time_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def kinetics():
    return kinetics_model()


@pytest.fixture(scope="session")
def coarse_grid():
    return make_time_grid(0.0, 1.0, 20)


@pytest.fixture(scope="session")
def endpoint_basis(kinetics, coarse_grid):
    """动力学两个端点参数上的基"""
    snapshots = [
        build_snapshot(kinetics, [s], initial_state(), coarse_grid, snapshot_id=f"s_{s}")
        for s in (S_MIN, S_MAX)
    ]
    return assemble_basis(snapshots)


@pytest.fixture
def decay_model():
    """x' = -s x，逐分量衰减，非向量化"""
    return ModelSystem(
        name="decay",
        state_dim=2,
        param_dim=1,
        forcing=lambda x, t, s: -s[0] * x,
    )


@pytest.fixture(scope="session")
def small_domain():
    return HeatDomain(nx=6, ny=8)


@pytest.fixture(scope="session")
def small_kl():
    return build_kl_basis(n_nodes=60, d=3)


def _line_rho(basis, s, a1):
    """约束直线 a = (a1, 1 - a1) 上的 ρ，对 a1 向量化"""
    a1 = np.atleast_1d(a1)
    coeffs = np.column_stack([a1, 1.0 - a1])
    states = np.einsum("kn,nmp->kmp", coeffs, basis.X_hist)
    derivative = np.einsum("kn,nmp->kmp", coeffs, basis.F_hist)
    forcing = kinetics_forcing(states, None, s)
    h = (derivative - forcing) * basis.grid.weights[None, :, None]
    return np.sum(h * h, axis=(1, 2))


@pytest.fixture(scope="session")
def line_minimum():
    """两元素动力学基上 ρ 的全局最小值：密集扫描后局部细化"""

    def minimum(basis, s):
        grid = np.arange(-2.0, 3.0 + 1e-12, 2e-4)
        values = _line_rho(basis, s, grid)
        best = grid[int(np.argmin(values))]
        refined = scipy.optimize.minimize_scalar(
            lambda x: float(_line_rho(basis, s, x)[0]),
            bounds=(best - 2e-4, best + 2e-4),
            method="bounded",
            options={"xatol": 1e-12},
        )
        return min(float(refined.fun), float(values.min()))

    return minimum

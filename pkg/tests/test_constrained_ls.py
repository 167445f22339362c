import numpy as np
import pytest
import scipy.linalg

from rmm_interp.constrained_ls import (
    lagrange_ladder,
    solve_full,
    solve_rank_deficient,
    solve_truncated,
)
from rmm_interp.model_api import InvalidArgumentError
from rmm_interp.schemas import TauMode


def _nullspace_reference(R: np.ndarray) -> np.ndarray:
    """零空间法：a = e/n + Q2 z，z 为无约束最小二乘解"""
    n = R.shape[1]
    e = np.ones(n)
    q, _ = np.linalg.qr(e[:, None], mode="complete")
    q2 = q[:, 1:]
    z, *_ = np.linalg.lstsq(R @ q2, -R @ e / n, rcond=None)
    return e / n + q2 @ z


def _graded(rng, q, n, decades):
    u, _ = np.linalg.qr(rng.standard_normal((q, n)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return u @ np.diag(np.logspace(0, -decades, n)) @ v.T


def test_diagonal_example():
    sol = solve_full(np.diag([1.0, 2.0]))
    np.testing.assert_allclose(sol.a, [0.8, 0.2])
    assert sol.lagrange == pytest.approx(0.8)
    assert sol.truncation_rank == 2
    assert sol.cond_full == pytest.approx(2.0)
    assert not sol.rank_deficient


def test_near_singular_direction_is_kept_alone():
    R = np.diag([1.0, 1e-6])
    sol = solve_truncated(R, tau=1e-8, tau_mode=TauMode.ABSOLUTE)
    assert sol.truncation_rank == 1
    np.testing.assert_allclose(sol.a, [0.0, 1.0], atol=1e-12)
    assert np.linalg.norm(R @ sol.a) == pytest.approx(1e-6)
    assert sol.cond_used == pytest.approx(1.0)
    assert sol.cond_full == pytest.approx(1e6)


def test_ladder_values():
    ladder = lagrange_ladder(np.diag([1.0, 2.0]))
    assert ladder.shape == (2,)
    np.testing.assert_allclose(ladder, [1.0, 0.8])


def test_single_column():
    sol = solve_truncated(np.array([[3.0], [4.0]]))
    np.testing.assert_allclose(sol.a, [1.0])
    assert sol.lagrange == pytest.approx(25.0)
    assert sol.truncation_rank == 1


def test_full_solution_matches_nullspace_method(rng):
    for _ in range(50):
        q = int(rng.integers(3, 40))
        n = int(rng.integers(2, min(q, 12) + 1))
        R = rng.standard_normal((q, n))
        sol = solve_full(R)
        ref = _nullspace_reference(R)
        assert sol.a.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(sol.a, ref, rtol=1e-7, atol=1e-9)
        assert sol.lagrange == pytest.approx(float(np.sum((R @ sol.a) ** 2)), rel=1e-8)


def test_lagrange_identity_and_minimal_truncation(rng):
    tau = 1e-6
    for _ in range(1000):
        q = int(rng.integers(12, 50))
        n = int(rng.integers(2, 13))
        R = _graded(rng, q, n, decades=int(rng.integers(1, 7)))
        sol = solve_truncated(R, tau=tau, tau_mode=TauMode.ABSOLUTE)
        ladder = lagrange_ladder(R)
        k = sol.truncation_rank

        assert sol.a.sum() == pytest.approx(1.0, abs=1e-10)
        assert sol.lagrange == pytest.approx(float(np.sum((R @ sol.a) ** 2)), rel=1e-8)
        assert abs(sol.lagrange - sol.lambda_full) < tau
        assert sol.lagrange - sol.lambda_full == pytest.approx(ladder[k - 1] - ladder[-1], rel=1e-6, abs=1e-14)
        # 更小的截断数都不满足容差
        assert all(abs(ladder[j] - ladder[-1]) >= tau for j in range(k - 1))


def test_relative_tau_scales_with_residual():
    R = np.diag([1.0, 2.0])
    absolute = solve_truncated(R, tau=0.15, tau_mode=TauMode.ABSOLUTE)
    relative = solve_truncated(R, tau=0.15, tau_mode=TauMode.RELATIVE)
    # |λ_1 - λ_2| = 0.2；相对模式下 τ_eff = 0.15 · 1.8 = 0.27
    assert absolute.truncation_rank == 2
    assert relative.truncation_rank == 1
    assert relative.tau_used == pytest.approx(0.27)


def test_wide_matrix_is_rank_deficient():
    R = np.array([[1.0, 2.0, 3.0]])
    sol = solve_truncated(R)
    assert sol.rank_deficient
    assert sol.lagrange == 0.0
    assert sol.a.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(R @ sol.a, 0.0, atol=1e-12)


def test_zero_column_gives_exact_fit():
    R = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    sol = solve_rank_deficient(R)
    assert sol.rank_deficient
    np.testing.assert_allclose(sol.a, [0.0, 1.0], atol=1e-12)
    assert sol.lagrange == 0.0
    assert sol.cond_used == float("inf")


def test_null_space_orthogonal_to_constraint():
    c = np.array([1.0, -1.0, 2.0])
    R = np.column_stack([c, c])
    sol = solve_truncated(R)
    assert sol.rank_deficient
    np.testing.assert_allclose(sol.a, [0.5, 0.5], atol=1e-12)
    assert sol.lagrange == pytest.approx(float(c @ c))


def test_duplicate_columns_do_not_break_minimizer(rng):
    base = rng.standard_normal((10, 3))
    R = np.column_stack([base, base[:, 0]])
    sol = solve_truncated(R)
    assert sol.rank_deficient
    assert sol.a.sum() == pytest.approx(1.0)
    # 与去掉重复列后的最优值一致
    reduced = solve_full(base)
    assert float(np.sum((R @ sol.a) ** 2)) == pytest.approx(reduced.lagrange, rel=1e-8)


def test_rejects_negative_tau_and_non_finite():
    with pytest.raises(InvalidArgumentError):
        solve_truncated(np.eye(2), tau=-1.0)
    with pytest.raises(InvalidArgumentError):
        solve_truncated(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(InvalidArgumentError):
        solve_truncated(np.zeros((0, 2)))


def test_condition_numbers_from_singular_values(rng):
    R = rng.standard_normal((6, 4))
    sol = solve_full(R)
    sigma = scipy.linalg.svdvals(R)
    assert sol.sigma_min == pytest.approx(sigma[-1])
    assert sol.cond_full == pytest.approx(sigma[0] / sigma[-1])

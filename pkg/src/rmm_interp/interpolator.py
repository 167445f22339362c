"""
残差最小化插值

近似 x̃(t, s) = X(t) a，e^T a = 1，系数 a 使离散残差
    ρ(a) = Σ_i w_i^2 ||F_i a - f(X_i a, t_i, s)||^2
最小。Newton 迭代的每一步都是一个带约束的线性最小二乘问题。
"""
import logging
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from .basis import BasisSet
from .constrained_ls import CLSSolution, solve_truncated
from .model_api import (
    EvalCounter,
    EvaluationError,
    InvalidArgumentError,
    ModelSystem,
    eval_counted_batch,
)
from .schemas import Damping
from .schemas.options import NewtonOptions
from .schemas.results import InterpolationResult, IterationRecord

logger = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-10
MAX_STALLED = 3
# 步长停滞时，线性化问题的最优值与当前残差的相对差距不超过该值才视为收敛
STATIONARY_RTOL = 1e-8


class Residual(NamedTuple):
    h: np.ndarray  # (mp,) 加权残差向量
    rho: float  # ||h||^2
    forcing: np.ndarray  # (m, p) f(X_i a, t_i, s)
    states: np.ndarray  # (m, p) X_i a


class NewtonSystem(NamedTuple):
    R: np.ndarray  # (mp, n) Newton 矩阵 R_k
    J: np.ndarray  # (mp, n) 有限差分雅可比 J_k


def _check_coefficients(basis: BasisSet, a) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != basis.n:
        raise InvalidArgumentError(f"系数个数应为 {basis.n}，实际为 {a.size}")
    if abs(a.sum() - 1.0) > CONSTRAINT_TOL:
        raise InvalidArgumentError(f"系数不满足仿射约束: e^T a - 1 = {a.sum() - 1.0:.3e}")
    return a


def _first_bad_row(values: np.ndarray) -> int:
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=-1))
    return int(bad[0]) if bad.size else -1


def evaluate_history(basis: BasisSet, a) -> np.ndarray:
    """全部时间点上的 x̃(t_i) = X_i a，形状 (m, p)"""
    a = _check_coefficients(basis, a)
    return np.tensordot(a, basis.X_hist, axes=1)


def evaluate_state(basis: BasisSet, a, i: int) -> np.ndarray:
    """
    重构第 i 个时间点的状态 x̃(t_i) = X_i a
    Args:
        basis: 基
        a: 仿射系数
        i: 时间下标

    Returns: (p,) 状态

    """
    a = _check_coefficients(basis, a)
    if not 0 <= i < basis.m:
        raise InvalidArgumentError(f"时间下标 {i} 超出范围 [0, {basis.m})")
    return basis.X_hist[:, i, :].T @ a


def residual(
        basis: BasisSet,
        a,
        s,
        model: ModelSystem,
        counter: Optional[EvalCounter] = None,
) -> Residual:
    """
    离散残差 h(a) = F a - φ(a)，第 i 块为 w_i (F_i a - f(X_i a, t_i, s))
    Args:
        basis: 基
        a: 满足 e^T a = 1 的系数
        s: 查询参数
        model: 动力系统
        counter: 计数器，增加 m

    Returns: Residual(h, rho, forcing, states)

    """
    a = _check_coefficients(basis, a)
    s = np.asarray(s, dtype=float).reshape(-1)
    states = np.tensordot(a, basis.X_hist, axes=1)
    forcing = eval_counted_batch(model, counter, states, basis.grid.points, s)
    bad = _first_bad_row(forcing)
    if bad >= 0:
        raise EvaluationError(f"{model.name}: 残差计算在 t={basis.grid.points[bad]:.6g} 处得到非有限值",
                              time_index=bad)
    derivative = np.tensordot(a, basis.F_hist, axes=1)
    h = (basis.grid.weights[:, None] * (derivative - forcing)).reshape(-1)
    return Residual(h=h, rho=float(h @ h), forcing=forcing, states=states)


def build_newton_matrix(
        basis: BasisSet,
        a_k,
        s,
        model: ModelSystem,
        eps: float = 1e-6,
        base: Optional[Residual] = None,
        counter: Optional[EvalCounter] = None,
) -> NewtonSystem:
    """
    构造 Newton 矩阵 R_k = J_k + (h(a_k) - J_k a_k) e^T

    J_k 的第 j 列为 F e_j 减去 ∇_x f 作用在 x_j(t_i) 上的前向差分，差分步长在每个时间块取
    ε (1 + ||X_i a_k||_∞)，基点值 f(X_i a_k, t_i, s) 取自 base，只新增 n·m 次右端调用。
    Args:
        basis: 基
        a_k: 当前系数
        s: 查询参数
        model: 动力系统
        eps: 有限差分步长 ε
        base: a_k 处已算好的残差；为 None 时先计算（另需 m 次调用）
        counter: 计数器

    Returns: NewtonSystem(R, J)

    """
    if not eps > 0:
        raise InvalidArgumentError(f"有限差分步长必须为正，实际为 {eps}")
    a_k = _check_coefficients(basis, a_k)
    s = np.asarray(s, dtype=float).reshape(-1)
    if base is None:
        base = residual(basis, a_k, s, model, counter)
    n, m, p = basis.n, basis.m, basis.p

    steps = eps * (1.0 + np.max(np.abs(base.states), axis=1))  # (m,)
    perturbed = base.states[None, :, :] + steps[None, :, None] * basis.X_hist  # (n, m, p)
    times = np.tile(basis.grid.points, n)
    shifted = eval_counted_batch(model, counter, perturbed.reshape(n * m, p), times, s).reshape(n, m, p)
    bad = _first_bad_row(shifted.reshape(n * m, p))
    if bad >= 0:
        j, i = divmod(bad, m)
        raise EvaluationError(f"{model.name}: 有限差分在 (时间 {i}, 基 {j}) 处得到非有限值",
                              time_index=i, basis_index=j)

    action = (shifted - base.forcing[None, :, :]) / steps[None, :, None]
    weighted = (basis.F_hist - action) * basis.grid.weights[None, :, None]
    J = weighted.reshape(n, m * p).T
    R = J + np.outer(base.h - J @ a_k, np.ones(n))
    return NewtonSystem(R=R, J=J)


def _initial_solution(
        basis: BasisSet,
        s,
        model: ModelSystem,
        opts: NewtonOptions,
        counter: Optional[EvalCounter],
) -> CLSSolution:
    s = np.asarray(s, dtype=float).reshape(-1)
    n, m, p = basis.n, basis.m, basis.p
    times = np.tile(basis.grid.points, n)
    values = eval_counted_batch(model, counter, basis.X_hist.reshape(n * m, p), times, s)
    bad = _first_bad_row(values)
    if bad >= 0:
        j, i = divmod(bad, m)
        raise EvaluationError(f"{model.name}: 初始猜测在 (时间 {i}, 基 {j}) 处得到非有限值",
                              time_index=i, basis_index=j)
    G = (values.reshape(n, m, p) * basis.grid.weights[None, :, None]).reshape(n, m * p).T
    return solve_truncated(basis.stacked_F - G, opts.trunc_tau, opts.tau_mode, opts.rank_tol)


def initial_guess(
        basis: BasisSet,
        s,
        model: ModelSystem,
        opts: Optional[NewtonOptions] = None,
        counter: Optional[EvalCounter] = None,
) -> np.ndarray:
    """
    把问题当作线性问题求初始系数：G 的第 j 列为基轨迹在查询参数下的右端，解 min ||(F - G) a||
    Args:
        basis: 基
        s: 查询参数
        model: 动力系统
        opts: 使用其中的 trunc_tau / tau_mode / rank_tol
        counter: 计数器，增加 n·m

    Returns: a_0，e^T a_0 = 1

    """
    return _initial_solution(basis, s, model, opts or NewtonOptions(), counter).a


def newton_solve(
        basis: BasisSet,
        s,
        model: ModelSystem,
        opts: Optional[NewtonOptions] = None,
        counter: Optional[EvalCounter] = None,
) -> InterpolationResult:
    """
    Newton 迭代 a_{k+1} = argmin ||R_k a||, e^T a = 1
    Args:
        basis: 基
        s: 查询参数
        model: 动力系统
        opts: Newton 选项
        counter: 共享计数器，结束时累加本次调用次数

    Returns: InterpolationResult，系数取迭代中残差最小的点
        converged 仅在 ρ ≤ resid_tol，或步长停滞且线性化问题已无下降空间时为真

    """
    opts = opts or NewtonOptions()
    s = np.asarray(s, dtype=float).reshape(-1)
    resid_tol = opts.resid_tol if opts.resid_tol is not None else 1e-12 * basis.m * basis.p
    local = EvalCounter()

    a = _initial_solution(basis, s, model, opts, local).a
    current = residual(basis, a, s, model, local)
    initial_rho = current.rho
    best_a, best_rho = a, current.rho
    records = []
    converged = current.rho <= resid_tol
    stagnated = False
    stalled = 0
    iteration = 0

    try:
        while not converged and iteration < opts.max_iters:
            before = local.count
            rho_before = current.rho
            system = build_newton_matrix(basis, a, s, model, opts.fd_eps, base=current, counter=local)
            sol = solve_truncated(system.R, opts.trunc_tau, opts.tau_mode, opts.rank_tol)
            direction = sol.a - a

            scale = 1.0
            candidate = residual(basis, sol.a, s, model, local)
            if opts.damping == Damping.HALVING:
                halvings = 0
                while candidate.rho > current.rho and halvings < opts.max_halvings:
                    scale *= 0.5
                    halvings += 1
                    trial = a + scale * direction
                    trial = trial / trial.sum()
                    candidate = residual(basis, trial, s, model, local)
                stalled = stalled + 1 if candidate.rho >= current.rho else 0
            a_next = a + scale * direction if scale < 1.0 else sol.a
            a_next = a_next / a_next.sum()

            newton_step = float(np.linalg.norm(direction))
            jac_norm = float(scipy.linalg.norm(system.J, 2))
            records.append(IterationRecord(
                iteration=iteration,
                rho=current.rho,
                step_norm=float(np.linalg.norm(a_next - a)),
                newton_step_norm=newton_step,
                sigma_min=sol.sigma_min,
                cond=sol.cond_full,
                cond_truncated=sol.cond_used,
                trunc_rank=sol.truncation_rank,
                f_evals=local.count - before,
                jac_norm=jac_norm,
                linear_residual=float(np.sqrt(max(sol.lagrange, 0.0))),
                residual_bound=jac_norm * newton_step + float(np.sqrt(current.rho)),
                step_scale=scale,
            ))
            logger.debug(f"{model.name} s={s.tolist()} 迭代 {iteration}: ρ={current.rho:.3e} -> {candidate.rho:.3e}, "
                         f"步长 {records[-1].step_norm:.3e}, cond={sol.cond_full:.3e}, k={sol.truncation_rank}")

            iteration += 1
            a, current = a_next, candidate
            if current.rho < best_rho:
                best_a, best_rho = a, current.rho
            if current.rho <= resid_tol:
                converged = True
            elif newton_step <= opts.step_tol:
                # Gauss-Newton 驻点：不截断的线性化问题也无法再降低残差
                converged = rho_before - sol.lambda_full <= STATIONARY_RTOL * rho_before + resid_tol
                stagnated = not converged
                if stagnated:
                    logger.warning(f"{model.name} s={s.tolist()}: 步长停滞但线性化残差仍可下降 "
                                   f"(ρ={rho_before:.3e}, λ_n={sol.lambda_full:.3e})，标记为未收敛")
                break
            elif stalled >= MAX_STALLED:
                stagnated = True
                logger.warning(f"{model.name} s={s.tolist()}: 连续 {MAX_STALLED} 次阻尼迭代残差未下降，返回当前最优点")
                break
    except EvaluationError as e:
        e.iteration = iteration
        raise
    finally:
        if counter is not None:
            counter.increment(local.count)

    return InterpolationResult(
        a=best_a,
        rho_star=best_rho,
        iters=iteration,
        per_iter=records,
        converged=converged,
        stagnated=stagnated,
        f_evals=local.count,
        initial_rho=initial_rho,
    )

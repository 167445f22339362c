"""
带单一仿射约束的线性最小二乘

    min ||R a||   s.t.  e^T a = 1

所有求解都基于 R 的一次 SVD：完整解是截断容差 τ=0 的特例，数值秩亏时转入秩亏分支。
"""
import logging
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from .model_api import InvalidArgumentError
from .schemas import TauMode

logger = logging.getLogger(__name__)

DEFAULT_RANK_TOL = 1e-12
DEFAULT_TAU = 1e-10


class CLSSolution(BaseModel):
    """约束最小二乘的解与条件数诊断"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    a: np.ndarray = Field(description="系数，满足 e^T a = 1")
    lagrange: float = Field(description="所选截断下的拉格朗日乘子 λ_k，等于 ||Ra||^2")
    truncation_rank: int = Field(description="保留的尾部奇异方向个数 k")
    lambda_full: float = Field(description="不截断时的 λ_n")
    cond_used: float = Field(description="保留块的条件数 σ_{n-k+1}/σ_n")
    cond_full: float = Field(description="R 的条件数 σ_1/σ_n")
    sigma_min: float = Field(description="R 的最小奇异值 σ_n")
    tau_used: float = Field(default=0.0, description="实际使用的绝对截断容差")
    rank_deficient: bool = Field(default=False, description="是否走了秩亏分支")


def _svd(R: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    返回补零到 n 个的奇异值（降序）和完整的 n×n 右奇异向量矩阵 V
    """
    q, n = R.shape
    full = q < n
    try:
        _, sigma, vt = scipy.linalg.svd(R, full_matrices=full, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.debug("gesdd 未收敛，改用 gesvd")
        _, sigma, vt = scipy.linalg.svd(R, full_matrices=full, lapack_driver="gesvd")
    if sigma.size < n:
        sigma = np.concatenate([sigma, np.zeros(n - sigma.size)])
    return sigma, vt.T


def _check_matrix(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[1] < 1 or R.shape[0] < 1:
        raise InvalidArgumentError(f"R 必须是非空二维矩阵，实际形状为 {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidArgumentError("R 包含非有限值")
    return R


def _ladder(sigma: np.ndarray, d: np.ndarray) -> np.ndarray:
    """λ_j = 1 / ||Σ_j^{-1} d_j||^2，j=1..n 依次保留最后 j 个奇异方向"""
    with np.errstate(divide="ignore"):
        tail = np.cumsum(((d / sigma) ** 2)[::-1])
        return 1.0 / tail


def lagrange_ladder(R: np.ndarray) -> np.ndarray:
    """
    计算满秩 R 的拉格朗日乘子阶梯
    Args:
        R: (q, n) 矩阵

    Returns: 长度 n 的数组，第 j-1 个元素为 λ_j

    """
    R = _check_matrix(R)
    sigma, v = _svd(R)
    return _ladder(sigma, v.T @ np.ones(R.shape[1]))


def _single_column(R: np.ndarray) -> CLSSolution:
    norm = float(np.linalg.norm(R[:, 0]))
    return CLSSolution(
        a=np.ones(1),
        lagrange=norm ** 2,
        truncation_rank=1,
        lambda_full=norm ** 2,
        cond_used=1.0,
        cond_full=1.0,
        sigma_min=norm,
    )


def _numerical_rank(sigma: np.ndarray, rank_tol: float) -> int:
    if sigma[0] <= 0:
        return 0
    return int(np.count_nonzero(sigma > rank_tol * sigma[0]))


def _cond(num: float, den: float) -> float:
    return float(num / den) if den > 0 else float("inf")


def _deficient(R: np.ndarray, sigma: np.ndarray, v: np.ndarray, rank_tol: float) -> CLSSolution:
    n = R.shape[1]
    e = np.ones(n)
    rank = _numerical_rank(sigma, rank_tol)
    v2 = v[:, rank:]
    d = v2.T @ e
    selected = np.abs(d) > rank_tol

    if np.any(selected):
        # 以 d 为权的平均：各零空间向量的符号被统一，结果与零空间基的选取无关
        a = v2[:, selected] @ d[selected]
        a = a / a.sum()
        lagrange = 0.0
        k = int(np.count_nonzero(selected))
    else:
        # 零空间与约束正交：零空间法化为无约束问题，取伪逆最小范数解
        q_mat, _ = scipy.linalg.qr(e[:, None])
        q2 = q_mat[:, 1:]
        a = e / n - q2 @ (scipy.linalg.pinv(R @ q2, atol=rank_tol * sigma[0]) @ (R @ e / n))
        a = a / a.sum()
        lagrange = float(np.sum((R @ a) ** 2))
        k = n
    logger.debug(f"秩亏约束最小二乘: rank={rank}/{n}, 使用方向数 {k}")
    return CLSSolution(
        a=a,
        lagrange=lagrange,
        truncation_rank=k,
        lambda_full=lagrange,
        cond_used=float("inf"),
        cond_full=_cond(sigma[0], sigma[-1]),
        sigma_min=float(sigma[-1]),
        rank_deficient=True,
    )


def solve_rank_deficient(R: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> CLSSolution:
    """
    数值秩亏时的求解
    Args:
        R: (q, n) 矩阵
        rank_tol: 相对 σ_1 的数值秩阈值

    Returns: CLSSolution。若零空间向量与 e 不正交，取其平均并缩放满足约束，λ=0；
             否则用零空间法与伪逆求最小范数解

    """
    R = _check_matrix(R)
    if R.shape[1] == 1:
        return _single_column(R)
    sigma, v = _svd(R)
    return _deficient(R, sigma, v, rank_tol)


def solve_truncated(
        R: np.ndarray,
        tau: Optional[float] = None,
        tau_mode: TauMode | str = TauMode.RELATIVE,
        rank_tol: float = DEFAULT_RANK_TOL,
) -> CLSSolution:
    """
    截断 SVD 求解：取最小的 k 使 |λ_k - λ_n| < τ，只在最后 k 个右奇异向量张成的空间中求解
    Args:
        R: (q, n) 矩阵
        tau: 愿意牺牲的残差平方；None 时取默认 1e-10（相对模式）
        tau_mode: relative 时 τ 乘以 (1 + λ_n)
        rank_tol: 数值秩阈值

    Returns: CLSSolution

    """
    R = _check_matrix(R)
    tau_mode = TauMode(tau_mode)
    if tau is None:
        tau = DEFAULT_TAU
    if not tau >= 0:
        raise InvalidArgumentError(f"截断容差必须非负，实际为 {tau}")
    n = R.shape[1]
    if n == 1:
        return _single_column(R)

    sigma, v = _svd(R)
    if _numerical_rank(sigma, rank_tol) < n:
        return _deficient(R, sigma, v, rank_tol)

    d = v.T @ np.ones(n)
    ladder = _ladder(sigma, d)
    lambda_full = float(ladder[-1])
    tau_eff = tau * (1.0 + lambda_full) if tau_mode == TauMode.RELATIVE else tau

    within = np.flatnonzero(np.abs(ladder - lambda_full) < tau_eff)
    k = int(within[0]) + 1 if within.size else n

    sigma2 = sigma[n - k:]
    d2 = d[n - k:]
    lagrange = float(ladder[k - 1])
    a_hat = lagrange * d2 / sigma2 ** 2
    a = v[:, n - k:] @ a_hat
    a = a / a.sum()
    return CLSSolution(
        a=a,
        lagrange=lagrange,
        truncation_rank=k,
        lambda_full=lambda_full,
        cond_used=_cond(sigma2[0], sigma2[-1]),
        cond_full=_cond(sigma[0], sigma[-1]),
        sigma_min=float(sigma[-1]),
        tau_used=float(tau_eff),
    )


def solve_full(R: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> CLSSolution:
    """不截断的约束最小二乘解，即 τ=0 的截断解"""
    return solve_truncated(R, tau=0.0, tau_mode=TauMode.ABSOLUTE, rank_tol=rank_tol)

"""
随机热导率场

log κ(T, s) = Ȳ(T) + σ_Y(T) Σ_i φ_i(T) sqrt(λ_i) s_i

Ȳ 为分段的平均趋势，σ_Y(T) = 0.08 + 0.004 sqrt(T)，(φ_i, λ_i) 为温度网格上平方指数相关矩阵的
前 d 个特征对，s_i 为独立标准正态变量。
"""
import logging
import math
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .model_api import InvalidArgumentError

logger = logging.getLogger(__name__)

T_MIN = 0.0
T_MAX = 1250.0
N_NODES = 600
CORR_LENGTH = math.sqrt(500.0)
N_MODES = 11

# 平均趋势在 T_BREAK 处切换为常数分支
T_BREAK = 800.0
MEAN_SLOPE = -0.0333
MEAN_INTERCEPT = 54.0
MEAN_PLATEAU = 27.30

SYMMETRY_TOL = 1e-10
NEGATIVE_EIG_TOL = 1e-10


def mean_conductivity(T) -> np.ndarray:
    """exp(Ȳ(T))：T < 800 时为 -0.0333 T + 54，否则为 27.30"""
    T = np.asarray(T, dtype=float)
    return np.where(T < T_BREAK, MEAN_SLOPE * T + MEAN_INTERCEPT, MEAN_PLATEAU)


def mean_log_conductivity(T) -> np.ndarray:
    return np.log(mean_conductivity(T))


def sigma_y(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    return 0.08 + 0.004 * np.sqrt(np.maximum(T, 0.0))


def temperature_grid(n_nodes: int = N_NODES, t_min: float = T_MIN, t_max: float = T_MAX) -> np.ndarray:
    if n_nodes < 2:
        raise InvalidArgumentError(f"温度网格至少需要 2 个节点，实际为 {n_nodes}")
    return np.linspace(t_min, t_max, n_nodes)


def correlation_matrix(temp_grid, corr_length: float = CORR_LENGTH) -> np.ndarray:
    """
    平方指数相关矩阵 C_ij = exp(-(T_i - T_j)^2 / γ^2)
    Args:
        temp_grid: 升序温度节点
        corr_length: 相关长度 γ (°C)

    Returns: (nodes, nodes) 对称矩阵，对角线为 1

    """
    if not corr_length > 0:
        raise InvalidArgumentError(f"相关长度必须为正，实际为 {corr_length}")
    T = np.asarray(temp_grid, dtype=float).reshape(-1)
    if np.any(np.diff(T) < 0):
        raise InvalidArgumentError("温度网格必须升序")
    diff = T[:, None] - T[None, :]
    return np.exp(-(diff / corr_length) ** 2)


class KLBasis(BaseModel):
    """截断 KL 展开：温度节点上的模态与特征值"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    temp_grid: np.ndarray = Field(description="温度节点 (°C)")
    modes: np.ndarray = Field(description="(nodes, d) 正交归一模态 φ_i")
    kl_eigs: np.ndarray = Field(description="非增的 KL 特征值 λ_i")
    corr_length: float = Field(default=CORR_LENGTH, description="相关长度 γ (°C)")
    total_variance: float = Field(description="相关矩阵全部特征值之和（迹）")
    all_eigs: np.ndarray = Field(description="相关矩阵的全部特征值，非增")

    @field_validator("temp_grid", "modes", "kl_eigs", "all_eigs", mode="before")
    @classmethod
    def _frozen(cls, value):
        arr = np.array(value, dtype=float)
        arr.setflags(write=False)
        return arr

    @property
    def d(self) -> int:
        return int(self.kl_eigs.size)

    @property
    def captured_fraction(self) -> float:
        """前 d 个特征值占迹的比例"""
        return float(self.kl_eigs.sum() / self.total_variance)

    def truncation_for_fraction(self, fraction: float) -> int:
        return truncation_for_fraction(self.all_eigs, fraction)


def truncation_for_fraction(eigenvalues, fraction: float) -> int:
    """累计特征值比例首次达到 fraction 的最小截断数"""
    if not 0 < fraction <= 1:
        raise InvalidArgumentError(f"比例必须在 (0, 1] 内，实际为 {fraction}")
    eigs = np.clip(np.sort(np.asarray(eigenvalues, dtype=float))[::-1], 0.0, None)
    cumulative = np.cumsum(eigs) / eigs.sum()
    return int(min(np.searchsorted(cumulative, fraction * (1 - 1e-12)) + 1, eigs.size))


def _fix_signs(modes: np.ndarray) -> np.ndarray:
    for i in range(modes.shape[1]):
        col = modes[:, i]
        nonzero = np.flatnonzero(np.abs(col) > 1e-12 * np.max(np.abs(col)))
        if nonzero.size and col[nonzero[0]] < 0:
            modes[:, i] = -col
    return modes


def kl_decompose(
        corr: np.ndarray,
        d: int = N_MODES,
        temp_grid: Optional[np.ndarray] = None,
        corr_length: float = CORR_LENGTH,
) -> KLBasis:
    """
    相关矩阵的离散特征分解，保留前 d 个特征对
    Args:
        corr: 对称半正定相关矩阵
        d: 截断数
        temp_grid: 对应的温度节点，None 时取 [0, 1250] 上的等距节点
        corr_length: 记录用的相关长度

    Returns: KLBasis

    """
    corr = np.asarray(corr, dtype=float)
    nodes = corr.shape[0]
    if corr.ndim != 2 or corr.shape[1] != nodes:
        raise InvalidArgumentError(f"相关矩阵必须为方阵，实际形状为 {corr.shape}")
    if not 1 <= d <= nodes:
        raise InvalidArgumentError(f"截断数必须在 [1, {nodes}] 内，实际为 {d}")
    if np.max(np.abs(corr - corr.T)) > SYMMETRY_TOL:
        raise InvalidArgumentError("相关矩阵不对称")
    if temp_grid is None:
        temp_grid = temperature_grid(nodes)
    elif len(temp_grid) != nodes:
        raise InvalidArgumentError("温度节点数与相关矩阵阶数不一致")

    eigs, vecs = scipy.linalg.eigh(corr)
    eigs, vecs = eigs[::-1], vecs[:, ::-1]
    top = eigs[:d]
    if top[-1] < -NEGATIVE_EIG_TOL * max(1.0, eigs[0]):
        raise InvalidArgumentError(f"相关矩阵不是半正定的：第 {d} 个特征值为 {top[-1]:.3e}")
    kl = KLBasis(
        temp_grid=temp_grid,
        modes=_fix_signs(vecs[:, :d].copy()),
        kl_eigs=np.clip(top, 0.0, None),
        corr_length=corr_length,
        total_variance=float(eigs.sum()),
        all_eigs=eigs,
    )
    logger.info(f"KL 截断 d={d}，保留方差比例 {kl.captured_fraction:.4f}")
    return kl


def build_kl_basis(n_nodes: int = N_NODES, corr_length: float = CORR_LENGTH, d: int = N_MODES) -> KLBasis:
    grid = temperature_grid(n_nodes)
    return kl_decompose(correlation_matrix(grid, corr_length), d, grid, corr_length)


class ConductivityField:
    """
    固定参数 s 的一个热导率实现 T -> κ(T, s)

    节点上的展开 Σ_i φ_i sqrt(λ_i) s_i 预先求出，任意温度处线性插值。
    """

    def __init__(self, kl: KLBasis, s):
        s = np.asarray(s, dtype=float).reshape(-1)
        if s.size != kl.d:
            raise InvalidArgumentError(f"参数维数应为 KL 截断数 {kl.d}，实际为 {s.size}")
        self.kl = kl
        self.s = s
        self._node_field = kl.modes @ (np.sqrt(kl.kl_eigs) * s)

    def gaussian(self, T) -> Tuple[np.ndarray, bool]:
        """节点场在 T 处的线性插值，以及是否发生了截断到网格端点"""
        T = np.asarray(T, dtype=float)
        grid = self.kl.temp_grid
        clamped = bool(np.any(T < grid[0]) or np.any(T > grid[-1]))
        return np.interp(T, grid, self._node_field), clamped

    def evaluate(self, T) -> Tuple[np.ndarray, bool]:
        T = np.asarray(T, dtype=float)
        g, clamped = self.gaussian(T)
        Tc = np.clip(T, self.kl.temp_grid[0], self.kl.temp_grid[-1])
        return mean_conductivity(Tc) * np.exp(sigma_y(Tc) * g), clamped

    def __call__(self, T) -> np.ndarray:
        values, clamped = self.evaluate(T)
        if clamped:
            logger.debug("热导率在温度网格外求值，已截断到端点")
        return values


def kappa(T, s, kl: KLBasis, return_flag: bool = False):
    """
    热导率 κ(T, s) = exp[Ȳ(T) + σ_Y(T) Σ φ_i(T) sqrt(λ_i) s_i]
    Args:
        T: 温度 (°C)，网格外的值截断到端点
        s: 长度为 d 的参数
        kl: KL 基
        return_flag: 为 True 时同时返回是否发生截断

    Returns: κ (W/(m·K))，或 (κ, clamped)

    """
    values, clamped = ConductivityField(kl, s).evaluate(T)
    if clamped:
        logger.warning("温度超出 KL 网格范围，已截断到端点")
    return (values, clamped) if return_flag else values


def standard_normal_draws(seed: int, count: int, dim: int) -> np.ndarray:
    """
    可复现的标准正态样本：Philox 计数器生成器 + Box-Muller 变换
    Args:
        seed: 种子
        count: 样本数
        dim: 每个样本的维数

    Returns: (count, dim) 数组

    """
    if count < 0 or dim < 1:
        raise InvalidArgumentError(f"非法的样本规模: count={count}, dim={dim}")
    rng = np.random.Generator(np.random.Philox(seed))
    pairs = (dim + 1) // 2
    u = rng.random((count, pairs, 2))
    radius = np.sqrt(-2.0 * np.log1p(-u[..., 0]))
    angle = 2.0 * np.pi * u[..., 1]
    z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
    return z.reshape(count, 2 * pairs)[:, :dim]


def export_kl(kl: KLBasis, out_dir: str | Path, realizations: int = 0, seed: int = 0) -> list[Path]:
    """
    写出 kl_modes.csv、kl_eigenvalues.csv，以及可选的 realizations.csv
    Args:
        kl: KL 基
        out_dir: 输出目录
        realizations: 实现个数，0 表示不写
        seed: 抽样种子

    Returns: 写出的文件列表

    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    written = []

    modes_path = root / "kl_modes.csv"
    header = ",".join(["T_degC"] + [f"phi_{i + 1}" for i in range(kl.d)])
    np.savetxt(modes_path, np.column_stack([kl.temp_grid, kl.modes]), delimiter=",", fmt="%.17g",
               header=header, comments="")
    written.append(modes_path)

    eig_path = root / "kl_eigenvalues.csv"
    fractions = np.cumsum(kl.kl_eigs) / kl.total_variance
    np.savetxt(eig_path, np.column_stack([np.arange(1, kl.d + 1), kl.kl_eigs, fractions]),
               delimiter=",", fmt=["%d", "%.17g", "%.17g"], header="index,lambda,cumulative_fraction",
               comments="")
    written.append(eig_path)

    if realizations > 0:
        draws = standard_normal_draws(seed, realizations, kl.d)
        values = np.column_stack([ConductivityField(kl, s)(kl.temp_grid) for s in draws])
        real_path = root / "realizations.csv"
        header = ",".join(["T_degC"] + [f"kappa_{r + 1}_W_per_mK" for r in range(realizations)])
        np.savetxt(real_path, np.column_stack([kl.temp_grid, values]), delimiter=",", fmt="%.17g",
                   header=header, comments="")
        written.append(real_path)

    logger.info(f"KL 数据已写入 {root}")
    return written

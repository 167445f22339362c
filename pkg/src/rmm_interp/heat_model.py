"""
二维非线性瞬态热传导算例

    ρc ∂T/∂t = ∇·(κ(T, s) ∇T)   在 [0, Lx]×[0, Ly] 上
    T = T_b(x, t)                  左边 (x1 = 0) 与下边 (x2 = 0)
    -κ ∇T·n = 0                    右边与上边

HeatDomain.dirichlet_segments = False 时四条边都取绝热条件，总热量守恒。

空间上用单元中心有限差分，面热导率取相邻单元的调和平均；状态向量按 (ny, nx) 行优先展平，
第 j 行第 i 列单元的下标为 j·nx + i。时间上用自适应 BDF（1–2 阶），内层非线性方程用阻尼不动点迭代。
"""
import logging
from typing import Optional, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from pydantic import BaseModel, ConfigDict, Field

from .conductivity import ConductivityField, KLBasis, build_kl_basis
from .model_api import (
    EvalCounter,
    IntegrationError,
    InvalidArgumentError,
    ModelSystem,
    TimeGrid,
)
from .ode_integrator import Trajectory
from .schemas.options import HeatSolverOptions

logger = logging.getLogger(__name__)

T_INITIAL = 20.0
T_BOUNDARY_MIN = 20.0
T_BOUNDARY_MAX = 1100.0
HEATING_RATE = 98.0 / 3.0


class HeatDomain(BaseModel):
    """矩形截面与网格"""
    model_config = ConfigDict(frozen=True)

    lx: float = Field(default=0.1, gt=0, description="宽度 (m)")
    ly: float = Field(default=0.2, gt=0, description="高度 (m)")
    nx: int = Field(default=21, ge=2, description="x1 方向单元数")
    ny: int = Field(default=41, ge=2, description="x2 方向单元数")
    rho_c: float = Field(default=3.6e6, gt=0, description="体积热容 ρc (J/(m^3·K))")
    t_initial: float = Field(default=T_INITIAL, description="初始温度 (°C)")
    dirichlet_segments: bool = Field(default=True, description="左边与下边取 Dirichlet 边界；False 时四边均为绝热")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    @property
    def y_centers(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    def refined(self, factor: int = 2) -> "HeatDomain":
        return self.model_copy(update={"nx": self.nx * factor, "ny": self.ny * factor})

    def initial_state(self) -> np.ndarray:
        return np.full(self.size, self.t_initial)


class QoIConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    threshold: float = Field(default=1000.0, ge=0, le=1250, description="临界温度 (°C)")
    eval_time: float = Field(default=70.0, gt=0, description="评估时刻 (s)")


def boundary_temp(x, t) -> np.ndarray:
    """
    Dirichlet 边界温度 min{1100, max[20, (98/3) t - 6000 x - 700]}
    Args:
        x: 沿 Γ1 自左下角起算的弧长坐标 (m)
        t: 时间 (s)

    Returns: 边界温度 (°C)

    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.minimum(T_BOUNDARY_MAX, np.maximum(T_BOUNDARY_MIN, HEATING_RATE * t - 6000.0 * x - 700.0))


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def _face_coefficients(field: np.ndarray, t, domain: HeatDomain, conductivity: ConductivityField):
    """
    各面的 κ_f / h^2 系数与左、下边界温度
    field 形状为 (..., ny, nx)，t 可与前导维数广播
    """
    K = conductivity(field)
    t = np.asarray(t, dtype=float)[..., None]
    left_temp = boundary_temp(domain.y_centers, t)  # (..., ny)
    bottom_temp = boundary_temp(domain.x_centers, t)  # (..., nx)
    cx = _harmonic(K[..., :, :-1], K[..., :, 1:]) / domain.hx ** 2
    cy = _harmonic(K[..., :-1, :], K[..., 1:, :]) / domain.hy ** 2
    # 边界面距单元中心 h/2
    if domain.dirichlet_segments:
        c_left = 2.0 * _harmonic(K[..., :, 0], conductivity(left_temp)) / domain.hx ** 2
        c_bottom = 2.0 * _harmonic(K[..., 0, :], conductivity(bottom_temp)) / domain.hy ** 2
    else:
        c_left = np.zeros_like(K[..., :, 0])
        c_bottom = np.zeros_like(K[..., 0, :])
    return cx, cy, c_left, c_bottom, left_temp, bottom_temp


def semidiscrete_forcing(Tvec, t, s, domain: HeatDomain, kl: KLBasis) -> np.ndarray:
    """
    半离散右端 (1/ρc) ∇·(κ(T) ∇T)
    Args:
        Tvec: (p,) 或 (k, p) 温度，p = nx·ny
        t: 时间，标量或 (k,)
        s: KL 参数
        domain: 网格
        kl: KL 基

    Returns: 与 Tvec 同形状的 dT/dt

    """
    Tvec = np.asarray(Tvec, dtype=float)
    if Tvec.shape[-1] != domain.size:
        raise InvalidArgumentError(f"温度向量长度应为 {domain.size}，实际为 {Tvec.shape[-1]}")
    field = Tvec.reshape(Tvec.shape[:-1] + (domain.ny, domain.nx))
    cx, cy, c_left, c_bottom, left_temp, bottom_temp = _face_coefficients(
        field, t, domain, ConductivityField(kl, s))

    out = np.zeros_like(field)
    flux_x = cx * (field[..., :, 1:] - field[..., :, :-1])
    out[..., :, :-1] += flux_x
    out[..., :, 1:] -= flux_x
    flux_y = cy * (field[..., 1:, :] - field[..., :-1, :])
    out[..., :-1, :] += flux_y
    out[..., 1:, :] -= flux_y
    out[..., :, 0] += c_left * (left_temp - field[..., :, 0])
    out[..., 0, :] += c_bottom * (bottom_temp - field[..., 0, :])
    return out.reshape(Tvec.shape) / domain.rho_c


class _Stencil:
    """固定网格的稀疏模式，按面系数组装 A 与 b，使 dT/dt = (A T + b)/ρc"""

    def __init__(self, domain: HeatDomain):
        self.domain = domain
        idx = np.arange(domain.size).reshape(domain.ny, domain.nx)
        self._xa, self._xb = idx[:, :-1].ravel(), idx[:, 1:].ravel()
        self._ya, self._yb = idx[:-1, :].ravel(), idx[1:, :].ravel()
        self._left = idx[:, 0]
        self._bottom = idx[0, :]
        self._rows = np.concatenate([self._xa, self._xb, self._ya, self._yb])
        self._cols = np.concatenate([self._xb, self._xa, self._yb, self._ya])

    def assemble(self, T: np.ndarray, t: float, conductivity: ConductivityField) -> Tuple[scipy.sparse.csc_matrix, np.ndarray]:
        d = self.domain
        field = T.reshape(d.ny, d.nx)
        cx, cy, c_left, c_bottom, left_temp, bottom_temp = _face_coefficients(field, t, d, conductivity)
        cx, cy = cx.ravel(), cy.ravel()
        diag = np.zeros(d.size)
        np.add.at(diag, self._xa, cx)
        np.add.at(diag, self._xb, cx)
        np.add.at(diag, self._ya, cy)
        np.add.at(diag, self._yb, cy)
        np.add.at(diag, self._left, c_left)
        np.add.at(diag, self._bottom, c_bottom)
        b = np.zeros(d.size)
        np.add.at(b, self._left, c_left * left_temp)
        np.add.at(b, self._bottom, c_bottom * bottom_temp)
        rows = np.concatenate([self._rows, np.arange(d.size)])
        cols = np.concatenate([self._cols, np.arange(d.size)])
        data = np.concatenate([cx, cx, cy, cy, -diag])
        A = scipy.sparse.coo_matrix((data, (rows, cols)), shape=(d.size, d.size)).tocsc()
        return A, b


def heat_model_system(domain: Optional[HeatDomain] = None, kl: Optional[KLBasis] = None) -> ModelSystem:
    """把半离散热传导方程包装为 ModelSystem，参数为 d 维 KL 系数"""
    domain = domain or HeatDomain()
    kl = kl or build_kl_basis()
    return ModelSystem(
        name="heat",
        state_dim=domain.size,
        param_dim=kl.d,
        forcing=lambda x, t, s: semidiscrete_forcing(x, t, s, domain, kl),
        vectorized=True,
    )


def _extrapolate(times, states, t_new) -> np.ndarray:
    """过历史点的 Lagrange 外推"""
    out = np.zeros_like(states[-1])
    for j, (tj, yj) in enumerate(zip(times, states)):
        weight = 1.0
        for k, tk in enumerate(times):
            if k != j:
                weight *= (t_new - tk) / (tj - tk)
        out += weight * yj
    return out


def _bdf_coefficients(order: int, h: float, h_prev: float):
    """变步长 BDF：y_{n+1} - Σ α_j y_{n-j} = β h f(y_{n+1})，返回 (alphas, beta)"""
    if order == 1:
        return (1.0,), 1.0
    w = h / h_prev
    denom = 1.0 + 2.0 * w
    return ((1.0 + w) ** 2 / denom, -w * w / denom), (1.0 + w) / denom


# 预测-校正差到局部误差的换算系数
_ERROR_CONSTANTS = {1: 0.5, 2: 2.0 / 11.0}


def solve_heat(
        domain: HeatDomain,
        s,
        grid_out: TimeGrid,
        kl: KLBasis,
        options: Optional[HeatSolverOptions] = None,
        counter: Optional[EvalCounter] = None,
        x0: Optional[np.ndarray] = None,
) -> Trajectory:
    """
    隐式积分半离散热传导方程，步长精确落在输出时间点上
    Args:
        domain: 网格
        s: KL 参数
        grid_out: 输出网格
        kl: KL 基
        options: 求解器选项
        counter: 计数器，每次组装算子计一次右端调用
        x0: 初始温度场，默认取 domain.initial_state()

    Returns: Trajectory

    """
    options = options or HeatSolverOptions()
    s = np.asarray(s, dtype=float).reshape(-1)
    if grid_out.points[0] < 0:
        raise InvalidArgumentError("输出网格必须位于 [0, T] 内")
    conductivity = ConductivityField(kl, s)
    stencil = _Stencil(domain)
    local = EvalCounter()
    rho_c = domain.rho_c

    t = 0.0
    y = domain.initial_state() if x0 is None else np.array(x0, dtype=float).reshape(-1)
    if y.size != domain.size:
        raise InvalidArgumentError(f"初始温度场长度应为 {domain.size}，实际为 {y.size}")
    hist_t, hist_y = [t], [y]
    out = np.empty((grid_out.m, domain.size))
    next_out = 0
    while next_out < grid_out.m and grid_out.points[next_out] <= t:
        out[next_out] = y
        next_out += 1

    h = min(options.h_init, options.h_max)
    h_prev = h
    n_steps = n_rejected = 0

    while next_out < grid_out.m:
        target = float(grid_out.points[next_out])
        h = min(h, options.h_max, target - t)
        if h < options.h_min:
            raise IntegrationError(f"热传导求解步长下溢 (h={h:.3e})", t_reached=t)
        t_new = target if target - (t + h) <= 1e-12 * max(1.0, target) else t + h
        h = t_new - t

        order = min(options.max_order, len(hist_t) - 1, 2) if len(hist_t) > 1 else 1
        alphas, beta = _bdf_coefficients(order, h, h_prev)
        history = alphas[0] * hist_y[-1]
        if order == 2:
            history = history + alphas[1] * hist_y[-2]

        if len(hist_t) == 1:
            A0, b0 = stencil.assemble(y, t, conductivity)
            local.increment(1)
            predictor = y + h * (A0 @ y + b0) / rho_c
            err_const = _ERROR_CONSTANTS[1]
        else:
            npts = min(order + 1, len(hist_t))
            predictor = _extrapolate(hist_t[-npts:], hist_y[-npts:], t_new)
            err_const = _ERROR_CONSTANTS[order] if npts == order + 1 else _ERROR_CONSTANTS[1]

        y_new, ok = _picard(stencil, conductivity, predictor, history, beta * h / rho_c, t_new, options, local)
        if not ok:
            n_rejected += 1
            h *= 0.5
            logger.debug(f"t={t:.4g}: 不动点迭代停滞，步长减半至 {h:.3e}")
            if h < options.h_min:
                raise IntegrationError(f"热传导内迭代在 t={t:.6g} 处停滞", t_reached=t)
            continue

        scale = options.abs_tol + options.rel_tol * np.abs(y_new)
        err = float(np.sqrt(np.mean((err_const * (y_new - predictor) / scale) ** 2)))
        if not np.isfinite(err):
            raise IntegrationError(f"热传导求解在 t={t_new:.6g} 处出现非有限值", t_reached=t)
        factor = min(2.0, max(0.2, 0.9 * max(err, 1e-10) ** (-1.0 / (order + 1))))
        if err > 1.0:
            n_rejected += 1
            h *= factor
            continue

        n_steps += 1
        h_prev = h
        t, y = t_new, y_new
        hist_t.append(t)
        hist_y.append(y)
        del hist_t[:-3], hist_y[:-3]
        while next_out < grid_out.m and grid_out.points[next_out] <= t + 1e-12 * max(1.0, t):
            out[next_out] = y
            next_out += 1
        h *= factor

    if counter is not None:
        counter.increment(local.count)
    logger.debug(f"热传导求解完成: {n_steps} 步，拒绝 {n_rejected} 次，组装 {local.count} 次")
    return Trajectory(grid=grid_out, states=out, param=s, n_evals=local.count,
                      n_steps=n_steps, n_rejected=n_rejected)


def _picard(stencil: _Stencil, conductivity: ConductivityField, guess: np.ndarray, history: np.ndarray,
            gamma: float, t: float, options: HeatSolverOptions, counter: EvalCounter) -> Tuple[np.ndarray, bool]:
    """
    解 y - γ (A(y) y + b(y)) = history：每次冻结 κ(y) 解一个线性方程组
    返回 (解, 是否收敛)
    """
    size = stencil.domain.size
    identity = scipy.sparse.identity(size, format="csc")
    y = guess
    previous = np.inf
    for iteration in range(options.max_inner):
        A, b = stencil.assemble(y, t, conductivity)
        counter.increment(1)
        M = identity - gamma * A
        rhs = history + gamma * b
        residual = float(np.max(np.abs(M @ y - rhs)))
        # 至少做一次线性求解，返回值总是冻结 κ 后 M 矩阵方程组的解
        if iteration > 0 and residual <= options.inner_tol * (1.0 + float(np.max(np.abs(y)))):
            return y, True
        if residual > previous:
            return y, False
        previous = residual
        solved = scipy.sparse.linalg.splu(M).solve(rhs)
        y = options.relaxation * solved + (1.0 - options.relaxation) * y
    return y, False


def qoi_fraction(Tvec, domain: Optional[HeatDomain] = None, cfg: Optional[QoIConfig] = None) -> float:
    """
    温度超过临界值的面积比例
    Args:
        Tvec: (p,) 温度
        domain: 网格（单元面积相等）
        cfg: 阈值设置

    Returns: [0, 1] 内的比例

    """
    cfg = cfg or QoIConfig()
    Tvec = np.asarray(Tvec, dtype=float).reshape(-1)
    if domain is not None and Tvec.size != domain.size:
        raise InvalidArgumentError(f"温度向量长度应为 {domain.size}，实际为 {Tvec.size}")
    area = np.ones_like(Tvec)
    return float(np.sum(area * (Tvec > cfg.threshold)) / np.sum(area))

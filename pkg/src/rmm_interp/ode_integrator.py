"""
自适应显式 Runge-Kutta 积分器（Dormand-Prince 5(4) 对）

用于生成全模型真解轨迹：PI 步长控制，四阶连续扩展在输出网格上取样。
"""
import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .model_api import (
    EvalCounter,
    IntegrationError,
    InvalidArgumentError,
    ModelSystem,
    TimeGrid,
    eval_counted,
)

logger = logging.getLogger(__name__)

DEFAULT_REL_TOL = 1e-8
DEFAULT_ABS_TOL = 1e-10

# Dormand-Prince 系数（Hairer, Norsett, Wanner）
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_HAT = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B_HAT

# 四阶连续扩展系数：y(t + θh) = y + h Σ_i k_i Σ_j P[i, j] θ^{j+1}
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5
_FAC_MIN = 0.2
_FAC_MAX = 10.0


class Trajectory(BaseModel):
    """
    输出网格上的状态历史，第 i 行为 x(t_i)
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: TimeGrid
    states: np.ndarray = Field(description="(m, p) 状态矩阵")
    param: np.ndarray = Field(description="参数 s")
    n_evals: int = Field(default=0, description="积分过程中的右端调用次数")
    n_steps: int = Field(default=0, description="接受的步数")
    n_rejected: int = Field(default=0, description="拒绝的步数")

    @field_validator("states", "param", mode="before")
    @classmethod
    def _as_array(cls, value):
        return np.asarray(value, dtype=float)

    @model_validator(mode="after")
    def _check(self) -> "Trajectory":
        if self.states.ndim != 2 or self.states.shape[0] != self.grid.m:
            raise ValueError(f"轨迹行数 {self.states.shape} 与网格点数 {self.grid.m} 不一致")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("轨迹包含非有限值")
        return self


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(v * v)))


def _dense(y0, k, h, theta):
    """Dormand-Prince 四阶连续扩展，θ ∈ [0, 1]"""
    powers = theta ** np.arange(1, 5)
    return y0 + h * (k.T @ (_P @ powers))


def _initial_step(f, t0, y0, f0, rel_tol, abs_tol, t_span):
    scale = abs_tol + rel_tol * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, t_span)


def integrate(
        model: ModelSystem,
        x0: np.ndarray,
        s: np.ndarray,
        out_grid: TimeGrid,
        rel_tol: float = DEFAULT_REL_TOL,
        abs_tol: float = DEFAULT_ABS_TOL,
        counter: Optional[EvalCounter] = None,
        max_steps: int = 1_000_000,
) -> Trajectory:
    """
    从 t=0、x(0)=x0 积分到输出网格末端，并在网格点上稠密取样
    Args:
        model: 动力系统
        x0: 初始状态
        s: 参数
        out_grid: 输出网格，须位于 [0, ∞)
        rel_tol: 相对容差
        abs_tol: 绝对容差
        counter: 可选的共享计数器
        max_steps: 最大尝试步数

    Returns: Trajectory

    """
    if not (rel_tol > 0 and abs_tol > 0):
        raise InvalidArgumentError(f"容差必须为正: rel_tol={rel_tol}, abs_tol={abs_tol}")
    y = np.array(x0, dtype=float).reshape(-1)
    if y.size != model.state_dim:
        raise InvalidArgumentError(f"初始状态维数应为 {model.state_dim}，实际为 {y.size}")
    s = np.asarray(s, dtype=float).reshape(-1)
    if out_grid.points[0] < 0:
        raise InvalidArgumentError("输出网格必须位于积分区间 [0, T] 内")

    local = EvalCounter()

    def f(t, x):
        return eval_counted(model, local, x, t, s)

    t = 0.0
    t_final = float(out_grid.points[-1])
    out = np.empty((out_grid.m, model.state_dim))
    next_out = 0
    while next_out < out_grid.m and out_grid.points[next_out] <= t:
        out[next_out] = y
        next_out += 1

    n_steps = n_rejected = 0
    if next_out < out_grid.m:
        fy = f(t, y)
        h = _initial_step(f, t, y, fy, rel_tol, abs_tol, t_final - t)
        err_prev = 1e-4
        k = np.empty((7, y.size))
        while next_out < out_grid.m:
            if n_steps + n_rejected >= max_steps:
                raise IntegrationError(f"{model.name}: 超过最大步数 {max_steps}", t_reached=t)
            h = min(h, t_final - t)
            if h <= 16 * np.finfo(float).eps * max(1.0, abs(t)):
                raise IntegrationError(f"{model.name}: 步长下溢 (h={h:.3e})，问题刚性超出控制器能力", t_reached=t)

            k[0] = fy
            for stage in range(1, 7):
                y_stage = y + h * np.dot(_A[stage], k[:stage])
                k[stage] = f(t + _C[stage] * h, y_stage)
            y_new = y + h * np.dot(_B, k)
            scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err = _rms(h * np.dot(_E, k) / scale)

            if not np.isfinite(err) or not np.all(np.isfinite(y_new)):
                n_rejected += 1
                h *= _FAC_MIN
                logger.debug(f"{model.name}: t={t:.6g} 出现非有限值，缩小步长至 {h:.3e}")
                continue

            if err <= 1.0:
                t_new = t + h
                if t_final - t_new <= 16 * np.finfo(float).eps * max(1.0, abs(t_final)):
                    t_new = t_final
                while next_out < out_grid.m and out_grid.points[next_out] <= t_new:
                    theta = (out_grid.points[next_out] - t) / h
                    out[next_out] = y_new if theta >= 1.0 else _dense(y, k, h, theta)
                    next_out += 1
                fac = _SAFETY * max(err, 1e-10) ** (-_ALPHA) * err_prev ** _BETA
                fac = min(_FAC_MAX, max(_FAC_MIN, fac))
                err_prev = max(err, 1e-4)
                t, y, fy = t_new, y_new, k[6].copy()
                h *= fac
                n_steps += 1
            else:
                n_rejected += 1
                h *= max(_FAC_MIN, _SAFETY * err ** (-1 / 5))
                logger.debug(f"{model.name}: 拒绝步 t={t:.6g}, err={err:.3e}, 新步长 {h:.3e}")

    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"{model.name}: 积分结果包含非有限值", t_reached=t)
    if counter is not None:
        counter.increment(local.count)
    return Trajectory(
        grid=out_grid,
        states=out,
        param=s,
        n_evals=local.count,
        n_steps=n_steps,
        n_rejected=n_rejected,
    )

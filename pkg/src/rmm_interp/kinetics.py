"""三组分刚性动力学算例：右端函数、解析雅可比与算例约定。"""
from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .model_api import InvalidArgumentError, ModelSystem

S_MIN = 0.005
S_MAX = 1.2
T_END = 1.0
N_TIMES = 300
N_PARAMS = 300


class KineticsParams(BaseModel):
    """刚性参数与初始状态"""
    s: float = Field(gt=0, description="刚性参数，取值范围 [0.005, 1.2]，越小越刚性")
    x0: Tuple[float, float, float] = Field(default=(0.5, 0.5, 0.5), description="初始状态 (u0, v0, w0)")

    @field_validator("s")
    @classmethod
    def _in_range(cls, value: float) -> float:
        if not S_MIN <= value <= S_MAX:
            raise ValueError(f"刚性参数 {value} 超出 [{S_MIN}, {S_MAX}]")
        return value


def initial_state() -> np.ndarray:
    return np.array(KineticsParams.model_fields["x0"].default, dtype=float)


def _stiffness(s) -> float:
    s = float(np.asarray(s, dtype=float).reshape(-1)[0])
    if not s > 0:
        raise InvalidArgumentError(f"刚性参数必须为正，实际为 {s}")
    return s


def kinetics_forcing(x: np.ndarray, t, s) -> np.ndarray:
    """
    动力学右端 f(x, t, s)，支持批量状态
    Args:
        x: (3,) 或 (k, 3) 状态 (u, v, w)
        t: 时间（系统自治，不使用）
        s: 刚性参数，标量或长度为 1 的数组

    Returns: 与 x 同形状的右端值

    """
    s = _stiffness(s)
    x = np.asarray(x, dtype=float)
    u, v, w = x[..., 0], x[..., 1], x[..., 2]
    uv = u * v
    vw = v * w
    vv = v * v
    out = np.empty_like(x)
    out[..., 0] = -5 * u / s - uv / s + vw + 5 * vv / s + w / s - u
    out[..., 1] = 10 * u / s - uv / s - vw - 10 * vv / s + w / s + u
    out[..., 2] = uv / s - vw - w / s + u
    return out


def kinetics_jacobian(x: np.ndarray, s) -> np.ndarray:
    """
    右端关于 (u, v, w) 的解析雅可比，仅用于校验有限差分
    Args:
        x: (3,) 状态
        s: 刚性参数

    Returns: (3, 3) 矩阵

    """
    s = _stiffness(s)
    u, v, w = np.asarray(x, dtype=float)
    return np.array([
        [-5 / s - v / s - 1, -u / s + w + 10 * v / s, v + 1 / s],
        [10 / s - v / s + 1, -u / s - w - 20 * v / s, -v + 1 / s],
        [v / s + 1, u / s - w, -v - 1 / s],
    ])


def kinetics_model() -> ModelSystem:
    return ModelSystem(
        name="kinetics",
        state_dim=3,
        param_dim=1,
        forcing=kinetics_forcing,
        jacobian=lambda x, t, s: kinetics_jacobian(x, s),
        vectorized=True,
    )


def param_grid(n_points: int = N_PARAMS) -> np.ndarray:
    """参数扫描网格 s_k = 0.005 + kΔs (k=1..n)，Δs = 1.195/n"""
    ds = (S_MAX - S_MIN) / n_points
    grid = S_MIN + ds * np.arange(1, n_points + 1)
    grid[-1] = S_MAX
    return grid

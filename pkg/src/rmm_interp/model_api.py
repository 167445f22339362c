import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)


class RmmError(Exception):
    """模型插值相关错误的基类。"""
    pass


class InvalidArgumentError(RmmError, ValueError):
    """参数非法（维度不符、容差非正、约束不满足等）时引发的异常。"""
    pass


class IntegrationError(RmmError):
    """时间积分失败时引发的异常。"""

    def __init__(self, message: str, t_reached: Optional[float] = None):
        super().__init__(message)
        self.t_reached = t_reached


class EvaluationError(RmmError):
    """右端函数返回非有限值时引发的异常。"""

    def __init__(
            self,
            message: str,
            time_index: Optional[int] = None,
            basis_index: Optional[int] = None,
            iteration: Optional[int] = None,
    ):
        super().__init__(message)
        self.time_index = time_index
        self.basis_index = basis_index
        self.iteration = iteration


class StoreLoadError(RmmError):
    """快照库读取失败时引发的异常，记录出错的文件与字段。"""

    def __init__(self, message: str, path: Optional[str] = None, field: Optional[str] = None):
        super().__init__(message)
        self.path = path
        self.field = field


# forcing(x, t, s): 非向量化时 x 为 (p,)、t 为标量；向量化时 x 为 (k, p)、t 为 (k,)
ForcingFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray, float, np.ndarray], np.ndarray]


class GridScheme(str, Enum):
    """时间网格的积分权重方案"""
    UNIFORM = 'uniform'
    TRAPEZOID = 'trapezoid'


class TimeGrid(BaseModel):
    """
    输出时间点及其平方积分权重 w_i^2
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: np.ndarray = Field(description="严格递增的时间点 t_1..t_m")
    sq_weights: np.ndarray = Field(description="平方积分权重 w_1^2..w_m^2")

    @field_validator("points", "sq_weights", mode="before")
    @classmethod
    def _as_array(cls, value):
        arr = np.array(value, dtype=float).reshape(-1)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check(self) -> "TimeGrid":
        if self.points.size < 1:
            raise ValueError("时间网格至少需要一个点")
        if self.points.shape != self.sq_weights.shape:
            raise ValueError("时间点与权重数量不一致")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.sq_weights))):
            raise ValueError("时间网格包含非有限值")
        if np.any(np.diff(self.points) <= 0):
            raise ValueError("时间点必须严格递增")
        if np.any(self.sq_weights < 0) or not np.any(self.sq_weights > 0):
            raise ValueError("权重必须非负且至少一个为正")
        return self

    @property
    def m(self) -> int:
        return int(self.points.size)

    @property
    def weights(self) -> np.ndarray:
        """w_i = sqrt(w_i^2)，堆叠矩阵按此缩放"""
        return np.sqrt(self.sq_weights)

    def same_as(self, other: "TimeGrid") -> bool:
        return (np.array_equal(self.points, other.points)
                and np.array_equal(self.sq_weights, other.sq_weights))


class ModelSystem(BaseModel):
    """
    参数化动力系统 x' = f(x, t, s)

    构造后不可变，可在多个工作线程间共享。
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str = Field(default="model", description="模型名称")
    state_dim: int = Field(gt=0, description="状态维数 p")
    param_dim: int = Field(gt=0, description="参数维数 d")
    forcing: ForcingFn = Field(description="右端函数 f(x, t, s)")
    jacobian: Optional[JacobianFn] = Field(default=None, description="可选的解析状态雅可比 ∂f/∂x")
    vectorized: bool = Field(default=False, description="forcing 是否接受批量状态 (k, p)")


class EvalCounter:
    """
    右端函数调用计数器
    单调不减，仅能通过 reset 显式清零；并发递增不会丢失更新。
    """

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    def increment(self, k: int = 1) -> None:
        if k < 0:
            raise InvalidArgumentError("计数增量不能为负")
        with self._lock:
            self._count += k

    def reset(self) -> None:
        with self._lock:
            self._count = 0


def make_time_grid(
        t_start: float,
        t_end: float,
        m: int,
        scheme: GridScheme | str = GridScheme.UNIFORM,
) -> TimeGrid:
    """
    构造等距时间网格
    Args:
        t_start: 区间起点
        t_end: 区间终点
        m: 点数
        scheme: uniform 取 t_j = t_start + jΔt (j=1..m)，权重均为 Δt；
                trapezoid 覆盖两个端点，内部权重 Δt、端点权重 Δt/2

    Returns: TimeGrid

    """
    scheme = GridScheme(scheme)
    if not (math.isfinite(t_start) and math.isfinite(t_end)):
        raise InvalidArgumentError(f"时间区间端点必须有限: [{t_start}, {t_end}]")
    if not t_start < t_end:
        raise InvalidArgumentError(f"要求 t_start < t_end，实际为 [{t_start}, {t_end}]")
    if m < 1:
        raise InvalidArgumentError(f"时间点数必须至少为 1，实际为 {m}")
    span = t_end - t_start

    if scheme == GridScheme.UNIFORM:
        dt = span / m
        points = t_start + dt * np.arange(1, m + 1)
        points[-1] = t_end
        sq_weights = np.full(m, dt)
    else:
        if m < 2:
            raise InvalidArgumentError("梯形格式至少需要两个时间点")
        dt = span / (m - 1)
        points = t_start + dt * np.arange(m)
        points[0] = t_start
        points[-1] = t_end
        sq_weights = np.full(m, dt)
        sq_weights[0] = sq_weights[-1] = dt / 2
    return TimeGrid(points=points, sq_weights=sq_weights)


def _check_params(model: ModelSystem, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.size != model.param_dim:
        raise InvalidArgumentError(f"{model.name}: 参数维数应为 {model.param_dim}，实际为 {s.size}")
    return s


def eval_counted(
        model: ModelSystem,
        counter: Optional[EvalCounter],
        x: np.ndarray,
        t: float,
        s: np.ndarray,
) -> np.ndarray:
    """
    计数调用右端函数一次
    Args:
        model: 动力系统
        counter: 计数器，调用后加 1（None 时不计数）
        x: 状态 (p,)
        t: 时间
        s: 参数 (d,)

    Returns: f(x, t, s)，形状 (p,)

    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.state_dim,):
        raise InvalidArgumentError(f"{model.name}: 状态形状应为 ({model.state_dim},)，实际为 {x.shape}")
    s = _check_params(model, s)
    if model.vectorized:
        out = model.forcing(x[None, :], np.array([t], dtype=float), s)[0]
    else:
        out = model.forcing(x, float(t), s)
    if counter is not None:
        counter.increment(1)
    return np.asarray(out, dtype=float)


def eval_counted_batch(
        model: ModelSystem,
        counter: Optional[EvalCounter],
        states: np.ndarray,
        times: np.ndarray,
        s: np.ndarray,
) -> np.ndarray:
    """
    批量计数调用右端函数，k 行状态计为 k 次调用
    Args:
        states: (k, p) 状态
        times: (k,) 时间
        s: 参数

    Returns: (k, p) 右端值

    """
    states = np.asarray(states, dtype=float)
    times = np.asarray(times, dtype=float).reshape(-1)
    if states.ndim != 2 or states.shape[1] != model.state_dim:
        raise InvalidArgumentError(f"{model.name}: 批量状态形状应为 (k, {model.state_dim})，实际为 {states.shape}")
    if times.size != states.shape[0]:
        raise InvalidArgumentError("批量时间数与状态行数不一致")
    s = _check_params(model, s)
    k = states.shape[0]
    if model.vectorized:
        out = np.asarray(model.forcing(states, times, s), dtype=float)
    else:
        out = np.empty_like(states)
        for row in range(k):
            out[row] = model.forcing(states[row], float(times[row]), s)
    if counter is not None:
        counter.increment(k)
    return out


_T = TypeVar("_T")
_R = TypeVar("_R")


def parallel_map(fn: Callable[[_T], _R], items: Sequence[_T], jobs: int = 1) -> List[_R]:
    """
    对参数点逐个求值，jobs > 1 时使用线程池；结果顺序与输入一致
    """
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))

"""
快照基的构造、持久化、加窗与贪心扩充
"""
import csv
import json
import logging
from functools import cached_property
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .model_api import (
    EvalCounter,
    EvaluationError,
    InvalidArgumentError,
    ModelSystem,
    RmmError,
    StoreLoadError,
    TimeGrid,
    eval_counted_batch,
    parallel_map,
)
from .ode_integrator import Trajectory, integrate
from .schemas.options import IntegratorOptions
from .schemas.store import GridRecord, SnapshotRecord, StoreManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _frozen_array(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return arr


class Snapshot(BaseModel):
    """一个参数点上的全模型状态历史与右端历史"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    param: np.ndarray = Field(description="参数 s_j")
    grid: TimeGrid
    states: np.ndarray = Field(description="(m, p) 状态历史")
    forcing: np.ndarray = Field(description="(m, p) 右端历史，第 i 行为 f(x_j(t_i), t_i, s_j)")
    snapshot_id: str = ""

    @field_validator("param", mode="before")
    @classmethod
    def _param_array(cls, value):
        return _frozen_array(np.reshape(value, -1))

    @field_validator("states", "forcing", mode="before")
    @classmethod
    def _matrix(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check(self) -> "Snapshot":
        if self.states.ndim != 2 or self.states.shape[0] != self.grid.m:
            raise ValueError(f"状态历史形状 {self.states.shape} 与网格点数 {self.grid.m} 不一致")
        if self.forcing.shape != self.states.shape:
            raise ValueError(f"右端历史形状 {self.forcing.shape} 与状态历史 {self.states.shape} 不一致")
        return self

    @property
    def state_dim(self) -> int:
        return int(self.states.shape[1])


class BasisSet(BaseModel):
    """
    共享同一时间网格的快照有序集合

    stacked_X / stacked_F 为 (mp, n) 矩阵，第 i 个时间块按 w_i 缩放，块内行序为 i·p + k。
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    snapshots: tuple[Snapshot, ...]

    @model_validator(mode="after")
    def _check(self) -> "BasisSet":
        if not self.snapshots:
            raise ValueError("基至少需要一个快照")
        first = self.snapshots[0]
        for snap in self.snapshots[1:]:
            if not snap.grid.same_as(first.grid):
                raise ValueError("所有快照必须共享同一时间网格")
            if snap.state_dim != first.state_dim or snap.param.size != first.param.size:
                raise ValueError("所有快照必须具有相同的状态与参数维数")
        return self

    @property
    def n(self) -> int:
        return len(self.snapshots)

    @property
    def grid(self) -> TimeGrid:
        return self.snapshots[0].grid

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def p(self) -> int:
        return self.snapshots[0].state_dim

    @cached_property
    def params(self) -> np.ndarray:
        """(n, d) 参数矩阵"""
        return _frozen_array([snap.param for snap in self.snapshots])

    @cached_property
    def X_hist(self) -> np.ndarray:
        """(n, m, p) 未加权状态历史"""
        return _frozen_array([snap.states for snap in self.snapshots])

    @cached_property
    def F_hist(self) -> np.ndarray:
        """(n, m, p) 未加权右端历史"""
        return _frozen_array([snap.forcing for snap in self.snapshots])

    def _stack(self, hist: np.ndarray) -> np.ndarray:
        weighted = hist * self.grid.weights[None, :, None]
        return _frozen_array(weighted.reshape(self.n, self.m * self.p).T)

    @cached_property
    def stacked_X(self) -> np.ndarray:
        return self._stack(self.X_hist)

    @cached_property
    def stacked_F(self) -> np.ndarray:
        return self._stack(self.F_hist)

    def subset(self, indices: Sequence[int]) -> "BasisSet":
        return BasisSet(snapshots=tuple(self.snapshots[i] for i in indices))


def build_snapshot(
        model: ModelSystem,
        s: np.ndarray,
        x0: np.ndarray,
        grid: TimeGrid,
        options: Optional[IntegratorOptions] = None,
        counter: Optional[EvalCounter] = None,
        solver: Optional[Callable[[np.ndarray], Trajectory]] = None,
        snapshot_id: str = "",
) -> Snapshot:
    """
    在参数 s 处运行全模型并记录右端历史
    Args:
        model: 动力系统
        s: 参数
        x0: 初始状态
        grid: 输出网格
        options: 显式积分器容差
        counter: 共享计数器，计入积分与额外 m 次右端调用
        solver: 可替换的全模型求解器 s -> Trajectory（热传导算例用隐式求解器）
        snapshot_id: 快照标识

    Returns: Snapshot

    """
    s = np.asarray(s, dtype=float).reshape(-1)
    if solver is None:
        options = options or IntegratorOptions()
        traj = integrate(model, x0, s, grid, options.rel_tol, options.abs_tol, counter, options.max_steps)
    else:
        traj = solver(s)
    if not traj.grid.same_as(grid):
        raise InvalidArgumentError("求解器返回的轨迹网格与请求的网格不一致")
    forcing = eval_counted_batch(model, counter, traj.states, grid.points, s)
    bad = np.flatnonzero(~np.all(np.isfinite(forcing), axis=1))
    if bad.size:
        raise EvaluationError(f"{model.name}: 快照右端历史在 t={grid.points[bad[0]]:.6g} 处非有限",
                              time_index=int(bad[0]))
    logger.debug(f"{model.name}: 生成快照 s={s.tolist()}，积分调用 {traj.n_evals} 次")
    return Snapshot(param=s, grid=grid, states=traj.states, forcing=forcing, snapshot_id=snapshot_id)


def assemble_basis(snapshots: Sequence[Snapshot]) -> BasisSet:
    """
    将快照堆叠为加权矩阵
    Args:
        snapshots: 非空快照列表，共享网格与状态维数

    Returns: BasisSet

    """
    if not snapshots:
        raise InvalidArgumentError("快照列表为空")
    try:
        return BasisSet(snapshots=tuple(snapshots))
    except ValidationError as e:
        raise InvalidArgumentError(f"无法组装基: {e.errors()[0]['msg']}") from e


def window_indices(basis: BasisSet, s: np.ndarray, M: int) -> List[int]:
    """距 s 最近的 M 个快照的下标（欧氏距离，距离相等取较小下标），按原顺序返回"""
    if M < 1 or M > basis.n:
        raise InvalidArgumentError(f"窗口大小必须在 [1, {basis.n}] 内，实际为 {M}")
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.size != basis.params.shape[1]:
        raise InvalidArgumentError(f"参数维数应为 {basis.params.shape[1]}，实际为 {s.size}")
    dist = np.linalg.norm(basis.params - s[None, :], axis=1)
    nearest = np.argsort(dist, kind="stable")[:M]
    return sorted(int(i) for i in nearest)


def select_window(basis: BasisSet, s: np.ndarray, M: int) -> BasisSet:
    """
    加窗：只保留参数距 s 最近的 M 个快照
    Args:
        basis: 完整基
        s: 查询参数
        M: 窗口大小，1 ≤ M ≤ n

    Returns: 子基，保持原有顺序

    """
    indices = window_indices(basis, s, M)
    if len(indices) == basis.n:
        return basis
    return basis.subset(indices)


class GreedyChoice(NamedTuple):
    s_next: np.ndarray
    rho_max: float
    indices: List[int]
    scores: np.ndarray


def greedy_next(
        residual_eval: Callable[[np.ndarray], float],
        candidates: Sequence[np.ndarray],
        top_k: int = 1,
        jobs: int = 1,
) -> GreedyChoice:
    """
    在候选网格上穷举最小残差 ρ*(s)，返回取值最大的候选
    Args:
        residual_eval: s -> ρ*(s)
        candidates: 候选参数列表
        top_k: 返回得分最高的 k 个候选（同分取较小下标）
        jobs: 并行线程数

    Returns: GreedyChoice，s_next/rho_max 为得分最高者，indices 为前 top_k 个候选下标

    """
    if len(candidates) == 0:
        raise InvalidArgumentError("候选列表为空")
    if top_k < 1:
        raise InvalidArgumentError(f"top_k 必须至少为 1，实际为 {top_k}")
    candidates = [np.asarray(c, dtype=float).reshape(-1) for c in candidates]

    def score(s):
        try:
            return float(residual_eval(s))
        except RmmError as e:
            logger.warning(f"候选点 s={s.tolist()} 的残差计算失败: {e}")
            return float("nan")

    scores = np.array(parallel_map(score, candidates, jobs), dtype=float)
    valid = np.flatnonzero(np.isfinite(scores))
    if valid.size == 0:
        raise RmmError("所有候选点的残差计算均失败")
    order = valid[np.lexsort((valid, -scores[valid]))]
    chosen = [int(i) for i in order[:top_k]]
    best = chosen[0]
    return GreedyChoice(s_next=candidates[best], rho_max=float(scores[best]), indices=chosen, scores=scores)


def _matrix_header(p: int) -> str:
    return ",".join(["t"] + [f"x{k + 1}" for k in range(p)])


def _write_matrix(path: Path, t: np.ndarray, values: np.ndarray) -> None:
    np.savetxt(path, np.column_stack([t, values]), delimiter=",", fmt="%.17g",
               header=_matrix_header(values.shape[1]), comments="")


def save_store(basis: BasisSet, path: str | Path, metadata: Optional[dict] = None) -> Path:
    """
    将基写入快照库目录：manifest.json 与每个快照的两个 CSV 矩阵
    Args:
        basis: 基
        path: 目标目录，不存在时创建
        metadata: 写入 manifest 的附加说明

    Returns: 目录路径

    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    grid = basis.grid
    ids = [snap.snapshot_id or f"snap_{j:03d}" for j, snap in enumerate(basis.snapshots)]
    duplicates = sorted({sid for sid in ids if ids.count(sid) > 1})
    if duplicates:
        raise InvalidArgumentError(f"快照标识重复，文件会互相覆盖: {duplicates}")
    records = []
    for sid, snap in zip(ids, basis.snapshots):
        record = SnapshotRecord(id=sid, s=snap.param.tolist(),
                                state_file=f"{sid}_state.csv", forcing_file=f"{sid}_forcing.csv")
        _write_matrix(root / record.state_file, grid.points, snap.states)
        _write_matrix(root / record.forcing_file, grid.points, snap.forcing)
        records.append(record)
    manifest = StoreManifest(
        state_dim=basis.p,
        param_dim=int(basis.params.shape[1]),
        grid=GridRecord(t_points=grid.points.tolist(), sq_weights=grid.sq_weights.tolist()),
        snapshots=records,
        metadata=metadata or {},
    )
    (root / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"快照库已写入 {root}（{basis.n} 个快照）")
    return root


def read_manifest(path: str | Path) -> StoreManifest:
    manifest_path = Path(path) / MANIFEST_NAME
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise StoreLoadError(f"快照库缺少 {MANIFEST_NAME}: {manifest_path}", path=str(manifest_path)) from e
    except (OSError, json.JSONDecodeError) as e:
        raise StoreLoadError(f"无法解析 {manifest_path}: {e}", path=str(manifest_path)) from e
    try:
        return StoreManifest.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise StoreLoadError(f"{manifest_path} 字段 {field} 非法: {first['msg']}",
                             path=str(manifest_path), field=field) from e


def _read_matrix(path: Path, field: str, grid: TimeGrid, p: int) -> np.ndarray:
    try:
        with path.open(encoding="utf-8") as fh:
            header = next(csv.reader(fh), None)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except FileNotFoundError as e:
        raise StoreLoadError(f"缺少矩阵文件 {path}", path=str(path), field=field) from e
    except (OSError, ValueError) as e:
        raise StoreLoadError(f"无法读取矩阵文件 {path}: {e}", path=str(path), field=field) from e
    if header != _matrix_header(p).split(","):
        raise StoreLoadError(f"{path} 表头应为 {_matrix_header(p)}", path=str(path), field=field)
    if data.shape != (grid.m, p + 1):
        raise StoreLoadError(f"{path} 形状 {data.shape} 与 manifest 声明的 ({grid.m}, {p + 1}) 不一致",
                             path=str(path), field=field)
    if not np.array_equal(data[:, 0], grid.points):
        raise StoreLoadError(f"{path} 的时间列与 manifest 网格不一致", path=str(path), field="grid.t_points")
    return data[:, 1:]


def load_store(path: str | Path) -> BasisSet:
    """
    读取快照库目录
    Args:
        path: save_store 写出的目录

    Returns: BasisSet

    """
    root = Path(path)
    manifest = read_manifest(root)
    manifest_path = str(root / MANIFEST_NAME)
    try:
        grid = TimeGrid(points=manifest.grid.t_points, sq_weights=manifest.grid.sq_weights)
    except ValidationError as e:
        raise StoreLoadError(f"manifest 网格非法: {e.errors()[0]['msg']}", path=manifest_path, field="grid") from e

    snapshots = []
    for record in manifest.snapshots:
        if len(record.s) != manifest.param_dim:
            raise StoreLoadError(f"快照 {record.id} 的参数维数与 param_dim 不一致",
                                 path=manifest_path, field=f"snapshots.{record.id}.s")
        states = _read_matrix(root / record.state_file, "state_file", grid, manifest.state_dim)
        forcing = _read_matrix(root / record.forcing_file, "forcing_file", grid, manifest.state_dim)
        snapshots.append(Snapshot(param=record.s, grid=grid, states=states, forcing=forcing,
                                  snapshot_id=record.id))
    logger.info(f"从 {root} 读取 {len(snapshots)} 个快照")
    return BasisSet(snapshots=tuple(snapshots))

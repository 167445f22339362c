"""
算例指标与理论检验

- study_metrics: 扫描点上的平均误差 E 与平均残差 R
- covariance_lower_bound: 最优 n 项线性逼近误差的特征值下界
- best_linear_error: 给定基的无约束最优线性逼近误差
"""
import csv
import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.stats

from .basis import BasisSet, select_window
from .conductivity import KLBasis
from .heat_model import HeatDomain, QoIConfig, qoi_fraction, solve_heat
from .interpolator import evaluate_history, newton_solve
from .model_api import (
    EvalCounter,
    InvalidArgumentError,
    ModelSystem,
    RmmError,
    TimeGrid,
    eval_counted_batch,
    parallel_map,
)
from .ode_integrator import Trajectory
from .schemas.options import HeatSolverOptions, NewtonOptions
from .schemas.results import (
    HeatRefinementRecord,
    InterpolationResult,
    LowerBoundReport,
    PointMetrics,
    StudyMetrics,
)

logger = logging.getLogger(__name__)

NEGATIVE_EIG_TOL = 1e-12
CONDITION_BOUND_SLACK = 1e-10


def covariance_lower_bound(
        snapshot_fn: Callable[[np.ndarray], np.ndarray],
        quad_points: Sequence[Tuple[Any, float]],
        jobs: int = 1,
) -> LowerBoundReport:
    """
    C = Σ_k w_k x(s_k) x(s_k)^T 的特征值及尾部界 sqrt(Σ_{k>n} θ_k^2)

    特征值在 q×q 的 Gram 矩阵 W^T W（W 的列为 sqrt(w_k) x(s_k)）上求解，其非零谱与 C 相同。
    Args:
        snapshot_fn: s -> x(s)，任意形状，按展平后的向量处理
        quad_points: [(s_k, w_k)]，w_k > 0
        jobs: 并行线程数

    Returns: LowerBoundReport

    """
    if len(quad_points) == 0:
        raise InvalidArgumentError("积分点列表为空")
    weights = np.array([w for _, w in quad_points], dtype=float)
    if np.any(~(weights > 0)):
        raise InvalidArgumentError("积分权重必须为正")
    vectors = parallel_map(lambda q: np.asarray(snapshot_fn(q[0]), dtype=float).reshape(-1), quad_points, jobs)
    p = vectors[0].size
    for k, vec in enumerate(vectors):
        if vec.size != p:
            raise InvalidArgumentError(f"第 {k} 个积分点的向量长度为 {vec.size}，与首个长度 {p} 不一致")

    W = np.column_stack(vectors) * np.sqrt(weights)[None, :]
    gram = W.T @ W
    theta = scipy.linalg.eigh(gram, eigvals_only=True)[::-1]
    if theta.size and theta[-1] < -NEGATIVE_EIG_TOL * max(1.0, theta[0]):
        logger.warning(f"Gram 矩阵出现负特征值 {theta[-1]:.3e}")
    theta = np.clip(theta, 0.0, None)
    eigenvalues = np.zeros(p)
    count = min(p, theta.size)
    eigenvalues[:count] = theta[:count]

    squares = eigenvalues ** 2
    tails = np.concatenate([np.cumsum(squares[::-1])[::-1], [0.0]])
    return LowerBoundReport(eigenvalues=eigenvalues, tail_bounds=np.sqrt(tails))


def gauss_legendre_points(lower: float, upper: float, count: int) -> List[Tuple[np.ndarray, float]]:
    """[lower, upper] 上的 Gauss-Legendre 节点与权重"""
    if count < 1 or not lower < upper:
        raise InvalidArgumentError(f"非法的积分设置: [{lower}, {upper}], {count} 个节点")
    nodes, weights = np.polynomial.legendre.leggauss(count)
    half = 0.5 * (upper - lower)
    return [(np.array([lower + half * (x + 1.0)]), float(half * w)) for x, w in zip(nodes, weights)]


def best_linear_error(X: np.ndarray, samples: Iterable[Tuple[Any, np.ndarray, float]]) -> float:
    """
    Σ_k w_k min_a ||X a - x(s_k)||^2（无约束正交投影误差的加权和）
    Args:
        X: (p, n) 列满秩矩阵
        samples: [(s_k, x(s_k), w_k)]

    Returns: 加权误差

    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or np.linalg.matrix_rank(X) < X.shape[1]:
        raise InvalidArgumentError("X 必须列满秩")
    total = []
    for _, x, w in samples:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != X.shape[0]:
            raise InvalidArgumentError(f"样本长度 {x.size} 与 X 的行数 {X.shape[0]} 不一致")
        coef, *_ = scipy.linalg.lstsq(X, x)
        r = X @ coef - x
        total.append(float(w) * float(r @ r))
    return math.fsum(total)


def _param_spacing(points: Sequence[np.ndarray]) -> float:
    if len(points) == 1:
        return 1.0
    params = np.array([np.reshape(s, -1) for s in points], dtype=float)
    if params.shape[1] == 1:
        return float((params.max() - params.min()) / (len(points) - 1))
    return 1.0 / len(points)


def point_metrics(
        basis: BasisSet,
        model: ModelSystem,
        s,
        truth: Trajectory,
        opts: Optional[NewtonOptions] = None,
        counter: Optional[EvalCounter] = None,
        window: int = 0,
) -> PointMetrics:
    """单个扫描点的插值误差与残差，求解失败时返回 failed=True 的记录；window > 0 时只用最近的 window 个基"""
    s = np.asarray(s, dtype=float).reshape(-1)
    if not truth.grid.same_as(basis.grid):
        raise InvalidArgumentError("真解轨迹与基不在同一时间网格上")
    if 0 < window < basis.n:
        basis = select_window(basis, s, window)
    try:
        result = newton_solve(basis, s, model, opts, counter)
        approx = evaluate_history(basis, result.a)
        forcing = eval_counted_batch(model, counter, approx, basis.grid.points, s)
    except RmmError as e:
        logger.warning(f"{model.name} s={s.tolist()} 插值失败: {e}")
        nan = float("nan")
        return PointMetrics(s=s.tolist(), error=nan, residual=nan, rho_star=nan, max_cond=nan,
                            max_cond_truncated=nan, newton_iters=0, converged=False, failed=True,
                            message=str(e))

    dt = basis.grid.sq_weights
    derivative = np.tensordot(result.a, basis.F_hist, axes=1)
    error = math.fsum(dt * np.linalg.norm(approx - truth.states, axis=1))
    resid = math.fsum(dt * np.linalg.norm(derivative - forcing, axis=1))
    if not result.converged:
        logger.debug(f"{model.name} s={s.tolist()}: Newton 未收敛，ρ*={result.rho_star:.3e}")
    violations = conditioning_violations(result, basis.n)
    if violations:
        logger.warning(f"{model.name} s={s.tolist()}: {violations} 次迭代的最小奇异值超出上界")
    return PointMetrics(
        s=s.tolist(),
        error=error,
        residual=resid,
        rho_star=result.rho_star,
        max_cond=result.max_cond,
        max_cond_truncated=result.max_cond_truncated,
        newton_iters=result.iters,
        converged=result.converged,
        f_evals=result.f_evals,
        bound_violations=violations,
    )


def conditioning_violations(result: InterpolationResult, n: int, slack: float = CONDITION_BOUND_SLACK) -> int:
    """σ_min(R_k) > sqrt(n)·(||J_k||·||Δa|| + sqrt(ρ(a_k))) + slack 的迭代个数"""
    root_n = math.sqrt(n)
    return sum(1 for r in result.per_iter if r.sigma_min > root_n * r.residual_bound + slack)


def study_metrics(
        basis: BasisSet,
        model: ModelSystem,
        eval_points: Sequence[np.ndarray],
        grid: TimeGrid,
        truth: Sequence[Trajectory],
        opts: Optional[NewtonOptions] = None,
        ds: Optional[float] = None,
        jobs: int = 1,
        counter: Optional[EvalCounter] = None,
        window: int = 0,
) -> StudyMetrics:
    """
    E = Δs Σ_k Σ_i w_i^2 ||x̃(t_i, s_k) - x(t_i, s_k)||
    R = Δs Σ_k Σ_i w_i^2 ||F(t_i) a_k - f(x̃(t_i, s_k), t_i, s_k)||
    Args:
        basis: 基
        model: 动力系统
        eval_points: 扫描参数 s_k
        grid: 时间网格，须与基一致
        truth: 与 eval_points 对应的真解轨迹
        opts: Newton 选项
        ds: 参数方向权重 Δs，None 时按一维等距扫描推断
        jobs: 并行线程数
        counter: 共享计数器
        window: 每个扫描点使用的窗口大小，0 为全部基

    Returns: StudyMetrics

    """
    if len(eval_points) == 0:
        raise InvalidArgumentError("扫描点列表为空")
    if len(truth) != len(eval_points):
        raise InvalidArgumentError("真解轨迹数与扫描点数不一致")
    if not grid.same_as(basis.grid):
        raise InvalidArgumentError("时间网格与基的网格不一致")
    ds = _param_spacing(eval_points) if ds is None else float(ds)

    per_point = parallel_map(
        lambda k: point_metrics(basis, model, eval_points[k], truth[k], opts, counter, window),
        list(range(len(eval_points))),
        jobs,
    )
    ok = [p for p in per_point if not p.failed]
    n_failed = len(per_point) - len(ok)
    if n_failed:
        logger.warning(f"{model.name}: {n_failed}/{len(per_point)} 个扫描点求解失败，已从 E/R 中排除")
    return StudyMetrics(
        E=ds * math.fsum(p.error for p in ok),
        R=ds * math.fsum(p.residual for p in ok),
        ds=ds,
        per_point=per_point,
        n_failed=n_failed,
    )


def spearman_log_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """log x 与 log y 的秩相关系数，忽略非正或非有限的点"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if np.count_nonzero(keep) < 3:
        return float("nan")
    return float(scipy.stats.spearmanr(np.log(x[keep]), np.log(y[keep])).statistic)


def heat_refinement(
        domain: HeatDomain,
        s,
        kl: KLBasis,
        options: Optional[HeatSolverOptions] = None,
        cfg: Optional[QoIConfig] = None,
        levels: int = 2,
        factor: int = 2,
) -> List[HeatRefinementRecord]:
    """
    热传导求解器的自收敛记录：同一参数在逐级加密网格上求 t = eval_time 时的 QoI
    Args:
        domain: 最粗一级网格
        s: KL 参数
        kl: KL 基
        options: 求解器选项
        cfg: QoI 设置
        levels: 网格级数（含最粗一级）
        factor: 每级加密倍数

    Returns: 每级一条记录，change 为与上一级之差

    """
    if levels < 1 or factor < 2:
        raise InvalidArgumentError(f"非法的加密设置: levels={levels}, factor={factor}")
    cfg = cfg or QoIConfig()
    grid = TimeGrid(points=[cfg.eval_time], sq_weights=[1.0])
    records = []
    current = domain
    previous = None
    for _ in range(levels):
        traj = solve_heat(current, s, grid, kl, options)
        qoi = qoi_fraction(traj.states[-1], current, cfg)
        records.append(HeatRefinementRecord(
            nx=current.nx,
            ny=current.ny,
            qoi=qoi,
            change=abs(qoi - previous) if previous is not None else float("nan"),
            max_temp=float(np.max(traj.states[-1])),
            n_steps=traj.n_steps,
        ))
        logger.info(f"网格 {current.nx}×{current.ny}: Q={qoi:.6f}")
        previous = qoi
        current = current.refined(factor)
    return records


def write_rows_csv(path: str | Path, rows: List[Dict[str, Any]], fieldnames: Optional[List[str]] = None) -> Path:
    """按行写出 CSV，首行为列名"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    logger.info(f"写出 {path}（{len(rows)} 行）")
    return path


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def perpoint_rows(metrics: StudyMetrics) -> List[Dict[str, Any]]:
    return [
        {
            "s": p.s[0] if len(p.s) == 1 else " ".join(repr(v) for v in p.s),
            "rho_star": p.rho_star,
            "max_cond": p.max_cond,
            "max_cond_truncated": p.max_cond_truncated,
            "iters": p.newton_iters,
            "error": p.error,
            "converged": int(p.converged),
        }
        for p in metrics.per_point
    ]

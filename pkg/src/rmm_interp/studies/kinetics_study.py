"""
动力学算例：从两个端点基出发逐个扩充，记录每个基个数下的 E、R、特征值下界与条件数诊断

输出目录中的文件：
- convergence.csv：每个基个数一行
- perpoint_n{n}.csv：report_at 中各基个数下的逐点诊断
- trajectories.csv：两个端点参数的状态演化
- manifest.json
"""
import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..analysis import (
    best_linear_error,
    covariance_lower_bound,
    gauss_legendre_points,
    perpoint_rows,
    spearman_log_correlation,
    study_metrics,
    write_rows_csv,
)
from ..basis import BasisSet, Snapshot, assemble_basis, build_snapshot, greedy_next
from ..kinetics import S_MAX, S_MIN, T_END, initial_state, kinetics_model, param_grid
from ..model_api import EvalCounter, RmmError, make_time_grid, parallel_map
from ..ode_integrator import Trajectory, integrate
from ..schemas import BasisStrategy
from ..schemas.config import StudyConfig
from ..schemas.results import ConvergenceRow, LowerBoundReport, StudyMetrics
from . import write_manifest

logger = logging.getLogger(__name__)


class KineticsStudy:
    """动力学算例的收敛扫描"""

    def __init__(self, config: StudyConfig):
        self.config = config
        self.model = kinetics_model()
        self.grid = make_time_grid(0.0, T_END, config.n_times)
        self.candidates = [np.array([s]) for s in param_grid(config.n_params)]
        self.ds = (S_MAX - S_MIN) / config.n_params
        self.opts = config.newton_options()
        self.full_counter = EvalCounter()
        self.interp_counter = EvalCounter()
        self._truth: Dict[float, Trajectory] = {}
        self._lock = threading.Lock()

    def truth(self, s) -> Trajectory:
        """s 处的全模型轨迹，按参数值缓存"""
        key = float(np.reshape(s, -1)[0])
        with self._lock:
            cached = self._truth.get(key)
        if cached is not None:
            return cached
        opts = self.config.integrator
        traj = integrate(self.model, initial_state(), np.array([key]), self.grid,
                         opts.rel_tol, opts.abs_tol, self.full_counter, opts.max_steps)
        with self._lock:
            self._truth.setdefault(key, traj)
        return traj

    def snapshot(self, s) -> Snapshot:
        s = np.asarray(s, dtype=float).reshape(-1)
        return build_snapshot(self.model, s, initial_state(), self.grid, counter=self.full_counter,
                              solver=self.truth, snapshot_id=f"s_{float(s[0])!r}")

    def initial_basis(self) -> BasisSet:
        """参数区间两端各一个基"""
        return assemble_basis([self.snapshot([S_MIN]), self.snapshot([S_MAX])])

    def _stacked(self, s) -> np.ndarray:
        traj = self.truth(s)
        return (traj.states * self.grid.weights[:, None]).reshape(-1)

    def lower_bound(self) -> Tuple[LowerBoundReport, List[Tuple[np.ndarray, np.ndarray, float]]]:
        """
        Gauss-Legendre 积分点上的特征值下界，以及同一组加权样本（供 best_linear_error 使用）
        """
        quad = gauss_legendre_points(S_MIN, S_MAX, self.config.quad_nodes)
        report = covariance_lower_bound(self._stacked, quad, self.config.jobs)
        samples = [(s, self._stacked(s), w) for s, w in quad]
        logger.info(f"特征值下界: {len(quad)} 个积分点，θ_1={report.eigenvalues[0]:.4e}")
        return report, samples

    def _in_basis(self, basis: BasisSet) -> set:
        return {float(s[0]) for s in basis.params}

    def _next_greedy(self, basis: BasisSet, metrics: StudyMetrics, count: int) -> List[np.ndarray]:
        taken = self._in_basis(basis)
        scores = {float(p.s[0]): p.rho_star for p in metrics.per_point if not p.failed}
        pool = [c for c in self.candidates if float(c[0]) not in taken]
        if not pool:
            return []

        def lookup(s: np.ndarray) -> float:
            value = scores.get(float(s[0]))
            if value is None:
                raise RmmError(f"s={float(s[0])} 在本轮扫描中求解失败")
            return value

        choice = greedy_next(lookup, pool, top_k=count)
        logger.info(f"n={basis.n}: 贪心选取 s={float(choice.s_next[0]):.6f}，ρ*_max={choice.rho_max:.3e}")
        return [pool[i] for i in choice.indices]

    def _next_random(self, basis: BasisSet, order: Sequence[int], count: int) -> List[np.ndarray]:
        taken = self._in_basis(basis)
        picked = []
        for i in order:
            s = self.candidates[i]
            if float(s[0]) not in taken:
                picked.append(s)
                if len(picked) == count:
                    break
        return picked

    def _row(self, basis: BasisSet, metrics: StudyMetrics, report: LowerBoundReport, samples) -> ConvergenceRow:
        ok = [p for p in metrics.per_point if not p.failed]
        return ConvergenceRow(
            n_bases=basis.n,
            E=metrics.E,
            R=metrics.R,
            bound=report.bound(basis.n),
            best_linear=best_linear_error(basis.stacked_X, samples),
            avg_newton_iters=metrics.avg_newton_iters,
            avg_f_evals=metrics.avg_f_evals,
            n_failed=metrics.n_failed,
            cond_violations=metrics.bound_violations,
            rank_corr=spearman_log_correlation([p.max_cond for p in ok], [p.rho_star for p in ok]),
        )

    def write_trajectories(self, out_dir: Path) -> Path:
        rows = []
        for s in (S_MIN, S_MAX):
            traj = self.truth([s])
            for t, (u, v, w) in zip(self.grid.points, traj.states):
                rows.append({"s": s, "t": t, "u": u, "v": v, "w": w})
        return write_rows_csv(out_dir / "trajectories.csv", rows, ["s", "t", "u", "v", "w"])

    def run(self, out_dir: Optional[str | Path] = None) -> List[ConvergenceRow]:
        """
        执行扫描并写出全部 CSV
        Args:
            out_dir: 输出目录，None 时取配置中的 out

        Returns: 每个基个数一行的汇总

        """
        cfg = self.config
        root = Path(out_dir or cfg.out)
        root.mkdir(parents=True, exist_ok=True)
        target = cfg.resolved_n_bases
        window = cfg.resolved_window
        logger.info(f"动力学算例: 策略 {cfg.strategy.value}，目标基个数 {target}，"
                    f"{len(self.candidates)} 个参数点 × {self.grid.m} 个时间点")

        truth = parallel_map(self.truth, self.candidates, cfg.jobs)
        report, samples = self.lower_bound()
        order = np.random.default_rng(cfg.seed).permutation(len(self.candidates))

        files = [self.write_trajectories(root)]
        basis = self.initial_basis()
        rows: List[ConvergenceRow] = []
        while True:
            metrics = study_metrics(basis, self.model, self.candidates, self.grid, truth, self.opts,
                                    ds=self.ds, jobs=cfg.jobs, counter=self.interp_counter, window=window)
            row = self._row(basis, metrics, report, samples)
            logger.info(f"n={row.n_bases}: E={row.E:.4e}, R={row.R:.4e}, 下界={row.bound:.4e}, "
                        f"平均迭代 {row.avg_newton_iters:.2f}")
            if basis.n in cfg.report_at:
                files.append(write_rows_csv(root / f"perpoint_n{basis.n}.csv", perpoint_rows(metrics)))
            if basis.n >= target:
                rows.append(row)
                break

            count = min(cfg.greedy_batch, target - basis.n)
            if cfg.strategy == BasisStrategy.GREEDY:
                added = self._next_greedy(basis, metrics, count)
            else:
                added = self._next_random(basis, order, count)
            if not added:
                logger.warning("候选参数点已全部加入基，提前结束扫描")
                rows.append(row)
                break
            rows.append(row.model_copy(update={"s_added": " ".join(repr(float(s[0])) for s in added)}))
            snapshots = parallel_map(self.snapshot, added, cfg.jobs)
            basis = assemble_basis(list(basis.snapshots) + snapshots)

        files.append(write_rows_csv(root / "convergence.csv", [r.model_dump() for r in rows],
                                    list(ConvergenceRow.model_fields)))
        logger.info(f"全模型右端调用 {self.full_counter.count} 次，插值右端调用 {self.interp_counter.count} 次")
        write_manifest(root, cfg, files, {
            "n_bases_final": basis.n,
            "basis_params": [float(s[0]) for s in basis.params],
        })
        return rows

"""
热传导算例：随机热导率下的交叉验证

每次重复抽取 n_bases + n_crossval 个标准正态参数，前 n_bases 个生成基，其余作为交叉验证点；
插值只在 t = 70 s 一个时间点上进行（m = 1，w^2 = 1），对比全部基与窗口基的 QoI 误差和右端调用次数。
"""
import hashlib
import logging
import math
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..analysis import heat_refinement, write_rows_csv
from ..basis import BasisSet, assemble_basis, build_snapshot, select_window
from ..conductivity import build_kl_basis, standard_normal_draws
from ..heat_model import HeatDomain, QoIConfig, heat_model_system, qoi_fraction, solve_heat
from ..interpolator import evaluate_state, newton_solve
from ..model_api import EvalCounter, RmmError, TimeGrid, parallel_map
from ..ode_integrator import Trajectory
from ..schemas.config import StudyConfig
from ..schemas.results import CrossValRow, HeatRefinementRecord
from . import write_manifest

logger = logging.getLogger(__name__)


def param_hash(s) -> str:
    """参数向量的短哈希，用作交叉验证行的标识"""
    data = np.ascontiguousarray(np.asarray(s, dtype=float).reshape(-1)).tobytes()
    return hashlib.sha1(data).hexdigest()[:12]


class HeatStudy:
    """热传导算例的交叉验证"""

    def __init__(self, config: StudyConfig):
        self.config = config
        self.domain = HeatDomain(**config.heat_grid.model_dump())
        self.kl = build_kl_basis(config.kl.nodes, config.kl.corr_length, config.kl.modes)
        self.model = heat_model_system(self.domain, self.kl)
        self.qoi = QoIConfig()
        self.grid = TimeGrid(points=[self.qoi.eval_time], sq_weights=[1.0])
        self.opts = config.newton_options()
        self.full_counter = EvalCounter()

    def solve(self, s) -> Trajectory:
        return solve_heat(self.domain, s, self.grid, self.kl, self.config.heat_solver, self.full_counter)

    def draws(self, repeat: int) -> Tuple[np.ndarray, np.ndarray]:
        """第 repeat 次实验的 (基参数, 交叉验证参数)，种子为 seed + repeat"""
        n_bases = self.config.resolved_n_bases
        total = standard_normal_draws(self.config.seed + repeat, n_bases + self.config.n_crossval, self.kl.d)
        return total[:n_bases], total[n_bases:]

    def build_basis(self, params: np.ndarray) -> BasisSet:
        x0 = self.domain.initial_state()
        snapshots = parallel_map(
            lambda j: build_snapshot(self.model, params[j], x0, self.grid, counter=self.full_counter,
                                     solver=self.solve, snapshot_id=f"draw_{j:03d}"),
            list(range(len(params))),
            self.config.jobs,
        )
        return assemble_basis(snapshots)

    def _interpolate(self, basis: BasisSet, s: np.ndarray) -> Tuple[float, int, bool]:
        try:
            result = newton_solve(basis, s, self.model, self.opts)
        except RmmError as e:
            logger.warning(f"s={param_hash(s)} 插值失败 (n={basis.n}): {e}")
            return float("nan"), 0, False
        state = evaluate_state(basis, result.a, 0)
        return qoi_fraction(state, self.domain, self.qoi), result.f_evals, result.converged

    def crossval_row(self, basis: BasisSet, s: np.ndarray, repeat: int = 0) -> CrossValRow:
        """
        一个交叉验证点：真解 QoI、全部基与窗口基的插值 QoI
        Args:
            basis: 完整基
            s: 交叉验证参数
            repeat: 重复编号

        Returns: CrossValRow

        """
        q_true = qoi_fraction(self.solve(s).states[-1], self.domain, self.qoi)
        q_full, fevals_full, conv_full = self._interpolate(basis, s)
        window = self.config.resolved_window
        if window == 0 or window >= basis.n:
            q_win, fevals_win, conv_win = q_full, fevals_full, conv_full
        else:
            q_win, fevals_win, conv_win = self._interpolate(select_window(basis, s, window), s)
        return CrossValRow(
            s_hash=param_hash(s),
            repeat=repeat,
            Q_true=q_true,
            Q_full=q_full,
            Q_windowed=q_win,
            err_full=abs(q_full - q_true),
            err_win=abs(q_win - q_true),
            fevals_full=fevals_full,
            fevals_win=fevals_win,
            converged_full=conv_full,
            converged_win=conv_win,
        )

    def run_repeat(self, repeat: int) -> List[CrossValRow]:
        basis_params, cv_params = self.draws(repeat)
        logger.info(f"第 {repeat} 次实验: 生成 {len(basis_params)} 个基")
        basis = self.build_basis(basis_params)
        logger.info(f"第 {repeat} 次实验: {len(cv_params)} 个交叉验证点，窗口 M={self.config.resolved_window}")
        return parallel_map(lambda s: self.crossval_row(basis, s, repeat), list(cv_params), self.config.jobs)

    def run(self, out_dir: Optional[str | Path] = None) -> List[CrossValRow]:
        """
        执行全部重复实验并写出 crossval.csv
        Args:
            out_dir: 输出目录，None 时取配置中的 out

        Returns: 全部交叉验证行

        """
        cfg = self.config
        root = Path(out_dir or cfg.out)
        root.mkdir(parents=True, exist_ok=True)
        rows: List[CrossValRow] = []
        for repeat in range(cfg.repeats):
            rows.extend(self.run_repeat(repeat))

        files = [write_rows_csv(root / "crossval.csv", [r.model_dump() for r in rows],
                                list(CrossValRow.model_fields))]
        if cfg.refinement:
            records = heat_refinement(self.domain, np.zeros(self.kl.d), self.kl, cfg.heat_solver, self.qoi)
            files.append(write_rows_csv(root / "heat_refinement.csv", [r.model_dump() for r in records],
                                        list(HeatRefinementRecord.model_fields)))

        summary = summarize(rows)
        logger.info(f"热传导算例: 平均误差 全部 {summary['mean_err_full']:.4e} / 窗口 {summary['mean_err_win']:.4e}，"
                    f"平均右端调用 全部 {summary['mean_fevals_full']:.1f} / 窗口 {summary['mean_fevals_win']:.1f}")
        write_manifest(root, cfg, files, {
            "seeds": [cfg.seed + r for r in range(cfg.repeats)],
            "kl": {
                "corr_length": self.kl.corr_length,
                "d": self.kl.d,
                "captured_fraction": self.kl.captured_fraction,
            },
            "state_layout": f"(ny, nx) = ({self.domain.ny}, {self.domain.nx}) 行优先展平",
            "summary": summary,
        })
        return rows


def summarize(rows: List[CrossValRow]) -> dict:
    """交叉验证结果的平均误差与平均右端调用次数（忽略失败的行）"""
    def mean(values) -> float:
        values = [v for v in values if math.isfinite(v)]
        return float(np.mean(values)) if values else float("nan")

    ok = [r for r in rows if math.isfinite(r.Q_full) and math.isfinite(r.Q_windowed)]
    return {
        "mean_err_full": mean(r.err_full for r in ok),
        "mean_err_win": mean(r.err_win for r in ok),
        "mean_fevals_full": mean(r.fevals_full for r in ok),
        "mean_fevals_win": mean(r.fevals_win for r in ok),
        "n_failed": len(rows) - len(ok),
    }

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class IterationRecord(BaseModel):
    """单次 Newton 迭代的诊断"""
    iteration: int
    rho: float = Field(description="当前迭代点的残差 ρ(a_k)")
    step_norm: float = Field(description="实际接受的步长 ||a_{k+1} - a_k||")
    newton_step_norm: float = Field(description="约束最小二乘给出的完整 Newton 步长")
    sigma_min: float = Field(description="R_k 的最小奇异值")
    cond: float = Field(description="R_k 的条件数")
    cond_truncated: float = Field(description="截断后保留块的条件数")
    trunc_rank: int = Field(description="保留的奇异方向个数")
    f_evals: int = Field(description="本次迭代的右端调用次数")
    jac_norm: float = Field(description="有限差分雅可比 J_k 的谱范数")
    linear_residual: float = Field(description="线性化残差 ||R_k a_{k+1}||")
    residual_bound: float = Field(description="||J_k||·||a_{k+1} - a_k|| + sqrt(ρ(a_k))")
    step_scale: float = Field(default=1.0, description="步长减半后的比例")


class InterpolationResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    a: np.ndarray = Field(description="仿射系数，e^T a = 1")
    rho_star: float = Field(ge=0, description="最小残差 ρ*")
    iters: int = Field(description="完成的 Newton 迭代次数")
    per_iter: List[IterationRecord] = Field(default_factory=list)
    converged: bool
    stagnated: bool = Field(default=False, description="因步长停滞或阻尼连续失败而停止，且未满足收敛判据")
    f_evals: int = Field(default=0, description="本次插值的右端调用总数")
    initial_rho: float = Field(default=float("nan"), description="初始猜测处的残差")

    @property
    def max_cond(self) -> float:
        return max((r.cond for r in self.per_iter), default=float("nan"))

    @property
    def max_cond_truncated(self) -> float:
        return max((r.cond_truncated for r in self.per_iter), default=float("nan"))


class PointMetrics(BaseModel):
    s: List[float]
    error: float = Field(description="Σ_i w_i^2 ||x̃(t_i) - x(t_i)||")
    residual: float = Field(description="Σ_i w_i^2 ||dx̃/dt - f(x̃, t_i, s)||")
    rho_star: float
    max_cond: float
    max_cond_truncated: float
    newton_iters: int
    converged: bool
    f_evals: int = 0
    bound_violations: int = Field(default=0, description="σ_min(R_k) 超过 sqrt(n)·(||J||·||Δa|| + sqrt(ρ)) 的迭代数")
    failed: bool = False
    message: Optional[str] = None


class StudyMetrics(BaseModel):
    """扫描点上的平均误差 E 与平均残差 R"""
    E: float = Field(ge=0)
    R: float = Field(ge=0)
    ds: float = Field(description="参数方向的积分权重 Δs")
    per_point: List[PointMetrics]
    n_failed: int = 0

    @property
    def avg_newton_iters(self) -> float:
        ok = [p.newton_iters for p in self.per_point if not p.failed]
        return float(np.mean(ok)) if ok else float("nan")

    @property
    def bound_violations(self) -> int:
        return sum(p.bound_violations for p in self.per_point)

    @property
    def avg_f_evals(self) -> float:
        ok = [p.f_evals for p in self.per_point if not p.failed]
        return float(np.mean(ok)) if ok else float("nan")


class LowerBoundReport(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    eigenvalues: np.ndarray = Field(description="θ_1 ≥ … ≥ θ_p ≥ 0")
    tail_bounds: np.ndarray = Field(description="第 n 个元素为 sqrt(Σ_{k>n} θ_k^2)，n = 0..p")

    def bound(self, n: int) -> float:
        n = min(max(int(n), 0), self.eigenvalues.size)
        return float(self.tail_bounds[n])


class HeatRefinementRecord(BaseModel):
    """同一参数在逐级加密网格上的 QoI"""
    nx: int
    ny: int
    qoi: float = Field(ge=0, le=1, description="t = eval_time 时超过临界温度的面积比例")
    change: float = Field(default=float("nan"), description="与上一级网格 QoI 之差的绝对值")
    max_temp: float = Field(description="终了时刻最高温度 (°C)")
    n_steps: int = 0


class ConvergenceRow(BaseModel):
    """动力学算例中某个基个数下的汇总指标"""
    n_bases: int
    E: float
    R: float
    bound: float = Field(description="特征值尾部下界 sqrt(Σ_{k>n} θ_k^2)")
    best_linear: float = Field(description="当前基的无约束最优线性逼近误差（积分点加权）")
    avg_newton_iters: float
    avg_f_evals: float
    n_failed: int = 0
    cond_violations: int = Field(default=0, description="最小奇异值上界被违反的迭代总数")
    rank_corr: float = Field(default=float("nan"), description="log max_cond 与 log ρ* 的秩相关系数")
    s_added: Optional[str] = Field(default=None, description="下一轮加入的参数点")


class CrossValRow(BaseModel):
    """热传导交叉验证的一行"""
    s_hash: str
    repeat: int = 0
    Q_true: float
    Q_full: float
    Q_windowed: float
    err_full: float
    err_win: float
    fevals_full: int
    fevals_win: int
    converged_full: bool
    converged_win: bool

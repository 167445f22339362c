from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from . import Damping, TauMode


class NewtonOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iters: int = Field(default=10, ge=0, description="最大 Newton 迭代次数")
    # None 时取 1e-12·mp
    resid_tol: Optional[float] = Field(default=None, gt=0, description="ρ(a_k) 不超过该值即停止")
    step_tol: float = Field(default=1e-10, gt=0, description="||a_{k+1} - a_k|| 不超过该值即停止")
    fd_eps: float = Field(default=1e-6, gt=0, description="有限差分步长 ε，按 (1 + ||X_i a||_∞) 缩放")
    trunc_tau: float = Field(default=1e-10, ge=0, description="SVD 截断容差 τ")
    tau_mode: TauMode = Field(default=TauMode.RELATIVE, description="τ 为相对 (1 + λ_n) 还是绝对")
    rank_tol: float = Field(default=1e-12, gt=0, description="相对 σ_1 的数值秩阈值")
    damping: Damping = Field(default=Damping.OFF, description="步长策略")
    max_halvings: int = Field(default=20, ge=1, description="步长减半的最多次数")


class IntegratorOptions(BaseModel):
    """显式自适应积分器的容差"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    rel_tol: float = Field(default=1e-8, gt=0)
    abs_tol: float = Field(default=1e-10, gt=0)
    max_steps: int = Field(default=1_000_000, ge=1)


class HeatSolverOptions(BaseModel):
    """隐式 BDF 热传导求解器的选项"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    rel_tol: float = Field(default=1e-4, gt=0, description="局部截断误差相对容差")
    abs_tol: float = Field(default=1e-2, gt=0, description="局部截断误差绝对容差 (°C)")
    # 1 阶时每步都是 M 矩阵方程组，离散极值原理严格成立
    max_order: int = Field(default=1, ge=1, le=2, description="BDF 最高阶数")
    inner_tol: float = Field(default=1e-8, gt=0, description="不动点内迭代的相对残差容差")
    max_inner: int = Field(default=60, ge=1, description="内迭代最大次数")
    relaxation: float = Field(default=1.0, gt=0, le=1, description="不动点迭代的阻尼系数")
    h_init: float = Field(default=0.05, gt=0, description="初始时间步 (s)")
    h_min: float = Field(default=1e-8, gt=0, description="最小时间步 (s)")
    h_max: float = Field(default=5.0, gt=0, description="最大时间步 (s)")

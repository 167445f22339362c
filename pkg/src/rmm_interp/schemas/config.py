import math
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import BasisStrategy, Damping, StudyKind, TauMode
from .options import HeatSolverOptions, IntegratorOptions, NewtonOptions


class HeatGridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nx: int = Field(default=21, ge=2)
    ny: int = Field(default=41, ge=2)
    lx: float = Field(default=0.1, gt=0, description="宽度 (m)")
    ly: float = Field(default=0.2, gt=0, description="高度 (m)")
    rho_c: float = Field(default=3.6e6, gt=0, description="体积热容 J/(m^3·K)")
    dirichlet_segments: bool = Field(default=True, description="False 时四边均为绝热")


class KLConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nodes: int = Field(default=600, ge=2, description="[0, 1250] °C 上的温度节点数")
    modes: int = Field(default=11, ge=1, description="KL 截断数 d")
    corr_length: float = Field(default=math.sqrt(500.0), gt=0, description="相关长度 γ (°C)")


class StudyConfig(BaseModel):
    """
    一次算例运行的完整配置，可由 YAML/JSON 文件与命令行参数共同给出
    """
    model_config = ConfigDict(extra="forbid")

    study: StudyKind = StudyKind.KINETICS
    strategy: BasisStrategy = Field(default=BasisStrategy.GREEDY, description="动力学算例的基选取策略")
    seed: int = Field(default=0, ge=0, description="随机种子")
    # None 时取算例默认值：动力学 40，热传导 20
    n_bases: Optional[int] = Field(default=None, ge=1, description="基的个数")
    greedy_batch: int = Field(default=1, ge=1, description="每轮贪心加入的点数")
    report_at: List[int] = Field(default_factory=lambda: [5, 10, 20, 40], description="写逐点 CSV 的基个数")
    # None 时取算例默认值：动力学 0，热传导 5；0 表示使用全部基
    window: Optional[int] = Field(default=None, ge=0, description="窗口大小 M")

    trunc_tau: float = Field(default=1e-10, ge=0)
    tau_mode: TauMode = TauMode.RELATIVE
    max_newton: int = Field(default=10, ge=0)
    fd_eps: float = Field(default=1e-6, gt=0)
    damping: Damping = Damping.OFF

    n_params: int = Field(default=300, ge=2, description="动力学扫描网格的参数点数")
    n_times: int = Field(default=300, ge=1, description="动力学时间网格点数")
    quad_nodes: int = Field(default=200, ge=1, description="下界使用的 Gauss-Legendre 节点数")
    n_crossval: int = Field(default=100, ge=1, description="热传导交叉验证点数")
    repeats: int = Field(default=1, ge=1, description="热传导实验重复次数")
    refinement: bool = Field(default=False, description="热传导算例是否额外写出网格自收敛记录")

    heat_grid: HeatGridConfig = Field(default_factory=HeatGridConfig)
    kl: KLConfig = Field(default_factory=KLConfig)
    integrator: IntegratorOptions = Field(default_factory=IntegratorOptions)
    heat_solver: HeatSolverOptions = Field(default_factory=HeatSolverOptions)

    jobs: int = Field(default=1, ge=1, description="并行线程数")
    out: str = Field(default="results", description="输出目录")

    @model_validator(mode="after")
    def _check(self) -> "StudyConfig":
        if self.kl.modes > self.kl.nodes:
            raise ValueError("KL 截断数不能超过温度节点数")
        if self.resolved_window > self.resolved_n_bases:
            raise ValueError(f"窗口大小 {self.resolved_window} 超过基的个数 {self.resolved_n_bases}")
        if self.study == StudyKind.KINETICS and self.resolved_n_bases < 2:
            raise ValueError("动力学算例从两个端点基开始，基的个数至少为 2")
        return self

    @property
    def resolved_n_bases(self) -> int:
        if self.n_bases is not None:
            return self.n_bases
        return 40 if self.study == StudyKind.KINETICS else 20

    @property
    def resolved_window(self) -> int:
        if self.window is not None:
            return self.window
        return 0 if self.study == StudyKind.KINETICS else 5

    def newton_options(self) -> NewtonOptions:
        return NewtonOptions(
            max_iters=self.max_newton,
            fd_eps=self.fd_eps,
            trunc_tau=self.trunc_tau,
            tau_mode=self.tau_mode,
            damping=self.damping,
        )

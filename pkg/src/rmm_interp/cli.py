import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .analysis import write_rows_csv
from .basis import assemble_basis, load_store, read_manifest, save_store, window_indices
from .conductivity import build_kl_basis, export_kl, standard_normal_draws
from .heat_model import HeatDomain, heat_model_system
from .interpolator import evaluate_state, newton_solve
from .kinetics import kinetics_model
from .model_api import (
    EvalCounter,
    InvalidArgumentError,
    ModelSystem,
    RmmError,
    StoreLoadError,
    parallel_map,
)
from .schemas import BasisStrategy, StudyKind, TauMode
from .schemas.config import HeatGridConfig, KLConfig, StudyConfig
from .schemas.store import StoreManifest
from .settings import get_settings, resolve_study_config, setup_logging, validate_model
from .studies.heat_study import HeatStudy
from .studies.kinetics_study import KineticsStudy

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


def _parse_param(text: str) -> np.ndarray:
    """'0.1' 或 '0.1,0.2,...' -> 参数向量"""
    try:
        return np.array([float(part) for part in text.split(",")], dtype=float)
    except ValueError as e:
        raise InvalidArgumentError(f"无法解析参数 '{text}'") from e


def _overrides(args: argparse.Namespace, names: List[str]) -> Dict[str, Any]:
    return {name: getattr(args, name, None) for name in names}


def _resolve_config(args: argparse.Namespace, study: StudyKind, names: List[str]) -> StudyConfig:
    overrides = _overrides(args, names)
    overrides["study"] = study.value
    overrides["jobs"] = args.jobs
    return resolve_study_config(args.config, overrides, defaults={"jobs": get_settings().jobs})


def _store_metadata(config: StudyConfig) -> Dict[str, Any]:
    metadata: Dict[str, Any] = {"study": config.study.value, "seed": config.seed}
    if config.study == StudyKind.HEAT:
        metadata["heat_grid"] = config.heat_grid.model_dump()
        metadata["kl"] = config.kl.model_dump()
        metadata["state_layout"] = f"(ny, nx) = ({config.heat_grid.ny}, {config.heat_grid.nx}) 行优先展平"
    return metadata


def model_from_manifest(manifest: StoreManifest, path: str) -> ModelSystem:
    """根据快照库 manifest 中记录的算例重建动力系统"""
    study = manifest.metadata.get("study", StudyKind.KINETICS.value)
    if study == StudyKind.KINETICS.value:
        return kinetics_model()
    if study == StudyKind.HEAT.value:
        grid_cfg = validate_model(HeatGridConfig, manifest.metadata.get("heat_grid", {}))
        kl_cfg = validate_model(KLConfig, manifest.metadata.get("kl", {}))
        domain = HeatDomain(**grid_cfg.model_dump())
        return heat_model_system(domain, build_kl_basis(kl_cfg.nodes, kl_cfg.corr_length, kl_cfg.modes))
    raise StoreLoadError(f"未知的算例类型 '{study}'", path=path, field="metadata.study")


def cmd_snapshot(args: argparse.Namespace) -> int:
    """对每个参数点运行全模型并写出快照库"""
    config = _resolve_config(args, StudyKind(args.study), ["seed", "n_times"])
    params = [_parse_param(p) for p in args.param or []]
    if config.study == StudyKind.HEAT:
        study = HeatStudy(config)
        if args.draws:
            params.extend(standard_normal_draws(config.seed, args.draws, study.kl.d))
        if not params:
            raise InvalidArgumentError("请通过 --param 或 --draws 指定至少一个参数点")
        if any(p.size != study.kl.d for p in params):
            raise InvalidArgumentError(f"热传导参数须为 {study.kl.d} 维")
        basis = study.build_basis(np.array(params))
        counter = study.full_counter
    else:
        if args.draws:
            raise InvalidArgumentError("--draws 只适用于热传导算例")
        if not params:
            raise InvalidArgumentError("请通过 --param 指定至少一个参数点")
        study = KineticsStudy(config)
        snapshots = parallel_map(study.snapshot, params, config.jobs)
        basis = assemble_basis(snapshots)
        counter = study.full_counter
    save_store(basis, args.store, _store_metadata(config))
    print(f"已写入 {basis.n} 个快照到 {args.store}，全模型右端调用 {counter.count} 次")
    return EXIT_OK


def cmd_interp(args: argparse.Namespace) -> int:
    """在快照库上对一个参数点做残差最小化插值"""
    basis = load_store(args.store)
    manifest = read_manifest(args.store)
    model = model_from_manifest(manifest, str(Path(args.store) / "manifest.json"))
    s = _parse_param(args.param)
    config = _resolve_config(args, StudyKind(manifest.metadata.get("study", "kinetics")),
                             ["trunc_tau", "max_newton", "fd_eps", "tau_mode"])
    window = args.window or 0
    indices = window_indices(basis, s, window) if window > 0 else list(range(basis.n))
    sub = basis.subset(indices) if len(indices) < basis.n else basis

    counter = EvalCounter()
    result = newton_solve(sub, s, model, config.newton_options(), counter)
    coefficients = np.zeros(basis.n)
    coefficients[indices] = result.a
    time_indices = args.time_index or [basis.m - 1]

    summary = {
        "s": s.tolist(),
        "rho_star": result.rho_star,
        "converged": result.converged,
        "stagnated": result.stagnated,
        "iters": result.iters,
        "f_evals": result.f_evals,
        "max_cond": result.max_cond,
        "window": indices,
        "coefficients": coefficients.tolist(),
    }
    print(json.dumps(summary, indent=2, ensure_ascii=False))
    if not result.converged:
        logger.warning(f"插值未收敛，返回残差最小的迭代点 (ρ*={result.rho_star:.3e})")

    if args.out:
        out = Path(args.out)
        write_rows_csv(out / "coefficients.csv", [
            {"index": j, "snapshot_id": snap.snapshot_id, "s": " ".join(repr(v) for v in snap.param.tolist()),
             "coefficient": coefficients[j]}
            for j, snap in enumerate(basis.snapshots)
        ], ["index", "snapshot_id", "s", "coefficient"])
        header = ["time_index", "t"] + [f"x{k + 1}" for k in range(basis.p)]
        rows = []
        for i in time_indices:
            state = evaluate_state(sub, result.a, i)
            rows.append(dict(zip(header, [i, float(basis.grid.points[i])] + state.tolist())))
        write_rows_csv(out / "state.csv", rows, header)
    return EXIT_OK


STUDY_FLAGS = ["seed", "n_bases", "window", "trunc_tau", "tau_mode", "max_newton", "fd_eps", "out"]


def cmd_study_kinetics(args: argparse.Namespace) -> int:
    config = _resolve_config(args, StudyKind.KINETICS,
                             STUDY_FLAGS + ["strategy", "greedy_batch", "n_params", "n_times", "quad_nodes"])
    rows = KineticsStudy(config).run()
    last = rows[-1]
    print(f"n={last.n_bases}: E={last.E:.4e}, R={last.R:.4e}，结果已写入 {config.out}")
    return EXIT_OK


def cmd_study_heat(args: argparse.Namespace) -> int:
    config = _resolve_config(args, StudyKind.HEAT, STUDY_FLAGS + ["n_crossval", "repeats", "refinement"])
    rows = HeatStudy(config).run()
    print(f"{len(rows)} 个交叉验证点，结果已写入 {config.out}")
    return EXIT_OK


def cmd_kl_export(args: argparse.Namespace) -> int:
    config = _resolve_config(args, StudyKind.HEAT, ["seed", "out"])
    kl = build_kl_basis(config.kl.nodes, config.kl.corr_length, config.kl.modes)
    written = export_kl(kl, config.out, args.realizations or 0, config.seed)
    print(f"KL 截断 d={kl.d}，保留方差比例 {kl.captured_fraction:.6f}，写出 {len(written)} 个文件到 {config.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="YAML/JSON 配置文件")
    common.add_argument("--log-level", type=str, default=None, help="日志级别，默认取 RMM_LOG_LEVEL")
    common.add_argument("--jobs", type=int, default=None, help="并行线程数，默认取 RMM_JOBS")

    newton = argparse.ArgumentParser(add_help=False)
    newton.add_argument("--window", type=int, default=None, help="窗口大小 M，0 表示使用全部基")
    newton.add_argument("--trunc-tau", dest="trunc_tau", type=float, default=None, help="SVD 截断容差 τ")
    newton.add_argument("--tau-mode", dest="tau_mode", choices=[m.value for m in TauMode], default=None)
    newton.add_argument("--max-newton", dest="max_newton", type=int, default=None, help="最大 Newton 迭代次数")
    newton.add_argument("--fd-eps", dest="fd_eps", type=float, default=None, help="有限差分步长 ε")

    parser = argparse.ArgumentParser(prog="rmm-interp", description="残差最小化模型插值")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("snapshot", parents=[common], help="生成快照库")
    p.add_argument("--study", choices=[k.value for k in StudyKind], default=StudyKind.KINETICS.value)
    p.add_argument("--param", action="append", help="参数点，向量分量以逗号分隔；可重复")
    p.add_argument("--draws", type=int, default=0, help="热传导算例：抽取的标准正态参数个数")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-times", dest="n_times", type=int, default=None, help="动力学时间网格点数")
    p.add_argument("--store", type=str, required=True, help="快照库目录")
    p.set_defaults(handler=cmd_snapshot)

    p = sub.add_parser("interp", parents=[common, newton], help="在快照库上插值一个参数点")
    p.add_argument("--store", type=str, required=True, help="快照库目录")
    p.add_argument("--param", type=str, required=True, help="查询参数，向量分量以逗号分隔")
    p.add_argument("--time-index", dest="time_index", type=int, action="append", help="输出状态的时间下标；可重复")
    p.add_argument("--out", type=str, default=None, help="写出 coefficients.csv 与 state.csv 的目录")
    p.set_defaults(handler=cmd_interp)

    p = sub.add_parser("study-kinetics", parents=[common, newton], help="动力学收敛扫描")
    p.add_argument("--n-bases", dest="n_bases", type=int, default=None)
    p.add_argument("--strategy", choices=[b.value for b in BasisStrategy], default=None)
    p.add_argument("--greedy-batch", dest="greedy_batch", type=int, default=None)
    p.add_argument("--n-params", dest="n_params", type=int, default=None)
    p.add_argument("--n-times", dest="n_times", type=int, default=None)
    p.add_argument("--quad-nodes", dest="quad_nodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(handler=cmd_study_kinetics)

    p = sub.add_parser("study-heat", parents=[common, newton], help="热传导交叉验证")
    p.add_argument("--n-bases", dest="n_bases", type=int, default=None)
    p.add_argument("--n-crossval", dest="n_crossval", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--refinement", action="store_true", default=None, help="额外写出网格自收敛记录")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(handler=cmd_study_heat)

    p = sub.add_parser("kl-export", parents=[common], help="导出 KL 模态、特征值与热导率实现")
    p.add_argument("--realizations", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(handler=cmd_kl_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "handler", None) is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except (InvalidArgumentError, StoreLoadError, OSError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RmmError as e:
        logger.error(f"{args.command} 数值计算失败: {e}")
        print(f"数值计算失败: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

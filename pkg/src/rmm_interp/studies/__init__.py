"""
两个内置算例的驱动：动力学收敛扫描与热传导交叉验证
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..schemas.config import StudyConfig
from ..settings import package_version

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def write_manifest(
        out_dir: str | Path,
        config: StudyConfig,
        files: List[Path],
        extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    写出算例 manifest：解析后的完整配置、种子、代码版本与产物列表
    Args:
        out_dir: 输出目录
        config: 解析后的配置
        files: 本次写出的文件
        extra: 算例特有的记录

    Returns: manifest 路径

    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    payload = {
        "study": config.study.value,
        "version": package_version(),
        "seed": config.seed,
        "config": config.model_dump(mode="json"),
        "files": sorted(Path(f).name for f in files),
    }
    payload.update(extra or {})
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False, allow_nan=True), encoding="utf-8")
    logger.info(f"算例 manifest 已写入 {path}")
    return path

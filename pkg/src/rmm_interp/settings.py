"""
运行环境：.env 环境变量、YAML/JSON 配置文件与日志设置
"""
import json
import logging
import logging.config
import os
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from .model_api import InvalidArgumentError
from .schemas.config import StudyConfig

logger = logging.getLogger(__name__)

# 加载环境变量
load_dotenv()

DEFAULT_LOG_CONFIG = "logging.yaml"

_M = TypeVar("_M", bound=BaseModel)


class Settings(BaseModel):
    log_level: str = Field(default="INFO", description="RMM_LOG_LEVEL")
    jobs: int = Field(default=1, ge=1, description="RMM_JOBS")
    log_config: Optional[str] = Field(default=None, description="RMM_LOG_CONFIG")


def get_settings() -> Settings:
    """从环境变量读取运行设置"""
    return validate_model(Settings, {
        "log_level": os.getenv("RMM_LOG_LEVEL", "INFO"),
        "jobs": os.getenv("RMM_JOBS", "1"),
        "log_config": os.getenv("RMM_LOG_CONFIG"),
    })


def validate_model(cls: Type[_M], data: Dict[str, Any]) -> _M:
    """校验配置数据，失败时转换为 InvalidArgumentError"""
    try:
        return cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or cls.__name__
        raise InvalidArgumentError(f"配置项 {field} 非法: {first['msg']}") from e


def setup_logging(level: Optional[str] = None, config_path: Optional[str] = None) -> None:
    """
    配置日志：优先使用 logging.yaml（或 RMM_LOG_CONFIG 指定的文件），否则 basicConfig
    Args:
        level: 覆盖根日志级别
        config_path: 日志配置文件路径
    """
    settings = get_settings()
    level = (level or settings.log_level).upper()
    path = config_path or settings.log_config or DEFAULT_LOG_CONFIG
    if os.path.exists(path):
        with open(path, 'r', encoding="utf-8") as f:
            log_config = yaml.safe_load(f)
        log_config.setdefault("root", {})["level"] = level
        for entry in log_config.get("loggers", {}).values():
            entry["level"] = level
        logging.config.dictConfig(log_config)
    else:
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def load_config_file(path: str | Path) -> Dict[str, Any]:
    """读取 YAML 或 JSON 配置文件为字典"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidArgumentError(f"无法读取配置文件 {path}: {e}") from e
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise InvalidArgumentError(f"配置文件 {path} 格式错误: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"配置文件 {path} 顶层必须是映射")
    return data


def resolve_study_config(
        path: Optional[str | Path] = None,
        overrides: Optional[Dict[str, Any]] = None,
        defaults: Optional[Dict[str, Any]] = None,
) -> StudyConfig:
    """
    合并配置：命令行覆盖项 > 配置文件 > defaults（值为 None 的覆盖项忽略）
    Args:
        path: YAML/JSON 配置文件
        overrides: 命令行给出的字段
        defaults: 最低优先级的字段，例如来自环境变量

    Returns: StudyConfig

    """
    data = dict(defaults or {})
    if path:
        data.update(load_config_file(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return validate_model(StudyConfig, data)


def dump_study_config(config: StudyConfig, path: str | Path) -> Path:
    """写出 YAML 配置，可由 resolve_study_config 原样读回"""
    path = Path(path)
    path.write_text(yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False, allow_unicode=True),
                    encoding="utf-8")
    return path


def package_version() -> str:
    try:
        return version("rmm-interp")
    except PackageNotFoundError:
        return "0.0.0"

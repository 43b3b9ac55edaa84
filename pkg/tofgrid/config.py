"""
配置加载 - 配置文件解析与优先级合并

优先级：命令行参数 > 配置文件 > 内置默认值

配置文件格式：
- 默认为 key = value 文本，# 开头为注释（python-dotenv 语法）
- 扩展名为 .yaml / .yml 时按 YAML 平铺映射解析

Usage:
    from tofgrid.config import load_config_file, resolve_config

    file_values = load_config_file(Path("detector.cfg"))
    cfg = resolve_config(file_values, {"method": "ransac"})
"""

from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml
from dotenv import dotenv_values
from loguru import logger
from pydantic import ValidationError

from .core import ConfigError
from .schemas import DetectorConfig


def config_keys() -> list:
    """所有合法配置键"""
    return list(DetectorConfig.model_fields.keys())


def load_config_file(path: Path) -> Dict[str, Any]:
    """
    读取配置文件

    Raises:
        ConfigError: 文件无法解析、YAML 不是平铺映射或包含未知键
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}")
    if path.suffix.lower() in (".yaml", ".yml"):
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"YAML 配置解析失败: {e}") from e
        if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
            raise ConfigError("YAML 配置必须是平铺的键值映射")
    else:
        data = dict(dotenv_values(path, encoding="utf-8"))

    # 空值视为未设置
    values = {str(k).strip(): v for k, v in data.items() if v is not None and v != ""}
    unknown = sorted(set(values) - set(config_keys()))
    if unknown:
        raise ConfigError(f"未知配置键: {', '.join(unknown)}")
    logger.debug("[Config] 从 {} 读取 {} 项", path, len(values))
    return values


def resolve_config(file_values: Optional[Mapping[str, Any]] = None,
                   cli_values: Optional[Mapping[str, Any]] = None) -> DetectorConfig:
    """
    合并配置：cli_values 中值为 None 的项视为未指定

    Raises:
        ConfigError: 未知键或取值无效
    """
    merged: Dict[str, Any] = {}
    for source in (file_values or {}, cli_values or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in DetectorConfig.model_fields:
                raise ConfigError(f"未知配置键: {key}")
            merged[key] = value
    try:
        return DetectorConfig(**merged)
    except ValidationError as e:
        raise ConfigError(f"配置无效: {e}") from e

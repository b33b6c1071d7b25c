# -*- coding: utf-8 -*-
"""配置文件：读取 .env / key=value 配置文件与环境变量"""
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

# 获取项目根目录
PROJECT_ROOT = Path(__file__).parent


class ConfigError(Exception):
    """配置错误（路径不存在、参数越界）"""


def read_key_values(path) -> Dict[str, str]:
    """读取 key=value 文本（.env 与 proximity.cfg 共用同一格式）"""
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#") and "=" in line:
                key, value = line.split("=", 1)
                key = key.strip()
                value = value.strip().strip('"').strip("'")  # 去除引号
                values[key] = value
    return values


def load_env(env_file: Optional[Path] = None) -> None:
    """加载.env配置文件到环境变量（已存在的环境变量优先）"""
    env_file = Path(env_file) if env_file else PROJECT_ROOT / ".env"
    if env_file.exists():
        for key, value in read_key_values(env_file).items():
            os.environ.setdefault(key, value)


# 加载环境变量
load_env()
if os.environ.get("SMART_CONFIG"):
    load_env(Path(os.environ["SMART_CONFIG"]))


def _env_path(key: str, default: str) -> Path:
    value = os.environ.get(key, "")
    path = Path(value) if value else PROJECT_ROOT / default
    return path


# 数据文件默认位置
LEXICON_PATH = _env_path("SMART_LEXICON", "lexicon.tsv")
PROXIMITY_PATH = _env_path("SMART_PROXIMITY", "proximity.cfg")
GRAMMAR_PATH = _env_path("SMART_GRAMMAR", "grammar.json")
TEMPLATES_PATH = _env_path("SMART_TEMPLATES", "templates.txt")
MODEL_DIR = _env_path("SMART_MODEL_DIR", "models")

# 运行参数
DEFAULT_BEAM = int(os.environ.get("SMART_BEAM", "5"))
DEFAULT_MAX_ITERS = int(os.environ.get("SMART_MAX_ITERS", "5"))
DEFAULT_SEED = int(os.environ.get("SMART_SEED", "0"))


@dataclass(frozen=True)
class Config:
    """一次运行的完整配置，构造后不可变"""
    lexicon_path: Path = LEXICON_PATH
    proximity_path: Path = PROXIMITY_PATH
    grammar_path: Path = GRAMMAR_PATH
    templates_path: Path = TEMPLATES_PATH
    model_dir: Path = MODEL_DIR
    beam: int = DEFAULT_BEAM
    max_iters: int = DEFAULT_MAX_ITERS
    seed: int = DEFAULT_SEED
    disable_miner: bool = False
    disable_translator: bool = False
    disable_labeler: bool = False
    output_format: str = "text"
    extra: Dict[str, str] = field(default_factory=dict)

    def validate(self) -> "Config":
        missing = [
            str(p)
            for p in (self.lexicon_path, self.proximity_path, self.grammar_path, self.templates_path)
            if not Path(p).exists()
        ]
        if missing:
            raise ConfigError("配置路径不存在: {}".format(", ".join(missing)))
        if self.beam < 1:
            raise ConfigError("beam 宽度必须 >= 1, 当前 {}".format(self.beam))
        if self.max_iters < 0:
            raise ConfigError("max_iters 不能为负数")
        if self.output_format not in ("text", "json"):
            raise ConfigError("未知输出格式: {}".format(self.output_format))
        return self


def load_config(path: Optional[str] = None, **overrides) -> Config:
    """
    构造 Config：默认值 <- 配置文件(key=value) <- 显式参数。
    配置文件键名与环境变量一致（SMART_LEXICON 等）。
    """
    cfg = Config()
    if path:
        if not Path(path).exists():
            raise ConfigError("配置文件不存在: {}".format(path))
        values = read_key_values(path)
        mapping = {
            "SMART_LEXICON": ("lexicon_path", Path),
            "SMART_PROXIMITY": ("proximity_path", Path),
            "SMART_GRAMMAR": ("grammar_path", Path),
            "SMART_TEMPLATES": ("templates_path", Path),
            "SMART_MODEL_DIR": ("model_dir", Path),
            "SMART_BEAM": ("beam", int),
            "SMART_MAX_ITERS": ("max_iters", int),
            "SMART_SEED": ("seed", int),
        }
        changes = {}
        for key, value in values.items():
            if key in mapping:
                name, conv = mapping[key]
                changes[name] = conv(value)
        cfg = replace(cfg, **changes, extra=values)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
运行配置
扁平 JSON（点分键）配置文件 + 命令行覆盖；环境变量只控制线程数、日志级别与缓存目录
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from dotenv import load_dotenv

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """配置键未知或取值越界"""


# 桌面规模默认值
DEFAULTS: Dict[str, Any] = {
    "encoder.kind": "window",
    "encoder.dim": 64,
    "encoder.window": 1,
    "embedding.dim": 64,
    "data.lowercase": True,
    "data.dev_fraction": 0.1,
    "tree_encoder.kind": "structured_attention",
    "tree_encoder.layers": 2,
    "tree_encoder.child_ctx": "h_k",
    "tree.source": "latent",
    "model.variant": "aclt",
    "prune.k": None,
    "train.alpha": 0.5,
    "train.learning_rate": 1e-3,
    "train.batch_size": 16,
    "train.max_epochs": 30,
    "train.seed": 13,
    "train.adam_beta1": 0.9,
    "train.adam_beta2": 0.999,
    "train.adam_eps": 1e-8,
    "train.dropout": 0.1,
    "train.early_stopping_metric": "accuracy",
    "train.patience": None,
}

# 可为 null 的整数键
NULLABLE_INT_KEYS = ("prune.k", "train.patience")

CHOICES: Dict[str, Tuple[str, ...]] = {
    "encoder.kind": ("window", "recurrent"),
    "tree_encoder.kind": ("structured_attention", "gcn"),
    "tree_encoder.child_ctx": ("h_k", "h_i"),
    "tree.source": ("latent", "parser"),
    "model.variant": ("aclt", "mtt", "fixed_root", "no_tree"),
    "train.early_stopping_metric": ("accuracy", "macro_f1"),
}

POSITIVE_INT_KEYS = ("encoder.dim", "encoder.window", "embedding.dim", "tree_encoder.layers",
                     "train.batch_size", "train.max_epochs")

# 原始 BERT 微调设置，仅作文档与 stats --reference-defaults 展示
REFERENCE_DEFAULTS: Dict[str, Any] = {
    "batch_size": 64,
    "learning_rate": 5e-5,
    "optimizer": "Adam",
    "max_sequence_length": 96,
    "hidden_size": 798,
    "hidden_layers": 12,
    "dropout": 0.1,
    "max_epochs": 30,
}


def load_environment(env_file: Optional[str] = None) -> None:
    """加载 .env（若存在）"""
    load_dotenv(env_file, override=False)


def env_log_level() -> int:
    name = os.environ.get("ARBOLATENT_LOG_LEVEL", "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def _coerce(key: str, value: Any) -> Any:
    """按默认值类型转换并检查类型"""
    default = DEFAULTS[key]
    if key in NULLABLE_INT_KEYS:
        if value is None:
            return None
        if isinstance(value, str):
            if value.lower() in ("null", "none", "inf", "infinity"):
                return None
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"{key}: expected integer or null, got '{value}'") from None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected integer or null, got {value!r}")
        return value
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes", "on"):
                return True
            if value.lower() in ("false", "0", "no", "off"):
                return False
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"{key}: expected integer, got '{value}'") from None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected number, got {value!r}") from None
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected string, got {value!r}")
    return value


def _validate(values: Dict[str, Any]) -> None:
    for key, allowed in CHOICES.items():
        if values[key] not in allowed:
            raise ConfigError(f"{key}: '{values[key]}' not in {list(allowed)}")
    for key in POSITIVE_INT_KEYS:
        if values[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {values[key]}")
    alpha = values["train.alpha"]
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha out of range: {alpha} (must be in (0, 1))")
    if values["prune.k"] is not None and values["prune.k"] < 1:
        raise ConfigError(f"prune.k must be >= 1 or null, got {values['prune.k']}")
    if values["train.patience"] is not None and values["train.patience"] < 1:
        raise ConfigError(f"train.patience must be >= 1 or null, got {values['train.patience']}")
    if not values["train.learning_rate"] > 0.0:
        raise ConfigError("train.learning_rate must be > 0")
    if not 0.0 <= values["train.dropout"] < 1.0:
        raise ConfigError("train.dropout must be in [0, 1)")
    if not 0.0 < values["data.dev_fraction"] < 1.0:
        raise ConfigError("data.dev_fraction must be in (0, 1)")
    for key in ("train.adam_beta1", "train.adam_beta2"):
        if not 0.0 <= values[key] < 1.0:
            raise ConfigError(f"{key} must be in [0, 1)")
    if not values["train.adam_eps"] > 0.0:
        raise ConfigError("train.adam_eps must be > 0")


class RunConfig:
    """
    解析后的运行配置
    合并顺序：默认值 <- 配置文件 <- 命令行覆盖；未知键直接拒绝
    """

    def __init__(self, values: Optional[Dict[str, Any]] = None):
        merged = dict(DEFAULTS)
        for key, value in (values or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key: {key}")
            merged[key] = _coerce(key, value)
        _validate(merged)
        self._values = merged

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None,
             overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        values: Dict[str, Any] = {}
        if path:
            try:
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: malformed config JSON ({exc.msg})") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: config must be a flat JSON object")
            values.update(data)
        values.update(overrides or {})
        return cls(values)

    @staticmethod
    def parse_overrides(pairs: Iterable[str]) -> Dict[str, Any]:
        """把 ["train.alpha=0.3", ...] 解析为字典（值在构造时按类型转换）"""
        out: Dict[str, Any] = {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override must look like key=value, got '{pair}'")
            key, value = pair.split("=", 1)
            out[key.strip()] = value.strip()
        return out

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self._values.get(key, default)

    def to_dict(self) -> Dict[str, Any]:
        return {k: self._values[k] for k in sorted(self._values)}

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        values = dict(self._values)
        values.update(overrides)
        return RunConfig(values)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RunConfig) and self._values == other._values

    def __repr__(self) -> str:
        return f"RunConfig({self.to_dict()})"


@dataclass(frozen=True)
class ModelConfig:
    """模型结构相关配置"""
    embedding_dim: int = 64
    encoder_kind: str = "window"
    encoder_dim: int = 64
    encoder_window: int = 1
    tree_encoder_kind: str = "structured_attention"
    tree_encoder_layers: int = 2
    child_ctx: str = "h_k"
    prune_k: Optional[int] = None
    variant: str = "aclt"
    tree_source: str = "latent"
    lowercase: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "ModelConfig":
        return cls(
            embedding_dim=config["embedding.dim"],
            encoder_kind=config["encoder.kind"],
            encoder_dim=config["encoder.dim"],
            encoder_window=config["encoder.window"],
            tree_encoder_kind=config["tree_encoder.kind"],
            tree_encoder_layers=config["tree_encoder.layers"],
            child_ctx=config["tree_encoder.child_ctx"],
            prune_k=config["prune.k"],
            variant=config["model.variant"],
            tree_source=config["tree.source"],
            lowercase=config["data.lowercase"],
        )

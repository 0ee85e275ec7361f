#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
模型快照存取
文件格式：第一行 JSON 头（参数名、形状、词表、配置回显、种子、epoch），随后为按头部顺序排列的
float64 小端原始数值
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np

from aclt_model import build_params
from autodiff_core import ParamStore
from data_io import EmbeddingTable
from run_config import ModelConfig, RunConfig

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "arbolatent-snapshot/1"


class SnapshotError(ValueError):
    """快照损坏或与配置不匹配"""


@dataclass
class Snapshot:
    params: ParamStore
    vocab: List[str]
    config: Dict[str, Any]
    seed: int
    epoch: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    def run_config(self) -> RunConfig:
        return RunConfig(self.config)

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_run_config(self.run_config())

    def table(self) -> EmbeddingTable:
        """由快照中的词表与已训练的 embedding.table 重建词向量表"""
        vectors = self.params.value("embedding.table")
        return EmbeddingTable(vectors.shape[1], self.vocab, vectors.copy(),
                              lowercase=self.config.get("data.lowercase", True))


def save_snapshot(path: Union[str, Path], params: ParamStore, vocab: List[str], config: RunConfig,
                  seed: int, epoch: int = 0, extra: Dict[str, Any] = None) -> None:
    names = params.names()
    header = {
        "format": SNAPSHOT_FORMAT,
        "names": names,
        "shapes": [list(params.value(n).shape) for n in names],
        "vocab": list(vocab),
        "config": config.to_dict(),
        "seed": int(seed),
        "epoch": int(epoch),
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n")
        for name in names:
            f.write(np.ascontiguousarray(params.value(name), dtype="<f8").tobytes())
    logger.info("💾 快照已保存: %s (%d 个参数, %d 个数值)", path, len(names), params.num_entries())


def load_snapshot(path: Union[str, Path]) -> Snapshot:
    with open(path, "rb") as f:
        raw = f.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise SnapshotError(f"{path}: missing snapshot header")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise SnapshotError(f"{path}: unreadable snapshot header") from None
    if not isinstance(header, dict) or header.get("format") != SNAPSHOT_FORMAT:
        found = header.get("format") if isinstance(header, dict) else header
        raise SnapshotError(f"{path}: unsupported snapshot format {found!r}")
    payload = raw[newline + 1:]
    if len(payload) % 8:
        raise SnapshotError(f"{path}: truncated snapshot payload ({len(payload)} bytes, not a multiple of 8)")
    try:
        names, shapes, seed = header["names"], [tuple(int(d) for d in s) for s in header["shapes"]], int(header["seed"])
    except (KeyError, TypeError, ValueError):
        raise SnapshotError(f"{path}: snapshot header lacks names, shapes or seed") from None
    if len(names) != len(shapes):
        raise SnapshotError(f"{path}: {len(names)} parameter names but {len(shapes)} shapes")
    values = np.frombuffer(payload, dtype="<f8")
    expected = int(sum(int(np.prod(s)) for s in shapes))
    if values.size != expected:
        raise SnapshotError(f"{path}: expected {expected} values, found {values.size}")

    store = ParamStore(seed)
    offset = 0
    for name, shape in zip(names, shapes):
        size = int(np.prod(shape))
        store.add(name, shape, init="given", value=values[offset:offset + size].reshape(shape).astype(np.float64))
        offset += size
    return Snapshot(store, header.get("vocab", []), header.get("config", {}), seed, header.get("epoch", 0),
                    header.get("extra", {}))


def check_compatible(snapshot: Snapshot, model_config: ModelConfig) -> None:
    """用配置重建参数结构，名称或形状不一致时报错"""
    table = EmbeddingTable(model_config.embedding_dim, snapshot.vocab,
                           np.zeros((len(snapshot.vocab), model_config.embedding_dim)))
    expected = build_params(model_config, table, snapshot.seed)
    want = {n: expected.value(n).shape for n in expected.names()}
    have = {n: snapshot.params.value(n).shape for n in snapshot.params.names()}
    if want != have:
        missing = sorted(set(want) - set(have))
        unexpected = sorted(set(have) - set(want))
        mismatched = sorted(n for n in set(want) & set(have) if want[n] != have[n])
        raise SnapshotError(
            f"snapshot/config mismatch: missing {missing}, unexpected {unexpected}, shape {mismatched}"
        )

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
句子编码器
把 (n 个词 + 句子节点) 编码为 (n+1)×d 的隐状态 H：
窗口混合器（默认）或双向门控循环混合器，方面词额外叠加可学习的指示向量
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from autodiff_core import ParamStore, ShapeError, Tape, Var
from data_io import NODE0, PAD, EmbeddingTable, Instance
from run_config import ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class EncodedSentence:
    """编码结果：H 第 0 行为句子节点，aspect_rows 为方面词所在行"""
    H: Var
    aspect_rows: range
    h_a: Var

    @property
    def m(self) -> int:
        return int(self.H.shape[0])

    @property
    def tape(self) -> Tape:
        return self.H.tape


def register_encoder_params(store: ParamStore, config: ModelConfig, table: EmbeddingTable) -> None:
    """注册词向量表与编码器参数"""
    e, d = table.dimension, config.encoder_dim
    store.add("embedding.table", (len(table), e), init="given", value=table.vectors)
    store.add("encoder.aspect", (e,), init="uniform")
    if config.encoder_kind == "window":
        store.add("encoder.W", (d, (2 * config.encoder_window + 1) * e))
        store.add("encoder.b", (d,), init="zeros")
    elif config.encoder_kind == "recurrent":
        for direction in ("fwd", "bwd"):
            for gate in ("g", "h"):
                store.add(f"encoder.{direction}.W_{gate}", (d, e))
                store.add(f"encoder.{direction}.U_{gate}", (d, d))
                store.add(f"encoder.{direction}.b_{gate}", (d,), init="zeros")
        store.add("encoder.W_o", (d, 2 * d))
        store.add("encoder.b_o", (d,), init="zeros")
    else:
        raise ValueError(f"unknown encoder kind: {config.encoder_kind}")


def _window_mix(tape: Tape, x: int, n: int, pad: int, window: int) -> int:
    """hᵢ = tanh(W·[eᵢ₋w; …; eᵢ₊w] + b)，边界外用 PAD"""
    padded = tape.concat([pad, x, pad], axis=0) if window else x
    columns = [tape.slice(padded, slice(o, o + n)) for o in range(2 * window + 1)]
    stacked = tape.concat(columns, axis=1)
    pre = tape.add(tape.matmul(stacked, tape.transpose(tape.param("encoder.W"))), tape.param("encoder.b"))
    return tape.tanh(pre)


def _gated_pass(tape: Tape, x: int, n: int, d: int, direction: str) -> List[int]:
    """单方向门控循环：h = h + g⊙(h̃ − h)"""
    p = lambda name: tape.param(f"encoder.{direction}.{name}")
    h = tape.const(np.zeros(d))
    order = range(n) if direction == "fwd" else range(n - 1, -1, -1)
    states = [0] * n
    for t in order:
        x_t = tape.slice(x, t)
        gate = tape.sigmoid(tape.add(tape.add(tape.matmul(p("W_g"), x_t), tape.matmul(p("U_g"), h)), p("b_g")))
        cand = tape.tanh(tape.add(tape.add(tape.matmul(p("W_h"), x_t), tape.matmul(p("U_h"), h)), p("b_h")))
        h = tape.add(h, tape.mul(gate, tape.sub(cand, h)))
        states[t] = tape.reshape(h, (1, d))
    return states


def _recurrent_mix(tape: Tape, x: int, n: int, d: int) -> int:
    forward = tape.concat(_gated_pass(tape, x, n, d, "fwd"), axis=0)
    backward = tape.concat(_gated_pass(tape, x, n, d, "bwd"), axis=0)
    both = tape.concat([forward, backward], axis=1)
    pre = tape.add(tape.matmul(both, tape.transpose(tape.param("encoder.W_o"))), tape.param("encoder.b_o"))
    return tape.tanh(pre)


def encode(instance: Instance, table: EmbeddingTable, params: ParamStore, config: ModelConfig,
           tape: Optional[Tape] = None, dropout: float = 0.0,
           rng: Optional[np.random.Generator] = None) -> EncodedSentence:
    """
    编码一个实例

    Args:
        instance: 已校验的实例
        table: 词向量表（索引须与参数 embedding.table 一致）
        params: 参数仓库
        config: 模型配置
        tape: 可选计算带，默认新建
        dropout: 训练时对 H 的逐元素 dropout 比例（反向缩放）
        rng: dropout 随机源，dropout > 0 时必须提供

    Returns:
        EncodedSentence
    """
    n = len(instance.tokens)
    if n == 0:
        raise ShapeError("cannot encode an empty token list")
    tape = tape if tape is not None else Tape(params, label=instance.id)
    emb = tape.param("embedding.table")
    if tape.value(emb).shape[0] != len(table):
        raise ShapeError(
            f"embedding.table has {tape.value(emb).shape[0]} rows but the vocabulary has {len(table)} words"
        )
    e, d, w = table.dimension, config.encoder_dim, config.encoder_window

    x = tape.gather(emb, table.indices(instance.tokens))
    aspect_col = np.zeros((n, 1))
    aspect_col[instance.aspect_span[0]:instance.aspect_span[1]] = 1.0
    indicator = tape.mul(tape.const(aspect_col), tape.reshape(tape.param("encoder.aspect"), (1, e)))
    x = tape.add(x, indicator)
    node0 = tape.gather(emb, [table.index_of(NODE0)])

    if config.encoder_kind == "window":
        pad = tape.gather(emb, [table.index_of(PAD)] * w)
        h_tokens = _window_mix(tape, x, n, pad, w)
        h_node0 = _window_mix(tape, node0, 1, pad, w)
    else:
        h_tokens = _recurrent_mix(tape, x, n, d)
        h_node0 = _recurrent_mix(tape, node0, 1, d)
    H = tape.concat([h_node0, h_tokens], axis=0)

    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout needs a seeded rng")
        keep = (rng.random((n + 1, d)) >= dropout) / (1.0 - dropout)
        H = tape.mul(H, tape.const(keep))

    rows = instance.aspect_rows
    h_sum = tape.sum(tape.slice(H, slice(rows.start, rows.stop)), axis=0)
    h_a = tape.scale(h_sum, 1.0 / len(rows))
    return EncodedSentence(H=Var(tape, H), aspect_rows=rows, h_a=Var(tape, h_a))

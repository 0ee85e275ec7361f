#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
ACLT 单实例前向流程
编码 -> 树归纳（或外部句法树 / 无树）-> 可选剪枝 -> 树编码 -> 分类与损失
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from autodiff_core import ParamStore, Tape, Var
from data_io import DataValidationError, EmbeddingTable, Instance
from run_config import ModelConfig
from sentence_encoder import EncodedSentence, encode, register_encoder_params
from sentiment_head import classify, combined_loss, register_classifier_params, sentiment_loss
from tree_encoder import (StructuredSentence, gcn_encode, prune_mask, register_tree_encoder_params,
                          structured_attention)
from tree_inducer import (ScoreSet, TreeMarginals, aspect_root_mass, edge_scores, mtt_marginals,
                          register_inducer_params, root_refinement_loss, root_scores)
from tree_tools import Arborescence, cle_extract

logger = logging.getLogger(__name__)

# 固定根变体中屏蔽根得分时，相对最小得分的下移量（exp 后下溢为 0）
MASKED_ROOT_MARGIN = 1000.0


def uses_latent_tree(config: ModelConfig) -> bool:
    return config.tree_source == "latent" and config.variant != "no_tree"


def build_params(config: ModelConfig, table: EmbeddingTable, seed: int) -> ParamStore:
    """按配置注册全部参数；同一配置、词表与种子总得到相同的初始值"""
    if table.dimension != config.embedding_dim:
        raise ValueError(f"embedding dimension {table.dimension} != embedding.dim {config.embedding_dim}")
    store = ParamStore(seed)
    d = config.encoder_dim
    register_encoder_params(store, config, table)
    if uses_latent_tree(config):
        register_inducer_params(store, d)
    register_tree_encoder_params(store, config.tree_encoder_kind, d, config.tree_encoder_layers)
    register_classifier_params(store, d)
    return store


@dataclass
class ForwardPass:
    """一次前向的全部中间结果；loss 为当前变体的训练目标"""
    encoded: EncodedSentence
    marginals: TreeMarginals
    structured: StructuredSentence
    probs: Var
    loss_a: Var
    loss_s: Var
    loss: Var

    @property
    def tape(self) -> Tape:
        return self.probs.tape

    @property
    def aspect_root_mass(self) -> float:
        return aspect_root_mass(self.marginals, self.encoded.aspect_rows)


@dataclass
class Prediction:
    probs: np.ndarray
    label: int
    marginals: TreeMarginals


class ACLTModel:
    """方面中心潜在树情感分类模型"""

    def __init__(self, config: ModelConfig, table: EmbeddingTable, params: ParamStore,
                 alpha: float = 0.5, dropout: float = 0.0):
        self.config = config
        self.table = table
        self.params = params
        self.alpha = alpha
        self.dropout = dropout

    def _latent_marginals(self, tape: Tape, instance: Instance, encoded: EncodedSentence) -> TreeMarginals:
        E = edge_scores(encoded.H, self.params)
        r = root_scores(encoded.H, self.params)
        if self.config.variant == "fixed_root":
            mask = np.ones(encoded.m, dtype=bool)
            mask[instance.aspect_rows.start] = False
            low = float(min(E.value.min(), r.value.min())) - MASKED_ROOT_MARGIN
            r = Var(tape, tape.masked_fill(r.node, mask, low))
        return mtt_marginals(ScoreSet.from_vars(E, r), label=instance.id)

    def tree_marginals(self, tape: Tape, instance: Instance, encoded: EncodedSentence) -> TreeMarginals:
        """按 tree.source / model.variant 得到本实例的树边缘概率"""
        m = encoded.m
        if self.config.tree_source == "parser":
            if instance.parse_heads is None:
                raise DataValidationError(f"instance {instance.id}: tree.source=parser needs parse_heads")
            heads = np.array([-1] + [h + 1 if h >= 0 else 0 for h in instance.parse_heads])
            return TreeMarginals.one_hot(heads)
        if self.config.variant == "no_tree":
            Pr = np.zeros(m)
            Pr[0] = 1.0
            return TreeMarginals(np.zeros((m, m)), Pr, 0.0)
        return self._latent_marginals(tape, instance, encoded)

    def forward(self, instance: Instance, tape: Optional[Tape] = None, train: bool = False,
                rng: Optional[np.random.Generator] = None) -> ForwardPass:
        tape = tape if tape is not None else Tape(self.params, label=instance.id)
        dropout = self.dropout if train else 0.0
        encoded = encode(instance, self.table, self.params, self.config, tape, dropout=dropout, rng=rng)
        marginals = self.tree_marginals(tape, instance, encoded)
        loss_a = root_refinement_loss(marginals.Pr_var if marginals.Pr_var is not None else marginals.Pr,
                                      instance.aspect_mask(), tape=tape)

        used = marginals
        if self.config.prune_k is not None:
            used = prune_mask(marginals, encoded.aspect_rows, self.config.prune_k, cle_extract(marginals))

        if self.config.tree_encoder_kind == "gcn":
            structured = gcn_encode(encoded.H, used, self.params, self.config.tree_encoder_layers)
        else:
            structured = structured_attention(encoded.H, used, encoded.h_a, self.params,
                                              child_ctx=self.config.child_ctx)
        probs = classify(structured.s0, self.params)
        loss_s = sentiment_loss(probs, instance.label_index)
        if self.config.variant == "aclt" and uses_latent_tree(self.config):
            loss = combined_loss(loss_a, loss_s, self.alpha)
        else:
            loss = loss_s
        return ForwardPass(encoded, marginals, structured, probs, loss_a, loss_s, loss)

    def predict(self, instance: Instance) -> Prediction:
        fp = self.forward(instance)
        probs = fp.probs.value.copy()
        return Prediction(probs, int(np.argmax(probs)), fp.marginals.detached())

    def induce(self, instance: Instance) -> Tuple[Arborescence, TreeMarginals]:
        """解码本实例的离散方面中心树"""
        marginals = self.predict(instance).marginals
        return cle_extract(marginals), marginals

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
树编码器
按边缘概率把树结构编码进每个节点：结构注意力（默认）或 GCN，另含 k 阶剪枝
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from autodiff_core import ParamStore, ShapeError, Tape, Var, node_of, tape_for
from tree_inducer import TreeMarginals
from tree_tools import Arborescence, hops_to_set

logger = logging.getLogger(__name__)

ArrayOrVar = Union[np.ndarray, Var]


@dataclass
class StructuredSentence:
    """S 为 m×d 结构化表示，s0 为其第 0 行"""
    S: Var
    s0: Var


def register_tree_encoder_params(store: ParamStore, kind: str, d: int, layers: int = 1) -> None:
    if kind == "structured_attention":
        store.add("tree_encoder.W_s", (d, 3 * d))
    elif kind == "gcn":
        if layers < 1:
            raise ValueError(f"gcn needs at least one layer, got {layers}")
        for layer in range(layers):
            store.add(f"gcn.W_{layer}", (d, d))
            store.add(f"gcn.b_{layer}", (d,), init="zeros")
    else:
        raise ValueError(f"unknown tree encoder kind: {kind}")


def _marginal_nodes(tape: Tape, marginals: TreeMarginals):
    P = marginals.P_var if marginals.P_var is not None and marginals.P_var.tape is tape else marginals.P
    Pr = marginals.Pr_var if marginals.Pr_var is not None and marginals.Pr_var.tape is tape else marginals.Pr
    return node_of(tape, P), node_of(tape, Pr)


def structured_attention(H: ArrayOrVar, marginals: TreeMarginals, h_a: ArrayOrVar, params: ParamStore,
                         child_ctx: str = "h_k", tape: Optional[Tape] = None) -> StructuredSentence:
    """
    sᵢᵖ = Σ_k P_ki·h_k + Prᵢ·h_a
    sᵢᶜ = Σ_k P_ik·h_k（child_ctx='h_i' 时为 Σ_k P_ik·hᵢ）
    sᵢ  = tanh(W_s·[sᵢᵖ; sᵢᶜ; hᵢ])
    """
    tape = tape_for(H, h_a, params=params, tape=tape)
    h = node_of(tape, H)
    m, d = tape.value(h).shape
    if marginals.m != m:
        raise ShapeError(f"marginals over {marginals.m} nodes but H has {m} rows")
    P, Pr = _marginal_nodes(tape, marginals)
    ha = tape.reshape(node_of(tape, h_a), (1, d))

    parent_ctx = tape.add(tape.matmul(tape.transpose(P), h), tape.mul(tape.reshape(Pr, (m, 1)), ha))
    if child_ctx == "h_k":
        child = tape.matmul(P, h)
    elif child_ctx == "h_i":
        child = tape.mul(tape.reshape(tape.sum(P, axis=1), (m, 1)), h)
    else:
        raise ValueError(f"child_ctx must be 'h_k' or 'h_i', got {child_ctx}")
    joined = tape.concat([parent_ctx, child, h], axis=1)
    S = tape.tanh(tape.matmul(joined, tape.transpose(tape.param("tree_encoder.W_s"))))
    return StructuredSentence(S=Var(tape, S), s0=Var(tape, tape.slice(S, 0)))


def gcn_encode(H: ArrayOrVar, marginals: TreeMarginals, params: ParamStore, layers: int,
               tape: Optional[Tape] = None) -> StructuredSentence:
    """hᵢ' = ReLU(Σ_k Â[i,k]·h_k·W + b)，Â = P + Pᵀ + I 行归一化"""
    if layers < 1:
        raise ValueError(f"layers must be >= 1, got {layers}")
    tape = tape_for(H, params=params, tape=tape)
    h = node_of(tape, H)
    m = tape.value(h).shape[0]
    if marginals.m != m:
        raise ShapeError(f"marginals over {marginals.m} nodes but H has {m} rows")
    P, _ = _marginal_nodes(tape, marginals)
    adj = tape.add(tape.add(P, tape.transpose(P)), tape.const(np.eye(m)))
    inv_degree = tape.exp(tape.scale(tape.log(tape.reshape(tape.sum(adj, axis=1), (m, 1))), -1.0))
    adj_norm = tape.mul(adj, inv_degree)
    for layer in range(layers):
        agg = tape.matmul(adj_norm, h)
        h = tape.relu(tape.add(tape.matmul(agg, tape.param(f"gcn.W_{layer}")), tape.param(f"gcn.b_{layer}")))
    return StructuredSentence(S=Var(tape, h), s0=Var(tape, tape.slice(h, 0)))


def prune_keep_matrix(tree: Arborescence, aspect_nodes: range, k: int) -> np.ndarray:
    """保留 (i, j) 当且仅当 min(dᵢ, dⱼ) ≤ k−1 且 max(dᵢ, dⱼ) ≤ k，d 为到最近方面词的跳数"""
    hops = hops_to_set(tree, aspect_nodes)
    near = np.minimum.outer(hops, hops)
    far = np.maximum.outer(hops, hops)
    return (near <= k - 1) & (far <= k)


def prune_mask(marginals: TreeMarginals, aspect_rows: range, k: Optional[int],
               tree: Arborescence) -> TreeMarginals:
    """
    k 阶剪枝：把离方面词超过 k 跳的边置零，Pr 不变，不重新归一化

    Args:
        marginals: 边缘概率（若在计算带上则掩码也记录在带上）
        aspect_rows: 方面词节点号
        k: 阶数，None 表示不剪枝
        tree: 提供离散跳数的树
    """
    if k is None:
        return marginals
    if k < 1:
        raise ValueError(f"prune order k must be >= 1, got {k}")
    if tree.m != marginals.m:
        raise ShapeError(f"tree has {tree.m} nodes but marginals have {marginals.m}")
    keep = prune_keep_matrix(tree, aspect_rows, k).astype(np.float64)
    pruned = marginals.P * keep
    P_var = None
    if marginals.P_var is not None:
        tape = marginals.P_var.tape
        P_var = Var(tape, tape.mul(marginals.P_var.node, tape.const(keep)))
        pruned = P_var.value.copy()
    return replace(marginals, P=pruned, P_var=P_var)

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
离散树工具
Chu-Liu-Edmonds 最大生成树形图解码、穷举枚举预言机，以及树分析：
观点词到方面词的跳数距离、根一致性统计、树文件读写
"""

import itertools
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd
from scipy.special import logsumexp

from data_io import NODE0, Instance, Lexicon
from tree_inducer import ScoreSet, TreeMarginals

logger = logging.getLogger(__name__)

ROOT = -1
LOG_EPS = 1e-12
MAX_ENUMERATION_NODES = 6


@dataclass
class Arborescence:
    """
    离散树形图
    heads[j] 为 j 的父节点，根节点为 ROOT；token_offset 为第一个词所在节点号
    （模型树为 1，因为第 0 个节点是句子节点；外部句法树为 0）
    """
    heads: Tuple[int, ...]
    root: int
    score: float = 0.0
    token_offset: int = 0

    def __post_init__(self):
        self.heads = tuple(int(h) for h in self.heads)
        self.root = int(self.root)
        if not is_arborescence(self.heads) or self.heads[self.root] != ROOT:
            raise ValueError(f"invalid arborescence: heads={list(self.heads)} root={self.root}")

    @property
    def m(self) -> int:
        return len(self.heads)

    def edges(self) -> List[Tuple[int, int]]:
        return [(h, d) for d, h in enumerate(self.heads) if h != ROOT]

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.m))
        g.add_edges_from(self.edges())
        return g

    @classmethod
    def from_parse_heads(cls, parse_heads: Sequence[int]) -> "Arborescence":
        """外部句法头（0 起，根为 −1）→ 不含句子节点的树"""
        heads = tuple(int(h) for h in parse_heads)
        return cls(heads, heads.index(ROOT), 0.0, token_offset=0)


def is_arborescence(heads: Sequence[int]) -> bool:
    """恰好一个根、父节点合法、无环（因而全部可达）"""
    m = len(heads)
    if m == 0 or sum(1 for h in heads if h == ROOT) != 1:
        return False
    if any(h != ROOT and not 0 <= h < m for h in heads) or any(h == j for j, h in enumerate(heads)):
        return False
    for start in range(m):
        node, steps = start, 0
        while heads[node] != ROOT:
            node = heads[node]
            steps += 1
            if steps > m:
                return False
    return True


# ---------------------------------------------------------------------------
# Chu-Liu-Edmonds
# ---------------------------------------------------------------------------

def _find_cycle(heads: np.ndarray, root: int = 0) -> Optional[List[int]]:
    """返回第一个环上的节点（升序），根节点的自环不算"""
    m = len(heads)
    state = [0] * m
    state[root] = 2
    for start in range(m):
        path = []
        v = start
        while state[v] == 0:
            state[v] = 1
            path.append(v)
            v = int(heads[v])
        if state[v] == 1:
            return sorted(path[path.index(v):])
        for u in path:
            state[u] = 2
    return None


def _chu_liu_edmonds(scores: np.ndarray, root: int = 0) -> np.ndarray:
    """
    收缩法求最大生成树形图；并列时取下标最小的父节点

    Args:
        scores: scores[dep, head]
        root: 根节点

    Returns:
        heads，heads[root] = root
    """
    s = scores.copy()
    m = s.shape[0]
    s[np.arange(m), np.arange(m)] = -np.inf
    s[root, :] = -np.inf
    s[root, root] = 0.0
    tree = s.argmax(-1)
    cycle = _find_cycle(tree, root)
    if cycle is None:
        return tree

    cycle_idx = np.array(cycle)
    noncycle = np.ones(m, dtype=bool)
    noncycle[cycle_idx] = False
    nc_idx = np.where(noncycle)[0]
    cycle_scores = s[cycle_idx, tree[cycle_idx]]

    # 非环节点 k 作为父节点进入环：进入哪个环节点、收益多少
    enter_gain = s[cycle_idx][:, nc_idx] - cycle_scores[:, None]
    enter_at = enter_gain.argmax(0)
    enter_best = enter_gain.max(0)
    # 环作为父节点连向非环节点 k：由哪个环节点出发
    leave = s[nc_idx][:, cycle_idx]
    leave_from = leave.argmax(1)
    leave_best = leave.max(1)

    n = len(nc_idx)
    sub_root = int(np.searchsorted(nc_idx, root))
    contracted = np.full((n + 1, n + 1), -np.inf)
    contracted[:n, :n] = s[nc_idx][:, nc_idx]
    contracted[:n, n] = leave_best
    contracted[n, :n] = enter_best
    sub = _chu_liu_edmonds(contracted, sub_root)

    heads = tree.copy()
    k = int(sub[n])
    heads[cycle_idx[enter_at[k]]] = nc_idx[k]
    for pos, dep in enumerate(nc_idx):
        if pos == sub_root:
            continue
        h = int(sub[pos])
        heads[dep] = cycle_idx[leave_from[pos]] if h == n else nc_idx[h]
    return heads


def max_spanning_arborescence(weights: np.ndarray, root: int, token_offset: int = 0) -> Arborescence:
    """
    以给定节点为根的最大权生成树形图；等权时优先下标最小的父节点

    Args:
        weights: weights[h, d] 为边 h→d 的有限权重（对角忽略）
        root: 根节点
        token_offset: 写入结果的 token_offset
    """
    weights = np.asarray(weights, dtype=np.float64)
    m = weights.shape[0]
    if weights.shape != (m, m) or m < 1:
        raise ValueError(f"weights must be a non-empty square matrix, got {weights.shape}")
    if not 0 <= root < m:
        raise ValueError(f"root {root} out of range for {m} nodes")
    if m == 1:
        return Arborescence((ROOT,), 0, 0.0, token_offset)

    found = _chu_liu_edmonds(weights.T, root)
    heads = [ROOT if d == root else int(h) for d, h in enumerate(found)]
    score = float(sum(weights[h, d] for d, h in enumerate(heads) if h != ROOT))
    return Arborescence(tuple(heads), root, score, token_offset)


def cle_extract(marginals: TreeMarginals, token_offset: int = 1) -> Arborescence:
    """根取 argmax Pr（并列取最小下标），边权 log(P + 1e-12)"""
    root = int(np.argmax(marginals.Pr))
    weights = np.log(marginals.P + LOG_EPS)
    return max_spanning_arborescence(weights, root, token_offset)


# ---------------------------------------------------------------------------
# 穷举预言机
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _all_arborescences(m: int) -> Tuple[Tuple[int, Tuple[int, ...]], ...]:
    trees = []
    for root in range(m):
        others = [v for v in range(m) if v != root]
        choices = [[h for h in range(m) if h != v] for v in others]
        for picked in itertools.product(*choices):
            heads = [ROOT] * m
            for v, h in zip(others, picked):
                heads[v] = h
            if is_arborescence(heads):
                trees.append((root, tuple(heads)))
    return tuple(trees)


def enumerate_arborescences(m: int) -> List[Tuple[int, Tuple[int, ...]]]:
    """m 个带标号节点上的全部单根生成树形图（共 m^(m−1) 个）"""
    if not 1 <= m <= MAX_ENUMERATION_NODES:
        raise ValueError(f"enumeration supports 1 <= m <= {MAX_ENUMERATION_NODES}, got {m}")
    return list(_all_arborescences(m))


def oracle_marginals(scores: ScoreSet) -> TreeMarginals:
    """穷举：树权重 exp(r_root)·∏exp(E_edge)，按权重比例累计边/根边缘概率"""
    m = scores.m
    if not 1 <= m <= MAX_ENUMERATION_NODES:
        raise ValueError(f"oracle supports 1 <= m <= {MAX_ENUMERATION_NODES}, got {m}")
    trees = enumerate_arborescences(m)
    log_w = np.array([
        scores.r[root] + sum(scores.E[h, d] for d, h in enumerate(heads) if h != ROOT)
        for root, heads in trees
    ])
    log_z = float(logsumexp(log_w))
    probs = np.exp(log_w - log_z)
    P = np.zeros((m, m))
    Pr = np.zeros(m)
    for p, (root, heads) in zip(probs, trees):
        Pr[root] += p
        for d, h in enumerate(heads):
            if h != ROOT:
                P[h, d] += p
    return TreeMarginals(P, Pr, log_z)


def exhaustive_max_arborescence(weights: np.ndarray, root: Optional[int] = None) -> Arborescence:
    """穷举最大权树形图（可限定根），CLE 最优性检验用"""
    weights = np.asarray(weights, dtype=np.float64)
    best: Optional[Tuple[float, int, Tuple[int, ...]]] = None
    for r, heads in enumerate_arborescences(weights.shape[0]):
        if root is not None and r != root:
            continue
        score = float(sum(weights[h, d] for d, h in enumerate(heads) if h != ROOT))
        if best is None or score > best[0]:
            best = (score, r, heads)
    score, r, heads = best
    return Arborescence(heads, r, score)


# ---------------------------------------------------------------------------
# 距离与根一致性分析
# ---------------------------------------------------------------------------

def hop_distance(tree: Arborescence, u: int, v: int) -> int:
    """无向树上 u 与 v 之间的边数"""
    for node in (u, v):
        if not 0 <= node < tree.m:
            raise IndexError(f"invalid node index {node} for a tree of {tree.m} nodes")
    return int(nx.shortest_path_length(tree.graph, u, v))


def hops_to_set(tree: Arborescence, sources: Iterable[int]) -> np.ndarray:
    """每个节点到 sources 中最近节点的跳数"""
    lengths = nx.multi_source_dijkstra_path_length(tree.graph, set(int(s) for s in sources))
    return np.array([lengths[v] for v in range(tree.m)], dtype=np.int64)


def trees_from_parse(instances: Sequence[Instance]) -> List[Optional[Arborescence]]:
    return [Arborescence.from_parse_heads(inst.parse_heads) if inst.parse_heads is not None else None
            for inst in instances]


@dataclass
class DistanceRow:
    source: str
    word: str
    polarity: str
    mean: float
    count: int


@dataclass
class DistanceReport:
    """各树来源下每个观点词到方面词的平均跳数"""
    rows: List[DistanceRow] = field(default_factory=list)
    words: List[str] = field(default_factory=list)
    sources: List[str] = field(default_factory=list)
    overall: Dict[str, Tuple[float, int]] = field(default_factory=dict)
    skipped: Dict[str, int] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.rows], columns=["source", "word", "polarity", "mean", "count"])

    def pivot(self) -> pd.DataFrame:
        """行为树来源，列为观点词（附 overall 列）"""
        frame = self.to_frame()
        if frame.empty:
            table = pd.DataFrame(index=self.sources, columns=self.words, dtype=float)
        else:
            table = frame.pivot(index="source", columns="word", values="mean")
            table = table.reindex(index=self.sources, columns=self.words)
        table["overall"] = [self.overall.get(s, (float("nan"), 0))[0] for s in self.sources]
        table.index.name = "source"
        return table

    def shortening(self, reference: str, target: str) -> Optional[float]:
        """target 相对 reference 的平均距离缩短比例；任一方无可测距离或参考距离为 0 时为 None"""
        ref, tgt = self.overall[reference][0], self.overall[target][0]
        if not (math.isfinite(ref) and math.isfinite(tgt)) or ref == 0.0:
            return None
        return (ref - tgt) / ref

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [vars(r) for r in self.rows],
            "overall": {s: {"mean": m if math.isfinite(m) else None, "count": c} for s, (m, c) in self.overall.items()},
            "skipped": dict(self.skipped),
        }

    def to_text(self) -> str:
        return self.pivot().to_string(float_format=lambda x: f"{x:.2f}", na_rep="-")


def select_opinion_words(instances: Sequence[Instance], lexicon: Lexicon,
                         top_k: Optional[int] = None) -> List[str]:
    """出现在方面词之外的词典词；给定 top_k 时各极性取最常见的 top_k 个"""
    counts: Dict[str, int] = defaultdict(int)
    for inst in instances:
        i, j = inst.aspect_span
        for t, token in enumerate(inst.tokens):
            if not i <= t < j and lexicon.polarity_of(token):
                counts[token.lower()] += 1
    selected = []
    for polarity in ("positive", "negative"):
        words = [w for w in counts if lexicon.polarity_of(w) == polarity]
        words.sort(key=lambda w: (-counts[w], w))
        selected.extend(words if top_k is None else words[:top_k])
    return selected


def distance_report(instances: Sequence[Instance],
                    trees_by_source: Dict[str, Sequence[Optional[Arborescence]]],
                    lexicon: Lexicon, top_k: Optional[int] = None) -> DistanceReport:
    """
    观点词距离报告

    每次出现计一个样本；距离取到各方面词的最小跳数；缺少树（如无句法头）的实例跳过并计数。
    """
    words = select_opinion_words(instances, lexicon, top_k)
    wanted = set(words)
    report = DistanceReport(words=words, sources=list(trees_by_source))
    for source, trees in trees_by_source.items():
        if len(trees) != len(instances):
            raise ValueError(f"source {source}: {len(trees)} trees for {len(instances)} instances")
        samples: Dict[str, List[int]] = defaultdict(list)
        skipped = 0
        for inst, tree in zip(instances, trees):
            if tree is None:
                skipped += 1
                continue
            i, j = inst.aspect_span
            off = tree.token_offset
            aspect_nodes = [a + off for a in range(i, j)]
            for t, token in enumerate(inst.tokens):
                word = token.lower()
                if i <= t < j or word not in wanted:
                    continue
                samples[word].append(min(hop_distance(tree, t + off, a) for a in aspect_nodes))
        if skipped:
            logger.warning("⚠️ %s: %d 个实例缺少树，已跳过", source, skipped)
        report.skipped[source] = skipped
        pooled: List[int] = []
        for word in words:
            if samples[word]:
                report.rows.append(DistanceRow(source, word, lexicon.polarity_of(word),
                                               float(np.mean(samples[word])), len(samples[word])))
                pooled.extend(samples[word])
        report.overall[source] = (float(np.mean(pooled)) if pooled else float("nan"), len(pooled))
    return report


@dataclass
class RootConsistency:
    consistent: int
    total: int

    @property
    def percentage(self) -> float:
        return 100.0 * self.consistent / self.total if self.total else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"consistent": self.consistent, "total": self.total, "percentage": self.percentage}


def root_consistency(instances: Sequence[Instance], trees: Sequence[Optional[Arborescence]]) -> RootConsistency:
    """根落在方面词区间内的树的数量；缺失的树不计入总数"""
    if len(instances) != len(trees):
        raise ValueError(f"{len(trees)} trees for {len(instances)} instances")
    consistent = total = 0
    for inst, tree in zip(instances, trees):
        if tree is None:
            continue
        total += 1
        i, j = inst.aspect_span
        if i <= tree.root - tree.token_offset < j:
            consistent += 1
    return RootConsistency(consistent, total)


def root_consistency_frame(results: Dict[str, RootConsistency]) -> pd.DataFrame:
    rows = [{"source": s, "consistent": r.consistent, "inconsistent": r.total - r.consistent,
             "total": r.total, "percentage": r.percentage} for s, r in results.items()]
    return pd.DataFrame(rows, columns=["source", "consistent", "inconsistent", "total", "percentage"]).set_index("source")


# ---------------------------------------------------------------------------
# 树文件
# ---------------------------------------------------------------------------

@dataclass
class TreeBlock:
    id: str
    tokens: List[str]
    tree: Arborescence
    root_probs: np.ndarray


def format_tree_block(instance: Instance, tree: Arborescence, root_probs: np.ndarray) -> str:
    """一行一个节点：index、token、head（根为 ROOT）、root_prob"""
    tokens = ([NODE0] if tree.token_offset == 1 else []) + list(instance.tokens)
    if len(tokens) != tree.m:
        raise ValueError(f"instance {instance.id}: {len(tokens)} tokens for a {tree.m}-node tree")
    lines = [f"# id = {instance.id}"]
    for k, token in enumerate(tokens):
        head = "ROOT" if tree.heads[k] == ROOT else str(tree.heads[k])
        lines.append(f"{k}\t{token}\t{head}\t{float(root_probs[k]):.8f}")
    return "\n".join(lines) + "\n"


def write_tree_dump(out: Union[str, Path, TextIO], blocks: Iterable[Tuple[Instance, Arborescence, np.ndarray]],
                    config: Optional[Dict[str, Any]] = None) -> int:
    """写出树文件，返回块数"""
    def _write(f: TextIO) -> int:
        if config is not None:
            f.write(f"# config = {json.dumps(config, sort_keys=True)}\n\n")
        count = 0
        for instance, tree, probs in blocks:
            f.write(format_tree_block(instance, tree, probs) + "\n")
            count += 1
        return count

    if isinstance(out, (str, Path)):
        with open(out, "w", encoding="utf-8") as f:
            return _write(f)
    return _write(out)


def read_tree_dump(path: Union[str, Path]) -> List[TreeBlock]:
    """读取 write_tree_dump 的输出"""
    blocks: List[TreeBlock] = []
    block_id: Optional[str] = None
    rows: List[Tuple[str, int, float]] = []

    def flush():
        nonlocal block_id, rows
        if rows:
            tokens = [r[0] for r in rows]
            heads = [r[1] for r in rows]
            offset = 1 if tokens and tokens[0] == NODE0 else 0
            tree = Arborescence(tuple(heads), heads.index(ROOT), 0.0, offset)
            blocks.append(TreeBlock(block_id or str(len(blocks) + 1), tokens[offset:], tree,
                                    np.array([r[2] for r in rows])))
        block_id, rows = None, []

    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                if line.startswith("# id = "):
                    block_id = line[len("# id = "):]
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            index, token, head, prob = parts
            if int(index) != len(rows):
                raise ValueError(f"{path}:{lineno}: node index {index} out of order")
            rows.append((token, ROOT if head == "ROOT" else int(head), float(prob)))
    flush()
    return blocks

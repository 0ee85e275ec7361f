#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据读写模块
负责分类实例（JSONL）、预训练静态词向量、观点词典的读取与校验，以及数据划分与统计
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

POLARITIES: Tuple[str, str, str] = ("positive", "neutral", "negative")
LABEL_INDEX: Dict[str, int] = {p: i for i, p in enumerate(POLARITIES)}

UNK = "<unk>"
PAD = "<pad>"
NODE0 = "<node0>"
RESERVED = (UNK, PAD, NODE0)

PathLike = Union[str, Path]


class DataValidationError(ValueError):
    """输入数据不满足格式或不变量"""


@dataclass
class Instance:
    """
    一个分类单元：句子、方面词区间 [i, j)、极性，以及可选的外部句法头
    """
    tokens: Tuple[str, ...]
    aspect_span: Tuple[int, int]
    polarity: str
    parse_heads: Optional[Tuple[int, ...]] = None
    id: str = ""

    def __post_init__(self):
        self.id = str(self.id)
        where = f"instance {self.id}"
        if isinstance(self.tokens, (str, bytes)):
            raise DataValidationError(f"{where}: tokens must be a list of strings, got a single string")
        self.tokens = tuple(str(t) for t in self.tokens)
        self.aspect_span = _int_tuple(self.aspect_span, "aspect_span", where)
        if self.parse_heads is not None:
            self.parse_heads = _int_tuple(self.parse_heads, "parse_heads", where)
        self.validate()

    def validate(self) -> None:
        """校验不变量，失败时抛出 DataValidationError（带实例 id）"""
        where = f"instance {self.id}"
        n = len(self.tokens)
        if n == 0:
            raise DataValidationError(f"{where}: empty token list")
        if len(self.aspect_span) != 2:
            raise DataValidationError(f"{where}: aspect_span must be [i, j)")
        i, j = self.aspect_span
        if j <= i:
            raise DataValidationError(f"{where}: empty aspect span [{i}, {j})")
        if i < 0 or j > n:
            raise DataValidationError(f"{where}: aspect span [{i}, {j}) outside {n} tokens")
        if self.polarity not in LABEL_INDEX:
            raise DataValidationError(f"{where}: unknown polarity '{self.polarity}'")
        if self.parse_heads is not None:
            _validate_heads(self.parse_heads, n, where)

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def aspect_tokens(self) -> Tuple[str, ...]:
        i, j = self.aspect_span
        return self.tokens[i:j]

    @property
    def aspect_rows(self) -> range:
        """方面词在 (n+1) 行隐状态中的行号（第 0 行是句子节点）"""
        i, j = self.aspect_span
        return range(i + 1, j + 1)

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.polarity]

    def aspect_mask(self) -> np.ndarray:
        """长度 n+1 的布尔向量，仅方面词行为 True"""
        mask = np.zeros(self.n + 1, dtype=bool)
        mask[list(self.aspect_rows)] = True
        return mask

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "tokens": list(self.tokens),
            "aspect_span": list(self.aspect_span),
            "polarity": self.polarity,
        }
        if self.parse_heads is not None:
            data["parse_heads"] = list(self.parse_heads)
        data["id"] = self.id
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any], default_id: str = "") -> "Instance":
        missing = [k for k in ("tokens", "aspect_span", "polarity") if k not in data]
        if missing:
            raise DataValidationError(f"instance {data.get('id', default_id)}: missing field(s) {missing}")
        return cls(
            tokens=data["tokens"],
            aspect_span=data["aspect_span"],
            polarity=data["polarity"],
            parse_heads=data.get("parse_heads"),
            id=data.get("id", default_id),
        )


def _int_tuple(values: Any, name: str, where: str) -> Tuple[int, ...]:
    """整数序列；浮点、布尔与字符串一律拒绝，不做截断"""
    if isinstance(values, (str, bytes)):
        raise DataValidationError(f"{where}: {name} must be a list of integers, got a string")
    try:
        items = list(values)
    except TypeError:
        raise DataValidationError(f"{where}: {name} must be a list of integers, got {values!r}") from None
    out = []
    for v in items:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise DataValidationError(f"{where}: {name} must hold integers, got {v!r}")
        out.append(int(v))
    return tuple(out)


def _validate_heads(heads: Sequence[int], n: int, where: str) -> None:
    if len(heads) != n:
        raise DataValidationError(f"{where}: parse_heads length {len(heads)} != {n} tokens")
    roots = [k for k, h in enumerate(heads) if h == -1]
    if len(roots) > 1:
        raise DataValidationError(f"{where}: multiple parse roots at {roots}")
    if not roots:
        raise DataValidationError(f"{where}: no parse root")
    for k, h in enumerate(heads):
        if h < -1 or h >= n or h == k:
            raise DataValidationError(f"{where}: invalid head {h} for token {k}")
    for start in range(n):
        node, steps = start, 0
        while heads[node] != -1:
            node = heads[node]
            steps += 1
            if steps > n:
                raise DataValidationError(f"{where}: parse heads contain a cycle through token {start}")


def load_jsonl(path: PathLike) -> List[Instance]:
    """
    读取 JSONL 实例文件

    每行一个 JSON 对象：tokens、aspect_span、polarity，可选 parse_heads 与 id；
    缺少 id 时以行号（从 1 开始）作为 id。
    """
    instances: List[Instance] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataValidationError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(data, dict):
                raise DataValidationError(f"line {lineno}: expected a JSON object")
            instances.append(Instance.from_dict(data, default_id=str(lineno)))
    logger.info("📄 读取 %d 个实例: %s", len(instances), path)
    return instances


def dump_jsonl(instances: Iterable[Instance], path: PathLike) -> None:
    """写出 JSONL，load_jsonl 的逆操作"""
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(inst.to_dict(), ensure_ascii=False) + "\n")


def split(instances: Sequence[Instance], dev_fraction: float, seed: int) -> Tuple[List[Instance], List[Instance]]:
    """按种子确定性打乱后划分训练/验证集，验证集大小为 round(n·dev_fraction)"""
    if not 0.0 < dev_fraction < 1.0:
        raise DataValidationError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    n = len(instances)
    if n < 2:
        raise DataValidationError(f"split needs at least 2 instances, got {n}")
    n_dev = int(round(n * dev_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    dev_idx = set(int(k) for k in perm[:n_dev])
    train = [inst for k, inst in enumerate(instances) if k not in dev_idx]
    dev = [inst for k, inst in enumerate(instances) if k in dev_idx]
    return train, dev


class PolarityCounts(NamedTuple):
    positive: int
    neutral: int
    negative: int


def stats(instances: Iterable[Instance]) -> PolarityCounts:
    """各极性的实例数"""
    counts = {p: 0 for p in POLARITIES}
    for inst in instances:
        counts[inst.polarity] += 1
    return PolarityCounts(**counts)


def stats_frame(datasets: Dict[str, Sequence[Instance]]) -> pd.DataFrame:
    """多个数据集的统计表，行是数据集，列是 Pos/Neu/Neg/Total"""
    rows = []
    for name, instances in datasets.items():
        c = stats(instances)
        rows.append({"dataset": name, "Pos": c.positive, "Neu": c.neutral,
                     "Neg": c.negative, "Total": sum(c)})
    return pd.DataFrame(rows, columns=["dataset", "Pos", "Neu", "Neg", "Total"]).set_index("dataset")


@dataclass(frozen=True)
class Lexicon:
    """观点词典：正/负面词集合，互不相交，小写"""
    positive_words: frozenset = field(default_factory=frozenset)
    negative_words: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        pos = frozenset(w.lower() for w in self.positive_words)
        neg = frozenset(w.lower() for w in self.negative_words)
        overlap = sorted(pos & neg)
        if overlap:
            raise DataValidationError(f"lexicon sets overlap: {overlap}")
        object.__setattr__(self, "positive_words", pos)
        object.__setattr__(self, "negative_words", neg)

    def polarity_of(self, word: str) -> Optional[str]:
        w = word.lower()
        if w in self.positive_words:
            return "positive"
        if w in self.negative_words:
            return "negative"
        return None

    def words(self) -> List[str]:
        return sorted(self.positive_words) + sorted(self.negative_words)

    def to_dict(self) -> Dict[str, List[str]]:
        return {"positive": sorted(self.positive_words), "negative": sorted(self.negative_words)}


def load_lexicon(path: PathLike) -> Lexicon:
    """读取 {"positive": [...], "negative": [...]} 格式的词典"""
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"{path}: malformed lexicon JSON ({exc.msg})") from None
    if not isinstance(data, dict) or not {"positive", "negative"} <= set(data):
        raise DataValidationError(f"{path}: lexicon needs 'positive' and 'negative' lists")
    return Lexicon(frozenset(data["positive"]), frozenset(data["negative"]))


class EmbeddingTable:
    """
    静态词向量表
    保留词 UNK / PAD / NODE0 总是存在；查询时按 lowercase 标志归一化，未登录词返回 UNK
    """

    def __init__(self, dimension: int, words: Sequence[str], vectors: np.ndarray, lowercase: bool = True):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.shape != (len(words), dimension):
            raise DataValidationError(
                f"embedding matrix shape {vectors.shape} does not match {len(words)} words x {dimension}"
            )
        self.dimension = int(dimension)
        self.lowercase = lowercase
        self.words: List[str] = list(words)
        self.vectors = vectors
        self.index: Dict[str, int] = {w: k for k, w in enumerate(self.words)}
        missing = [w for w in RESERVED if w not in self.index]
        if missing:
            raise DataValidationError(f"embedding table lacks reserved entries {missing}")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return self._normalize(word) in self.index

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, EmbeddingTable) and self.words == other.words
                and self.dimension == other.dimension and np.array_equal(self.vectors, other.vectors))

    def _normalize(self, word: str) -> str:
        return word if word in RESERVED or not self.lowercase else word.lower()

    def index_of(self, word: str) -> int:
        return self.index.get(self._normalize(word), self.index[UNK])

    def lookup(self, word: str) -> np.ndarray:
        return self.vectors[self.index_of(word)]

    def indices(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index_of(t) for t in tokens], dtype=np.int64)

    def restrict(self, words: Iterable[str]) -> "EmbeddingTable":
        """只保留保留词与给定词（首次出现顺序），用于把大词表裁剪到语料词汇"""
        keep = list(RESERVED)
        seen = set(keep)
        for w in words:
            w = self._normalize(w)
            if w in self.index and w not in seen:
                keep.append(w)
                seen.add(w)
        vectors = np.stack([self.vectors[self.index[w]] for w in keep])
        return EmbeddingTable(self.dimension, keep, vectors, self.lowercase)

    @classmethod
    def from_vocabulary(cls, words: Iterable[str], dimension: int, seed: int = 0,
                        lowercase: bool = True) -> "EmbeddingTable":
        """没有预训练文件时，为词汇随机初始化 uniform(−0.1, 0.1) 向量"""
        vocab = list(RESERVED)
        seen = set(vocab)
        for w in words:
            w = w.lower() if lowercase else w
            if w not in seen:
                vocab.append(w)
                seen.add(w)
        rng = np.random.default_rng(seed)
        return cls(dimension, vocab, rng.uniform(-0.1, 0.1, size=(len(vocab), dimension)), lowercase)

    @classmethod
    def from_instances(cls, instances: Iterable[Instance], dimension: int, seed: int = 0,
                       lowercase: bool = True) -> "EmbeddingTable":
        return cls.from_vocabulary(vocabulary(instances), dimension, seed, lowercase)


def vocabulary(instances: Iterable[Instance]) -> List[str]:
    """语料中按首次出现顺序排列的词"""
    seen: Dict[str, None] = {}
    for inst in instances:
        for t in inst.tokens:
            seen.setdefault(t, None)
    return list(seen)


def load_embeddings(path: PathLike, dimension: int, seed: int = 0, lowercase: bool = True,
                    cache: Optional[Any] = None) -> EmbeddingTable:
    """
    读取 "word v1 … vd" 文本格式的词向量

    Args:
        path: 词向量文件
        dimension: 期望维度 d
        seed: 缺失保留词的初始化种子
        lowercase: 是否小写归一化；为真时文件中的词也按小写入表，同一小写形式保留首次出现
        cache: 可选 EmbeddingCache，命中时跳过解析
    """
    prefix = f"emb_d{dimension}_s{seed}_l{int(lowercase)}_"
    if cache is not None:
        cached = cache.get(str(path), prefix=prefix)
        if cached is not None:
            return cached

    words: List[str] = []
    rows: List[np.ndarray] = []
    seen = set()
    duplicates = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            word, raw = parts[0], parts[1:]
            key = word.lower() if lowercase and word not in RESERVED else word
            if len(raw) != dimension:
                raise DataValidationError(
                    f"dimension mismatch for word '{word}' (line {lineno}): "
                    f"expected {dimension} floats, got {len(raw)}"
                )
            if key in seen:
                duplicates += 1
                logger.warning("⚠️ 重复词 '%s'（第 %d 行），保留首次出现", key, lineno)
                continue
            try:
                vec = np.array([float(x) for x in raw], dtype=np.float64)
            except ValueError:
                raise DataValidationError(f"non-numeric value for word '{word}' (line {lineno})") from None
            seen.add(key)
            words.append(key)
            rows.append(vec)

    rng = np.random.default_rng(seed)
    for reserved in RESERVED:
        if reserved not in seen:
            words.append(reserved)
            rows.append(rng.uniform(-0.1, 0.1, size=dimension))
    table = EmbeddingTable(dimension, words, np.stack(rows), lowercase)
    logger.info("🔤 词向量读取完成: %d 词, 维度 %d, 重复 %d", len(words), dimension, duplicates)

    if cache is not None:
        cache.set(str(path), table, prefix=prefix)
    return table

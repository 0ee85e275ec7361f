#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
合成方面情感语料
模板句 + 模板自带的依存头标注；词典中的观点词决定被标注方面词的极性，中性模板不含观点词
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from data_io import POLARITIES, Instance, Lexicon

ASPECT = "{A}"
OPINION = "{O}"

# 正负面各取最常见的五个观点词
DEFAULT_LEXICON = Lexicon(
    frozenset({"great", "good", "excellent", "fresh", "delicious"}),
    frozenset({"rude", "small", "bad", "awful", "worst"}),
)

ASPECTS: Tuple[Tuple[str, ...], ...] = (
    ("food",), ("service",), ("pizza",), ("staff",), ("wine",), ("menu",), ("waiter",),
    ("decor",), ("sushi",), ("dessert",),
    ("lunch", "menu"), ("wine", "list"), ("house", "salad"), ("delivery", "time"),
)


@dataclass(frozen=True)
class Template:
    tokens: Tuple[str, ...]
    heads: Tuple[int, ...]


OPINION_TEMPLATES: Tuple[Template, ...] = (
    Template(("the", ASPECT, "was", OPINION), (1, 3, 3, -1)),
    Template(("i", "think", "the", ASPECT, "here", "is", "really", OPINION), (1, -1, 3, 7, 3, 7, 7, 1)),
    Template(("we", "ordered", "early", "and", "the", ASPECT, "came", "out", OPINION), (1, -1, 1, 6, 5, 6, 1, 6, 6)),
    Template((OPINION, ASPECT, "at", "this", "place"), (1, -1, 4, 4, 1)),
    Template(("honestly", "the", ASPECT, "is", OPINION, "and", "we", "left"), (4, 2, 4, 4, -1, 7, 7, 4)),
)

NEUTRAL_TEMPLATES: Tuple[Template, ...] = (
    Template(("the", ASPECT, "is", "served", "after", "six"), (1, 3, 3, -1, 5, 3)),
    Template(("we", "asked", "about", "the", ASPECT, "at", "the", "counter"), (1, -1, 4, 4, 1, 7, 7, 1)),
    Template(("i", "ordered", "the", ASPECT, "with", "a", "friend"), (1, -1, 3, 1, 6, 6, 1)),
)


def fill_template(template: Template, aspect: Sequence[str], opinion: Optional[str]) -> Tuple[List[str], List[int], Tuple[int, int]]:
    """
    展开模板：多词方面词的末词继承槽位的父节点，前面的词挂到末词上

    Returns:
        (tokens, parse_heads, aspect_span)
    """
    slot = template.tokens.index(ASPECT)
    extra = len(aspect) - 1

    def shift(q: int) -> int:
        if q < 0:
            return q
        if q < slot:
            return q
        return q + extra

    tokens: List[str] = []
    heads: List[int] = []
    for q, (token, head) in enumerate(zip(template.tokens, template.heads)):
        if token == ASPECT:
            last = slot + extra
            for a in aspect[:-1]:
                tokens.append(a)
                heads.append(last)
            tokens.append(aspect[-1])
            heads.append(shift(head))
        else:
            tokens.append(opinion if token == OPINION else token)
            heads.append(shift(head))
    return tokens, heads, (slot, slot + len(aspect))


def generate_corpus(n: int, seed: int, lexicon: Lexicon = DEFAULT_LEXICON) -> List[Instance]:
    """生成 n 个实例，三类极性等概率抽取"""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    positive = sorted(lexicon.positive_words)
    negative = sorted(lexicon.negative_words)
    if not positive or not negative:
        raise ValueError("lexicon needs both positive and negative words")
    instances = []
    for k in range(n):
        polarity = POLARITIES[int(rng.integers(len(POLARITIES)))]
        aspect = ASPECTS[int(rng.integers(len(ASPECTS)))]
        if polarity == "neutral":
            template = NEUTRAL_TEMPLATES[int(rng.integers(len(NEUTRAL_TEMPLATES)))]
            opinion = None
        else:
            template = OPINION_TEMPLATES[int(rng.integers(len(OPINION_TEMPLATES)))]
            words = positive if polarity == "positive" else negative
            opinion = words[int(rng.integers(len(words)))]
        tokens, heads, span = fill_template(template, aspect, opinion)
        instances.append(Instance(tokens, span, polarity, heads, id=f"syn-{k + 1}"))
    return instances

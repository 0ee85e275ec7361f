#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
情感分类头与损失
"""

from typing import Optional, Union

import numpy as np

from autodiff_core import ParamStore, ShapeError, Tape, Var, node_of, tape_for
from data_io import LABEL_INDEX, POLARITIES

PROB_EPS = 1e-12

ScalarOrVar = Union[float, Var]


def register_classifier_params(store: ParamStore, d: int) -> None:
    store.add("classifier.W_p", (len(POLARITIES), d))
    store.add("classifier.b_p", (len(POLARITIES),), init="zeros")


def classify(s0: Union[np.ndarray, Var], params: ParamStore, tape: Optional[Tape] = None) -> Var:
    """y = softmax(W_p·s0 + b_p)，类别顺序 positive / neutral / negative"""
    tape = tape_for(s0, params=params, tape=tape)
    s = node_of(tape, s0)
    W = tape.param("classifier.W_p")
    if tape.value(s).shape != (tape.value(W).shape[1],):
        raise ShapeError(f"s0 shape {tape.value(s).shape} does not match classifier {tape.value(W).shape}")
    logits = tape.add(tape.matmul(W, s), tape.param("classifier.b_p"))
    return Var(tape, tape.softmax(logits, axis=0))


def sentiment_loss(probs: Union[np.ndarray, Var], gold: Union[str, int], tape: Optional[Tape] = None) -> Var:
    """−log(probs[gold])，概率下限 1e-12"""
    if isinstance(gold, str):
        if gold not in LABEL_INDEX:
            raise ValueError(f"invalid label: {gold!r}")
        gold = LABEL_INDEX[gold]
    if isinstance(gold, bool) or not 0 <= int(gold) < len(POLARITIES):
        raise ValueError(f"invalid label: {gold!r}")
    tape = tape_for(probs, tape=tape)
    p = tape.clamp(tape.slice(node_of(tape, probs), int(gold)), PROB_EPS, 1.0)
    return Var(tape, tape.scale(tape.log(p), -1.0))


def combined_loss(loss_a: ScalarOrVar, loss_s: ScalarOrVar, alpha: float, tape: Optional[Tape] = None) -> Var:
    """α·L_a + (1−α)·L_s，α ∈ (0, 1)"""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha out of range: {alpha} (must be in (0, 1))")
    tape = tape_for(loss_a, loss_s, tape=tape)
    a = node_of(tape, loss_a)
    s = node_of(tape, loss_s)
    return Var(tape, tape.add(tape.scale(a, alpha), tape.scale(s, 1.0 - alpha)))

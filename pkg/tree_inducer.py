#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
方面中心树归纳器
边得分、根得分、基于矩阵树定理的单根树边缘概率，以及根精炼损失
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from autodiff_core import ParamStore, ShapeError, Tape, Var, node_of, tape_for

logger = logging.getLogger(__name__)

# 根概率裁剪区间
CLAMP_EPS = 1e-12

# 边缘概率第二项的符号；测试用它注入变异
_SECOND_TERM_SIGN = -1.0

ArrayOrVar = Union[np.ndarray, Var]


@dataclass
class ScoreSet:
    """
    未归一化得分：E[i, j] 为 i→j（i 为父节点）的边得分，r[i] 为 i 作根的得分
    E_var / r_var 非空时表示得分位于计算带上，可继续求导
    """
    E: np.ndarray
    r: np.ndarray
    E_var: Optional[Var] = None
    r_var: Optional[Var] = None

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        m = self.r.shape[0] if self.r.ndim == 1 else -1
        if m < 1 or self.E.shape != (m, m):
            raise ShapeError(f"ScoreSet needs E (m×m) and r (m,), got {self.E.shape} and {self.r.shape}")
        if not (np.all(np.isfinite(self.E)) and np.all(np.isfinite(self.r))):
            raise ValueError("ScoreSet entries must be finite")

    @property
    def m(self) -> int:
        return int(self.r.shape[0])

    @classmethod
    def from_vars(cls, E: Var, r: Var) -> "ScoreSet":
        return cls(E.value, r.value, E, r)

    def shifted(self, c: float) -> "ScoreSet":
        return ScoreSet(self.E + c, self.r + c)


@dataclass
class TreeMarginals:
    """P[i, j]：边 i→j 的边缘概率；Pr[i]：i 为根的边缘概率；logZ：对数配分函数"""
    P: np.ndarray
    Pr: np.ndarray
    logZ: float = 0.0
    P_var: Optional[Var] = None
    Pr_var: Optional[Var] = None

    @property
    def m(self) -> int:
        return int(self.Pr.shape[0])

    def detached(self) -> "TreeMarginals":
        return replace(self, P=self.P.copy(), Pr=self.Pr.copy(), P_var=None, Pr_var=None)

    @classmethod
    def one_hot(cls, heads_with_node0: np.ndarray) -> "TreeMarginals":
        """
        由离散树构造 0/1 边缘概率

        Args:
            heads_with_node0: 长度 m，heads[j] 为 j 的父节点，根节点为 -1
        """
        m = len(heads_with_node0)
        P = np.zeros((m, m))
        Pr = np.zeros(m)
        for j, h in enumerate(heads_with_node0):
            if h < 0:
                Pr[j] = 1.0
            else:
                P[h, j] = 1.0
        return cls(P, Pr, 0.0)


def register_inducer_params(store: ParamStore, d: int) -> None:
    store.add("inducer.W_p", (d, d))
    store.add("inducer.W_c", (d, d))
    store.add("inducer.W_b", (d, d))
    store.add("inducer.W_r", (1, d))


def edge_scores(H: ArrayOrVar, params: ParamStore, tape: Optional[Tape] = None) -> Var:
    """E_ij = tanh(W_p·h_i)ᵀ · W_b · tanh(W_c·h_j)"""
    tape = tape_for(H, params=params, tape=tape)
    h = node_of(tape, H)
    if tape.value(h).ndim != 2:
        raise ShapeError(f"H must be m×d, got {tape.value(h).shape}")
    parent = tape.tanh(tape.matmul(h, tape.transpose(tape.param("inducer.W_p"))))
    child = tape.tanh(tape.matmul(h, tape.transpose(tape.param("inducer.W_c"))))
    E = tape.matmul(tape.matmul(parent, tape.param("inducer.W_b")), tape.transpose(child))
    return Var(tape, E)


def root_scores(H: ArrayOrVar, params: ParamStore, tape: Optional[Tape] = None) -> Var:
    """r_i = W_r · h_i"""
    tape = tape_for(H, params=params, tape=tape)
    h = node_of(tape, H)
    if tape.value(h).ndim != 2:
        raise ShapeError(f"H must be m×d, got {tape.value(h).shape}")
    r = tape.reshape(tape.matmul(h, tape.transpose(tape.param("inducer.W_r"))), (tape.value(h).shape[0],))
    return Var(tape, r)


def mtt_marginals(scores: ScoreSet, tape: Optional[Tape] = None, label: str = "") -> TreeMarginals:
    """
    单根矩阵树定理边缘概率（首行替换构造）

    A = exp(E − c_E)（对角为 0），L 为入度拉普拉斯，L̄ 为把 L 第 0 行替换成 exp(r − c_r)；
    B = L̄⁻¹，P_ij = (1−δ_{0j})·A_ij·B_jj − (1−δ_{i0})·A_ij·B_ji，Pr_j = exp(r_j − c_r)·B_j0。
    每棵树恰含一个根项和 m−1 个边项，故根得分与边得分分别平移：c_r = max r，c_E = max 非对角 E，
    logZ = log|det L̄| + c_r + (m−1)·c_E。
    """
    m = scores.m
    if m < 1:
        raise ShapeError("mtt_marginals needs at least one node")
    tape = tape_for(scores.E_var, scores.r_var, tape=tape, label=label)
    if label and not tape.label:
        tape.label = label
    E = scores.E_var.node if scores.E_var is not None else tape.const(scores.E)
    r = scores.r_var.node if scores.r_var is not None else tape.const(scores.r)

    off_diag = 1.0 - np.eye(m)
    c_r = float(scores.r.max())
    c_E = float(scores.E[off_diag > 0].max()) if m > 1 else 0.0
    A = tape.mul(tape.exp(tape.add_const(E, -c_E)), tape.const(off_diag))
    root_w = tape.exp(tape.add_const(r, -c_r))

    col_sum = tape.reshape(tape.sum(A, axis=0), (1, m))
    L = tape.sub(tape.mul(tape.const(np.eye(m)), col_sum), A)
    keep_rows = np.ones((m, 1))
    keep_rows[0, 0] = 0.0
    first_row = np.zeros((m, 1))
    first_row[0, 0] = 1.0
    L_bar = tape.add(tape.mul(L, tape.const(keep_rows)),
                     tape.mul(tape.const(first_row), tape.reshape(root_w, (1, m))))

    B = tape.inverse(L_bar)
    log_det = tape.logdet(L_bar)

    diag_B = tape.reshape(tape.sum(tape.mul(B, tape.const(np.eye(m))), axis=0), (1, m))
    not_first_col = np.ones((1, m))
    not_first_col[0, 0] = 0.0
    term1 = tape.mul(tape.mul(A, diag_B), tape.const(not_first_col))
    term2 = tape.mul(tape.mul(A, tape.transpose(B)), tape.const(keep_rows))
    P = tape.add(term1, tape.scale(term2, _SECOND_TERM_SIGN))
    Pr = tape.mul(root_w, tape.slice(B, (slice(None), 0)))

    return TreeMarginals(
        P=tape.value(P).copy(),
        Pr=tape.value(Pr).copy(),
        logZ=tape.scalar(log_det) + c_r + (m - 1) * c_E,
        P_var=Var(tape, P),
        Pr_var=Var(tape, Pr),
    )


def root_refinement_loss(Pr: ArrayOrVar, aspect_mask: np.ndarray, tape: Optional[Tape] = None) -> Var:
    """
    L_a = −Σ_i [t_i·log Pr_i + (1−t_i)·log(1−Pr_i)]，Pr 先裁剪到 [1e-12, 1−1e-12]
    """
    tape = tape_for(Pr, tape=tape)
    pr = node_of(tape, Pr)
    mask = np.asarray(aspect_mask, dtype=bool)
    if mask.shape != tape.value(pr).shape:
        raise ShapeError(f"aspect_mask length {mask.shape} != Pr length {tape.value(pr).shape}")
    target = mask.astype(np.float64)
    clamped = tape.clamp(pr, CLAMP_EPS, 1.0 - CLAMP_EPS)
    log_p = tape.log(clamped)
    log_q = tape.log(tape.add_const(tape.scale(clamped, -1.0), 1.0))
    per_node = tape.add(tape.mul(tape.const(target), log_p), tape.mul(tape.const(1.0 - target), log_q))
    return Var(tape, tape.scale(tape.sum(per_node), -1.0))


def aspect_root_mass(marginals: TreeMarginals, aspect_rows: range) -> float:
    """方面词行上的根概率之和"""
    return float(np.sum(marginals.Pr[aspect_rows.start:aspect_rows.stop]))

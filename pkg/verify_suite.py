#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
自检套件
穷举预言机等价、归一化恒等式、平移不变性、CLE 最优性、梯度检验；逐项输出 PASS / FAIL
"""

import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from aclt_model import ACLTModel, build_params
from autodiff_core import grad_check
from data_io import EmbeddingTable, Instance
from run_config import ModelConfig
from tree_inducer import ScoreSet, TreeMarginals, mtt_marginals
from tree_tools import cle_extract, exhaustive_max_arborescence, is_arborescence, oracle_marginals

logger = logging.getLogger(__name__)

ORACLE_TOL = 1e-8
NORMALIZATION_TOL = 1e-8
SHIFT_TOL = 1e-10
GRAD_TOL = 1e-4


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<22} {self.detail}  ({self.seconds:.2f}s)"


def random_scores(rng: np.random.Generator, m: int, scale: float = 2.0) -> ScoreSet:
    return ScoreSet(rng.normal(0.0, scale, size=(m, m)), rng.normal(0.0, scale, size=m))


def fixture_instance() -> Instance:
    return Instance(["the", "food", "was", "great"], (1, 2), "positive", id="fixture")


class VerifySuite:
    """可复现的性质检查集合"""

    def __init__(self, max_n: int = 5, seed: int = 0,
                 progress_callback: Optional[Callable[[str], None]] = None):
        if max_n < 2:
            raise ValueError(f"max_n must be >= 2, got {max_n}")
        self.max_n = max_n
        self.seed = seed
        self.progress_callback = progress_callback

    def _log(self, message: str):
        if self.progress_callback:
            self.progress_callback(message)

    def _rng(self, tag: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, tag])

    def check_oracle_equivalence(self) -> Tuple[bool, str]:
        rng = self._rng(1)
        worst = 0.0
        sizes = range(2, min(self.max_n, 5) + 1)
        for m in sizes:
            for _ in range(50):
                scores = random_scores(rng, m)
                fast, slow = mtt_marginals(scores), oracle_marginals(scores)
                worst = max(worst, np.abs(fast.P - slow.P).max(), np.abs(fast.Pr - slow.Pr).max())
        return worst <= ORACLE_TOL, f"m={sizes.start}..{sizes.stop - 1} max|Δ|={worst:.2e}"

    def check_normalization(self) -> Tuple[bool, str]:
        rng = self._rng(2)
        worst = 0.0
        top = min(8, self.max_n + 3)
        for trial in range(200):
            m = 1 + trial % top
            marg = mtt_marginals(random_scores(rng, m))
            worst = max(worst, abs(marg.Pr.sum() - 1.0),
                        np.abs(marg.P.sum(axis=0) + marg.Pr - 1.0).max(), np.abs(np.diag(marg.P)).max())
        return worst <= NORMALIZATION_TOL, f"m=1..{top} max|Δ|={worst:.2e}"

    def check_shift_invariance(self) -> Tuple[bool, str]:
        rng = self._rng(3)
        worst = 0.0
        top = min(8, self.max_n + 3)
        for trial in range(50):
            scores = random_scores(rng, 1 + trial % top)
            base = mtt_marginals(scores)
            moved = mtt_marginals(scores.shifted(float(rng.uniform(-50.0, 50.0))))
            worst = max(worst, np.abs(base.P - moved.P).max(), np.abs(base.Pr - moved.Pr).max())
        return worst <= SHIFT_TOL, f"max|Δ|={worst:.2e}"

    def check_cle_optimality(self) -> Tuple[bool, str]:
        rng = self._rng(4)
        top = min(6, self.max_n + 1)
        worst = 0.0
        for m in range(2, top + 1):
            for _ in range(100):
                P = rng.uniform(0.0, 1.0, size=(m, m))
                np.fill_diagonal(P, 0.0)
                marg = TreeMarginals(P, rng.dirichlet(np.ones(m)))
                tree = cle_extract(marg)
                best = exhaustive_max_arborescence(np.log(P + 1e-12), root=tree.root)
                worst = max(worst, best.score - tree.score)
        for _ in range(100):
            m = int(rng.integers(1, 11))
            P = rng.uniform(0.0, 1.0, size=(m, m))
            tree = cle_extract(TreeMarginals(P, rng.dirichlet(np.ones(m))))
            if not is_arborescence(tree.heads):
                return False, f"invalid tree for m={m}"
        return worst <= 1e-9, f"m=2..{top} max shortfall={worst:.2e}"

    def check_gradient(self) -> Tuple[bool, str]:
        instance = fixture_instance()
        table = EmbeddingTable.from_instances([instance], dimension=4, seed=self.seed)
        config = ModelConfig(embedding_dim=4, encoder_dim=4)
        params = build_params(config, table, self.seed)
        model = ACLTModel(config, table, params, alpha=0.5)
        err = grad_check(lambda tape: model.forward(instance, tape=tape).loss.node, params, step=1e-5)
        return err <= GRAD_TOL, f"max rel err={err:.2e}"

    def properties(self) -> List[Tuple[str, Callable[[], Tuple[bool, str]]]]:
        return [
            ("oracle_equivalence", self.check_oracle_equivalence),
            ("normalization", self.check_normalization),
            ("shift_invariance", self.check_shift_invariance),
            ("cle_optimality", self.check_cle_optimality),
            ("gradient_check", self.check_gradient),
        ]

    def run(self) -> List[PropertyResult]:
        results = []
        for name, check in self.properties():
            start = time.perf_counter()
            try:
                passed, detail = check()
            except Exception as exc:
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            result = PropertyResult(name, bool(passed), detail, time.perf_counter() - start)
            self._log(("✅ " if result.passed else "❌ ") + result.line())
            results.append(result)
        return results


def first_failure(results: List[PropertyResult]) -> Optional[PropertyResult]:
    return next((r for r in results if not r.passed), None)

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
分类器训练与评估
小批量 Adam、按验证集选择最佳快照、准确率 / 宏 F1 评估、多种子汇总
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from aclt_model import ACLTModel, Prediction, build_params
from autodiff_core import NonFiniteError, NumericalError, ParamStore, Tape
from data_io import POLARITIES, DataValidationError, EmbeddingTable, Instance
from run_config import ConfigError, ModelConfig, RunConfig
from worker_pool import InstancePool, reduce_gradients

logger = logging.getLogger(__name__)


class TrainingAbort(NumericalError):
    """训练中出现非有限损失或数值错误，消息带 epoch / batch 坐标"""


@dataclass
class TrainConfig:
    """训练超参数"""
    alpha: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 30
    seed: int = 13
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.1
    early_stopping_metric: str = "accuracy"
    patience: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha out of range: {self.alpha} (must be in (0, 1))")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.early_stopping_metric not in ("accuracy", "macro_f1"):
            raise ConfigError(f"unknown early-stopping metric: {self.early_stopping_metric}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "TrainConfig":
        return cls(
            alpha=config["train.alpha"],
            learning_rate=config["train.learning_rate"],
            batch_size=config["train.batch_size"],
            max_epochs=config["train.max_epochs"],
            seed=config["train.seed"],
            adam_beta1=config["train.adam_beta1"],
            adam_beta2=config["train.adam_beta2"],
            adam_eps=config["train.adam_eps"],
            dropout=config["train.dropout"],
            early_stopping_metric=config["train.early_stopping_metric"],
            patience=config["train.patience"],
        )


@dataclass
class EvalReport:
    """评估报告；confusion[g][p] 行为真实类、列为预测类"""
    accuracy: float
    macro_f1: float
    precision: List[float]
    recall: List[float]
    f1: List[float]
    confusion: List[List[int]]
    aspect_root_mass: Optional[float] = None

    def metric(self, name: str) -> float:
        return self.accuracy if name == "accuracy" else self.macro_f1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_frame(self) -> pd.DataFrame:
        support = [int(sum(row)) for row in self.confusion]
        return pd.DataFrame({"precision": self.precision, "recall": self.recall,
                             "f1": self.f1, "support": support}, index=list(POLARITIES))

    def to_text(self) -> str:
        head = f"accuracy {self.accuracy:.4f}  macro_f1 {self.macro_f1:.4f}"
        if self.aspect_root_mass is not None:
            head += f"  aspect_root_mass {self.aspect_root_mass:.4f}"
        return head + "\n" + self.to_frame().to_string(float_format=lambda x: f"{x:.4f}")


def evaluation_report(gold: Sequence[int], predicted: Sequence[int]) -> EvalReport:
    """
    由真实/预测标签计算指标

    真实数与预测数都为 0 的类不计入宏 F1 的平均，其余类 F1 为 0 时照常计入。
    """
    k = len(POLARITIES)
    confusion = np.zeros((k, k), dtype=np.int64)
    for g, p in zip(gold, predicted):
        confusion[int(g), int(p)] += 1
    total = int(confusion.sum())
    correct = int(np.trace(confusion))
    precision, recall, f1, counted = [], [], [], []
    for c in range(k):
        tp = confusion[c, c]
        n_pred = confusion[:, c].sum()
        n_gold = confusion[c, :].sum()
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gold if n_gold else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(f))
        if n_pred or n_gold:
            counted.append(float(f))
    return EvalReport(
        accuracy=correct / total if total else 0.0,
        macro_f1=float(np.mean(counted)) if counted else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=confusion.tolist(),
    )


class Adam:
    """Adam 优化器（单写者，只在所有工作线程结束后调用 step）"""

    def __init__(self, params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(v) for name, v in params.items()}
        self.v = {name: np.zeros_like(v) for name, v in params.items()}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name in self.params.names():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[name] / bias1) / (np.sqrt(self.v[name] / bias2) + self.eps)
            self.params.set_value(name, self.params.value(name) - update)


@dataclass
class EpochRecord:
    epoch: int
    loss_a: float
    loss_s: float
    dev_acc: float
    dev_macro_f1: float
    aspect_root_mass: float
    config_digest: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        if self.config_digest is None:
            data.pop("config_digest")
        return data


@dataclass
class TrainResult:
    params: ParamStore
    log: List[EpochRecord]
    best_epoch: int
    best_report: EvalReport
    model_config: ModelConfig = field(default_factory=ModelConfig)


def predict_all(model: ACLTModel, dataset: Sequence[Instance],
                pool: Optional[InstancePool] = None) -> List[Prediction]:
    runner = pool or InstancePool(max_workers=1)
    return runner.map_ordered(model.predict, dataset)


def evaluate(params: ParamStore, dataset: Sequence[Instance], table: EmbeddingTable, config: ModelConfig,
             pool: Optional[InstancePool] = None) -> EvalReport:
    """逐实例 argmax 预测（并列取最小类号）并计算指标，附带平均方面根概率"""
    if not dataset:
        raise DataValidationError("cannot evaluate an empty dataset")
    model = ACLTModel(config, table, params)
    predictions = predict_all(model, dataset, pool)
    report = evaluation_report([inst.label_index for inst in dataset], [p.label for p in predictions])
    masses = [float(np.sum(p.marginals.Pr[inst.aspect_rows.start:inst.aspect_rows.stop]))
              for inst, p in zip(dataset, predictions)]
    report.aspect_root_mass = float(np.mean(masses))
    return report


class Trainer:
    """小批量训练器，按验证指标保留最佳快照（并列取较早 epoch）"""

    def __init__(self, table: EmbeddingTable, model_config: ModelConfig, train_config: TrainConfig,
                 pool: Optional[InstancePool] = None, config_digest: Optional[str] = None,
                 progress_callback: Optional[Callable[[str], None]] = None):
        self.table = table
        self.model_config = model_config
        self.config = train_config
        self._owns_pool = pool is None
        self.pool = pool if pool is not None else InstancePool()
        self.config_digest = config_digest
        self.progress_callback = progress_callback
        self.params = build_params(model_config, table, train_config.seed)
        self.model = ACLTModel(model_config, table, self.params, alpha=train_config.alpha,
                               dropout=train_config.dropout)
        self.optimizer = Adam(self.params, train_config.learning_rate, train_config.adam_beta1,
                              train_config.adam_beta2, train_config.adam_eps)

    def _log(self, message: str):
        if self.progress_callback:
            self.progress_callback(message)
        logger.info(message)

    def _instance_step(self, job: Tuple[int, int, int, Instance]):
        epoch, batch, index, instance = job
        rng = np.random.default_rng([self.config.seed, epoch, index])
        tape = Tape(self.params, label=instance.id)
        try:
            fp = self.model.forward(instance, tape=tape, train=True, rng=rng)
            loss = fp.loss.value
            if not math.isfinite(float(loss)):
                raise NonFiniteError("non-finite loss")
            grads = tape.gradients(fp.loss.node)
        except NumericalError as exc:
            raise TrainingAbort(
                f"epoch {epoch} batch {batch} instance {instance.id}: {exc}"
            ) from exc
        return grads, float(fp.loss_a.value), float(fp.loss_s.value), fp.aspect_root_mass

    def train_epoch(self, train_set: Sequence[Instance], epoch: int) -> Tuple[float, float, float]:
        order = np.random.default_rng([self.config.seed, epoch]).permutation(len(train_set))
        loss_a, loss_s, mass = [], [], []
        for batch, start in enumerate(range(0, len(order), self.config.batch_size)):
            idx = order[start:start + self.config.batch_size]
            if len(idx) == 0:
                raise TrainingAbort(f"epoch {epoch} batch {batch}: empty batch")
            jobs = [(epoch, batch, int(k), train_set[int(k)]) for k in idx]
            results = self.pool.map_ordered(self._instance_step, jobs)
            total = reduce_gradients([r[0] for r in results])
            grads = {name: g / len(idx) for name, g in total.items()}
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingAbort(f"epoch {epoch} batch {batch}: non-finite gradient")
            self.optimizer.step(grads)
            loss_a.extend(r[1] for r in results)
            loss_s.extend(r[2] for r in results)
            mass.extend(r[3] for r in results)
        return float(np.mean(loss_a)), float(np.mean(loss_s)), float(np.mean(mass))

    def fit(self, train_set: Sequence[Instance], dev_set: Sequence[Instance]) -> TrainResult:
        try:
            return self._fit(train_set, dev_set)
        finally:
            if self._owns_pool:
                self.pool.close()

    def _fit(self, train_set: Sequence[Instance], dev_set: Sequence[Instance]) -> TrainResult:
        if not train_set:
            raise DataValidationError("training set is empty")
        if not dev_set:
            raise DataValidationError("dev set is empty")
        metric = self.config.early_stopping_metric
        log: List[EpochRecord] = []
        best: Optional[Tuple[float, int, ParamStore, EvalReport]] = None
        stale = 0
        self._log(f"🚀 开始训练: {len(train_set)} 训练 / {len(dev_set)} 验证, 变体 {self.model_config.variant}")
        for epoch in range(1, self.config.max_epochs + 1):
            loss_a, loss_s, mass = self.train_epoch(train_set, epoch)
            report = evaluate(self.params, dev_set, self.table, self.model_config, self.pool)
            record = EpochRecord(epoch, loss_a, loss_s, report.accuracy, report.macro_f1, mass, self.config_digest)
            log.append(record)
            self._log(f"📈 epoch {epoch}: L_a={loss_a:.4f} L_s={loss_s:.4f} "
                      f"dev_acc={report.accuracy:.4f} dev_f1={report.macro_f1:.4f} root_mass={mass:.3f}")
            score = report.metric(metric)
            if best is None or score > best[0]:
                best = (score, epoch, self.params.snapshot(), report)
                stale = 0
            else:
                stale += 1
                if self.config.patience is not None and stale >= self.config.patience:
                    self._log(f"⏹️ {stale} 个 epoch 无提升，提前停止")
                    break
        score, best_epoch, snapshot, report = best
        self._log(f"✅ 训练完成: 最佳 epoch {best_epoch}, dev {metric}={score:.4f}")
        return TrainResult(snapshot, log, best_epoch, report, self.model_config)


def train(train_set: Sequence[Instance], dev_set: Sequence[Instance], table: EmbeddingTable,
          config: TrainConfig, model_config: Optional[ModelConfig] = None,
          pool: Optional[InstancePool] = None, config_digest: Optional[str] = None,
          progress_callback: Optional[Callable[[str], None]] = None) -> TrainResult:
    """训练并返回 (最佳快照, 逐 epoch 日志, …)"""
    trainer = Trainer(table, model_config or ModelConfig(embedding_dim=table.dimension), config,
                      pool, config_digest, progress_callback)
    return trainer.fit(train_set, dev_set)


def summarize_runs(reports: Sequence[EvalReport]) -> Dict[str, Dict[str, float]]:
    """多次运行的均值与平均绝对偏差"""
    if not reports:
        raise ValueError("no runs to summarize")
    out: Dict[str, Dict[str, float]] = {}
    for name in ("accuracy", "macro_f1"):
        values = np.array([getattr(r, name) for r in reports])
        mean = float(values.mean())
        out[name] = {"mean": mean, "mad": float(np.mean(np.abs(values - mean))), "runs": len(values)}
    return out

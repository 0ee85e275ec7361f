#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实例级线程池
多个独立计算带共享只读参数并行前向/反向，结果与梯度按下标顺序归约，保证与线程数无关的确定性
"""

import concurrent.futures
import logging
import os
from typing import Callable, Dict, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
import psutil

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_worker_count() -> int:
    """ARBOLATENT_THREADS 优先，否则逻辑核数"""
    raw = os.environ.get("ARBOLATENT_THREADS")
    if raw:
        try:
            value = int(raw)
        except ValueError:
            logger.warning("⚠️ ARBOLATENT_THREADS=%r 无效，改用逻辑核数", raw)
        else:
            if value >= 1:
                return value
            logger.warning("⚠️ ARBOLATENT_THREADS=%d 必须为正整数，改用逻辑核数", value)
    return psutil.cpu_count(logical=True) or 1


class InstancePool:
    """实例并行执行器"""

    def __init__(self, max_workers: Optional[int] = None,
                 progress_callback: Optional[Callable[[str], None]] = None):
        self.max_workers = max_workers or resolve_worker_count()
        self.progress_callback = progress_callback
        self._executor: Optional[concurrent.futures.ThreadPoolExecutor] = None
        self._log(f"🧵 实例线程池: {self.max_workers} 个工作线程")

    def _log(self, message: str):
        if self.progress_callback:
            self.progress_callback(message)
        logger.debug(message)

    def __enter__(self) -> "InstancePool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def map_ordered(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """并行执行，结果按输入顺序返回；任一任务异常时原样抛出"""
        items = list(items)
        if self.max_workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        if self._executor is None:
            self._executor = concurrent.futures.ThreadPoolExecutor(max_workers=self.max_workers)
        return list(self._executor.map(fn, items))


def reduce_gradients(grads: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """按下标顺序逐个相加"""
    if not grads:
        return {}
    total = {name: g.copy() for name, g in grads[0].items()}
    for item in grads[1:]:
        for name, g in item.items():
            total[name] = total[name] + g
    return total

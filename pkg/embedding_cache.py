#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
词向量解析缓存
大词向量文本文件的解析结果按文件内容 MD5 缓存（内存 + 磁盘两级），支持过期与文件变更检测
"""

import hashlib
import os
import pickle
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np

from data_io import EmbeddingTable


@dataclass
class CacheEntry:
    """缓存条目：词表、向量矩阵与源文件指纹"""
    words: list
    vectors: np.ndarray
    dimension: int
    file_hash: str
    file_size: int
    file_mtime: float
    cache_time: float
    access_count: int = 0
    last_access: float = 0.0
    lowercase: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CacheEntry":
        return cls(**data)

    def is_expired(self, max_age_hours: float) -> bool:
        return time.time() - self.cache_time > max_age_hours * 3600

    def is_file_changed(self, file_path: str) -> bool:
        try:
            stat = os.stat(file_path)
            return stat.st_size != self.file_size or stat.st_mtime != self.file_mtime
        except OSError:
            return True

    def to_table(self) -> EmbeddingTable:
        return EmbeddingTable(self.dimension, list(self.words), self.vectors.copy(), self.lowercase)


class EmbeddingCache:
    """词向量缓存管理器"""

    def __init__(self,
                 cache_dir: str,
                 max_age_hours: float = 24 * 7,
                 max_memory_items: int = 4,
                 progress_callback: Optional[Callable[[str], None]] = None):
        """
        初始化缓存

        Args:
            cache_dir: 磁盘缓存目录
            max_age_hours: 缓存有效期（小时）
            max_memory_items: 内存中最多保留的词表数
            progress_callback: 进度回调函数
        """
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_age_hours = max_age_hours
        self.max_memory_items = max_memory_items
        self.progress_callback = progress_callback
        self.lock = threading.RLock()
        self.memory_cache: Dict[str, CacheEntry] = {}
        self.stats = {"hits": 0, "misses": 0, "memory_hits": 0, "disk_hits": 0, "tables_cached": 0}
        self._cleanup_expired()
        self._log(f"💾 词向量缓存已启用: {self.cache_dir}")

    def _log(self, message: str):
        if self.progress_callback:
            self.progress_callback(message)

    @staticmethod
    def _file_hash(file_path: str) -> str:
        digest = hashlib.md5()
        with open(file_path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
        return digest.hexdigest()

    def _cache_file(self, key: str) -> Path:
        return self.cache_dir / f"{key}.cache"

    def get(self, file_path: str, prefix: str = "") -> Optional[EmbeddingTable]:
        """
        读取缓存

        Returns:
            命中时返回词表，未命中、过期或源文件已变更时返回 None
        """
        with self.lock:
            try:
                key = prefix + self._file_hash(file_path)
            except OSError:
                self.stats["misses"] += 1
                return None

            entry = self.memory_cache.get(key)
            if entry is not None:
                if entry.is_expired(self.max_age_hours) or entry.is_file_changed(file_path):
                    del self.memory_cache[key]
                else:
                    entry.access_count += 1
                    entry.last_access = time.time()
                    self.stats["hits"] += 1
                    self.stats["memory_hits"] += 1
                    return entry.to_table()

            cache_file = self._cache_file(key)
            if cache_file.exists():
                try:
                    with open(cache_file, "rb") as f:
                        entry = CacheEntry.from_dict(pickle.load(f))
                except Exception as e:
                    self._log(f"⚠️ 缓存文件损坏，已删除: {e}")
                    cache_file.unlink(missing_ok=True)
                    entry = None
                if entry is not None:
                    if entry.is_expired(self.max_age_hours) or entry.is_file_changed(file_path):
                        cache_file.unlink(missing_ok=True)
                    else:
                        self._remember(key, entry)
                        self.stats["hits"] += 1
                        self.stats["disk_hits"] += 1
                        self._log(f"✅ 词向量缓存命中: {Path(file_path).name}")
                        return entry.to_table()

            self.stats["misses"] += 1
            return None

    def set(self, file_path: str, table: EmbeddingTable, prefix: str = "") -> bool:
        """写入缓存（内存与磁盘）"""
        with self.lock:
            try:
                stat = os.stat(file_path)
                now = time.time()
                entry = CacheEntry(
                    words=list(table.words),
                    vectors=table.vectors.copy(),
                    dimension=table.dimension,
                    file_hash=self._file_hash(file_path),
                    file_size=stat.st_size,
                    file_mtime=stat.st_mtime,
                    cache_time=now,
                    access_count=1,
                    last_access=now,
                    lowercase=table.lowercase,
                )
                key = prefix + entry.file_hash
                self._remember(key, entry)
                with open(self._cache_file(key), "wb") as f:
                    pickle.dump(entry.to_dict(), f)
                self.stats["tables_cached"] += 1
                return True
            except Exception as e:
                self._log(f"❌ 词向量缓存写入失败: {e}")
                return False

    def _remember(self, key: str, entry: CacheEntry) -> None:
        if key not in self.memory_cache and len(self.memory_cache) >= self.max_memory_items:
            oldest = min(self.memory_cache.items(), key=lambda kv: kv[1].last_access)[0]
            del self.memory_cache[oldest]
        self.memory_cache[key] = entry

    def _cleanup_expired(self) -> None:
        cleaned = 0
        for cache_file in self.cache_dir.glob("*.cache"):
            try:
                with open(cache_file, "rb") as f:
                    entry = CacheEntry.from_dict(pickle.load(f))
                expired = entry.is_expired(self.max_age_hours)
            except Exception:
                expired = True
            if expired:
                cache_file.unlink(missing_ok=True)
                cleaned += 1
        if cleaned:
            self._log(f"🧹 清理了 {cleaned} 个过期词向量缓存")

    def clear(self) -> None:
        with self.lock:
            self.memory_cache.clear()
            for cache_file in self.cache_dir.glob("*.cache"):
                cache_file.unlink(missing_ok=True)

    def get_stats(self) -> Dict[str, Any]:
        total = self.stats["hits"] + self.stats["misses"]
        stats = dict(self.stats)
        stats["hit_rate_percent"] = round(100.0 * self.stats["hits"] / total, 2) if total else 0.0
        stats["memory_items"] = len(self.memory_cache)
        return stats


def cache_from_env(progress_callback: Optional[Callable[[str], None]] = None) -> Optional[EmbeddingCache]:
    """ARBOLATENT_CACHE_DIR 设置时返回缓存实例，否则 None"""
    cache_dir = os.environ.get("ARBOLATENT_CACHE_DIR")
    if not cache_dir:
        return None
    max_age = float(os.environ.get("ARBOLATENT_CACHE_MAX_AGE_HOURS", 24 * 7))
    return EmbeddingCache(cache_dir, max_age_hours=max_age, progress_callback=progress_callback)

import os
import time

import numpy as np

from data_io import NODE0, PAD, UNK, EmbeddingTable
from embedding_cache import EmbeddingCache, cache_from_env


def _table():
    words = [UNK, PAD, NODE0, "food"]
    return EmbeddingTable(2, words, np.arange(8.0).reshape(4, 2))


def _vectors(tmp_path, text="food 1 2\n"):
    path = tmp_path / "vec.txt"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_disk_tier_survives_a_new_instance(tmp_path):
    src = _vectors(tmp_path)
    EmbeddingCache(str(tmp_path / "c")).set(src, _table())
    other = EmbeddingCache(str(tmp_path / "c"))
    assert other.get(src) == _table()
    assert other.get_stats()["disk_hits"] == 1


def test_disk_tier_keeps_the_case_flag(tmp_path):
    src = _vectors(tmp_path, "Food 1 2\n")
    exact = EmbeddingTable(2, [UNK, PAD, NODE0, "Food"], np.arange(8.0).reshape(4, 2), lowercase=False)
    EmbeddingCache(str(tmp_path / "c")).set(src, exact)
    loaded = EmbeddingCache(str(tmp_path / "c")).get(src)
    assert loaded is not None and not loaded.lowercase
    np.testing.assert_array_equal(loaded.lookup("Food"), [6.0, 7.0])


def test_changed_file_is_a_miss(tmp_path):
    src = _vectors(tmp_path)
    cache = EmbeddingCache(str(tmp_path / "c"))
    cache.set(src, _table())
    with open(src, "a", encoding="utf-8") as f:
        f.write("wine 3 4\n")
    assert cache.get(src) is None


def test_prefix_separates_entries(tmp_path):
    src = _vectors(tmp_path)
    cache = EmbeddingCache(str(tmp_path / "c"))
    cache.set(src, _table(), prefix="emb_d2_s0_")
    assert cache.get(src, prefix="emb_d2_s1_") is None
    assert cache.get(src, prefix="emb_d2_s0_") is not None


def test_expired_entries_are_dropped(tmp_path):
    src = _vectors(tmp_path)
    cache = EmbeddingCache(str(tmp_path / "c"), max_age_hours=1e-9)
    cache.set(src, _table())
    time.sleep(0.01)
    assert cache.get(src) is None


def test_memory_tier_is_bounded(tmp_path):
    cache = EmbeddingCache(str(tmp_path / "c"), max_memory_items=1)
    first = _vectors(tmp_path)
    second = str(tmp_path / "other.txt")
    with open(second, "w", encoding="utf-8") as f:
        f.write("wine 0 0\n")
    cache.set(first, _table())
    cache.set(second, _table())
    assert cache.get_stats()["memory_items"] == 1


def test_clear(tmp_path):
    src = _vectors(tmp_path)
    cache = EmbeddingCache(str(tmp_path / "c"))
    cache.set(src, _table())
    cache.clear()
    assert cache.get(src) is None
    assert not list((tmp_path / "c").glob("*.cache"))


def test_cache_from_env(monkeypatch, tmp_path):
    monkeypatch.delenv("ARBOLATENT_CACHE_DIR", raising=False)
    assert cache_from_env() is None
    monkeypatch.setenv("ARBOLATENT_CACHE_DIR", str(tmp_path / "env-cache"))
    cache = cache_from_env()
    assert cache is not None and os.path.isdir(tmp_path / "env-cache")

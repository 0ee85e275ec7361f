import json
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from data_io import EmbeddingTable, Instance  # noqa: E402
from run_config import ModelConfig  # noqa: E402


@pytest.fixture
def tiny_config():
    return ModelConfig(embedding_dim=4, encoder_dim=4, tree_encoder_layers=1)


@pytest.fixture
def instances():
    return [
        Instance(["the", "food", "was", "great"], (1, 2), "positive", (1, 3, 3, -1), id="a"),
        Instance(["the", "waiter", "was", "rude"], (1, 2), "negative", (1, 3, 3, -1), id="b"),
        Instance(["we", "asked", "about", "the", "menu"], (4, 5), "neutral", (1, -1, 4, 4, 1), id="c"),
        Instance(["the", "wine", "list", "is", "excellent"], (1, 3), "positive", (2, 2, 4, 4, -1), id="d"),
    ]


@pytest.fixture
def tiny_table(instances):
    return EmbeddingTable.from_instances(instances, dimension=4, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(name, rows):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            for row in rows:
                f.write((row if isinstance(row, str) else json.dumps(row)) + "\n")
        return path
    return _write

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autodiff_core import ParamStore, ShapeError, Tape
from data_io import NODE0, PAD, EmbeddingTable, Instance
from run_config import ModelConfig
from sentence_encoder import encode, register_encoder_params


def _setup(config, instances):
    table = EmbeddingTable.from_instances(instances, dimension=config.embedding_dim, seed=0)
    store = ParamStore(seed=2)
    register_encoder_params(store, config, table)
    return table, store


def test_single_token(tiny_config):
    inst = Instance(["food"], (0, 1), "neutral")
    table, store = _setup(tiny_config, [inst])
    enc = encode(inst, table, store, tiny_config)
    assert enc.H.shape == (2, 4)
    np.testing.assert_array_equal(enc.h_a.value, enc.H.value[1])


def test_deterministic(tiny_config, instances):
    table, store = _setup(tiny_config, instances)
    a = encode(instances[0], table, store, tiny_config).H.value
    b = encode(instances[0], table, store, tiny_config).H.value
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind", ["window", "recurrent"])
def test_two_token_aspect_is_the_mean(tiny_config, instances, kind):
    config = replace(tiny_config, encoder_kind=kind)
    table, store = _setup(config, instances)
    enc = encode(instances[3], table, store, config)
    H = enc.H.value
    assert H.shape == (6, 4) and np.all(np.isfinite(H))
    np.testing.assert_allclose(enc.h_a.value, (H[2] + H[3]) / 2.0, atol=1e-12)


def test_aspect_indicator_changes_the_encoding(tiny_config):
    a = Instance(["the", "food", "was", "great"], (1, 2), "positive")
    b = Instance(["the", "food", "was", "great"], (3, 4), "positive")
    table, store = _setup(tiny_config, [a])
    assert not np.allclose(encode(a, table, store, tiny_config).H.value,
                           encode(b, table, store, tiny_config).H.value)


def test_dropout_is_seeded(tiny_config, instances):
    table, store = _setup(tiny_config, instances)
    a = encode(instances[0], table, store, tiny_config, dropout=0.5, rng=np.random.default_rng([1, 2, 3])).H.value
    b = encode(instances[0], table, store, tiny_config, dropout=0.5, rng=np.random.default_rng([1, 2, 3])).H.value
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError, match="rng"):
        encode(instances[0], table, store, tiny_config, dropout=0.5)


def test_vocabulary_mismatch(tiny_config, instances):
    table, store = _setup(tiny_config, instances)
    bigger = EmbeddingTable.from_vocabulary(["extra", "words", "here"] + [t for i in instances for t in i.tokens],
                                            dimension=4)
    with pytest.raises(ShapeError):
        encode(instances[0], bigger, store, tiny_config, tape=Tape(store))


@pytest.mark.parametrize("kind", ["window", "recurrent"])
def test_embedding_gradient_touches_only_used_rows(tiny_config, instances, kind):
    config = replace(tiny_config, encoder_kind=kind)
    table, store = _setup(config, instances)
    enc = encode(instances[0], table, store, config)
    grads = enc.tape.gradients(enc.tape.sum(enc.H.node))["embedding.table"]
    used = set(table.indices(instances[0].tokens).tolist()) | {table.index_of(NODE0)}
    if kind == "window":
        used.add(table.index_of(PAD))
    touched = set(np.flatnonzero(np.any(grads != 0.0, axis=1)).tolist())
    assert touched <= used
    assert table.index_of("waiter") not in touched and table.index_of("menu") not in touched
    assert set(table.indices(instances[0].tokens).tolist()) <= touched


@settings(max_examples=25, deadline=None)
@given(window=st.integers(0, 2), position=st.integers(1, 6))
def test_window_encoder_is_local(window, position):
    config = ModelConfig(embedding_dim=4, encoder_dim=4, encoder_window=window)
    base = ["the", "food", "was", "great", "but", "service", "slow"]
    changed = list(base)
    changed[position] = "awful"
    a = Instance(base, (0, 1), "positive")
    b = Instance(changed, (0, 1), "positive")
    table, store = _setup(config, [a, b])
    H_a = encode(a, table, store, config).H.value
    H_b = encode(b, table, store, config).H.value
    for row in range(H_a.shape[0]):
        if row >= 1 and abs(row - 1 - position) <= window:
            assert not np.allclose(H_a[row], H_b[row])
        else:
            np.testing.assert_array_equal(H_a[row], H_b[row])

import numpy as np
import pytest

from aclt_model import ACLTModel, build_params
from model_store import SnapshotError, check_compatible, load_snapshot, save_snapshot
from run_config import ModelConfig, RunConfig

TINY = {"embedding.dim": 4, "encoder.dim": 4, "tree_encoder.layers": 1}


@pytest.fixture
def saved(tmp_path, tiny_table):
    config = RunConfig(TINY)
    params = build_params(ModelConfig.from_run_config(config), tiny_table, 11)
    path = tmp_path / "model.snap"
    save_snapshot(path, params, tiny_table.words, config, seed=11, epoch=3, extra={"note": "x"})
    return path, params, config


def test_save_then_load(saved, tiny_table, instances):
    path, params, config = saved
    snap = load_snapshot(path)
    assert snap.params.names() == params.names()
    for name in params.names():
        np.testing.assert_array_equal(snap.params.value(name), params.value(name))
    assert (snap.seed, snap.epoch, snap.extra) == (11, 3, {"note": "x"})
    assert snap.run_config() == config
    assert snap.vocab == tiny_table.words
    model_config = snap.model_config()
    before = ACLTModel(model_config, tiny_table, params).predict(instances[0]).probs
    after = ACLTModel(model_config, snap.table(), snap.params).predict(instances[0]).probs
    np.testing.assert_array_equal(before, after)


def test_header_is_a_json_line(saved):
    path, _, _ = saved
    first = path.read_bytes().split(b"\n", 1)[0]
    assert first.startswith(b"{") and b"arbolatent-snapshot/1" in first


def test_truncated_values(saved):
    path, _, _ = saved
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(SnapshotError, match="expected"):
        load_snapshot(path)


@pytest.mark.parametrize("cut", [1, 3, 7, 12])
def test_payload_cut_mid_value(saved, cut):
    path, _, _ = saved
    path.write_bytes(path.read_bytes()[:-cut])
    with pytest.raises(SnapshotError, match="truncated|expected"):
        load_snapshot(path)


def test_header_without_parameter_layout(tmp_path):
    path = tmp_path / "partial.snap"
    path.write_bytes(b'{"format": "arbolatent-snapshot/1", "names": ["w"]}\n')
    with pytest.raises(SnapshotError, match="lacks"):
        load_snapshot(path)
    path.write_bytes(b'[1, 2]\n')
    with pytest.raises(SnapshotError, match="unsupported"):
        load_snapshot(path)


def test_corrupt_header(tmp_path):
    path = tmp_path / "bad.snap"
    path.write_bytes(b"not json\n\x00\x00")
    with pytest.raises(SnapshotError, match="header"):
        load_snapshot(path)
    path.write_bytes(b"no newline at all")
    with pytest.raises(SnapshotError, match="header"):
        load_snapshot(path)


def test_wrong_format_tag(tmp_path):
    path = tmp_path / "other.snap"
    path.write_bytes(b'{"format": "something-else"}\n')
    with pytest.raises(SnapshotError, match="unsupported"):
        load_snapshot(path)


def test_compatible_configs(saved):
    path, _, config = saved
    snap = load_snapshot(path)
    check_compatible(snap, ModelConfig.from_run_config(config))
    check_compatible(snap, ModelConfig.from_run_config(config.with_overrides({"prune.k": 2})))


def test_structure_mismatch(saved):
    path, _, config = saved
    snap = load_snapshot(path)
    for overrides in ({"encoder.dim": 8}, {"tree_encoder.kind": "gcn"}, {"model.variant": "no_tree"}):
        with pytest.raises(SnapshotError, match="snapshot/config mismatch"):
            check_compatible(snap, ModelConfig.from_run_config(config.with_overrides(overrides)))

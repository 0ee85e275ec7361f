from dataclasses import replace

import numpy as np
import pytest

from aclt_model import ACLTModel, build_params, uses_latent_tree
from autodiff_core import grad_check
from data_io import DataValidationError, Instance
from tree_tools import ROOT, is_arborescence


def _model(config, table, alpha=0.5, seed=0):
    return ACLTModel(config, table, build_params(config, table, seed), alpha=alpha)


def test_params_are_seeded(tiny_config, tiny_table):
    a = build_params(tiny_config, tiny_table, 3)
    b = build_params(tiny_config, tiny_table, 3)
    assert a.names() == b.names()
    for name in a.names():
        np.testing.assert_array_equal(a.value(name), b.value(name))


def test_build_params_checks_dimension(tiny_config, tiny_table):
    with pytest.raises(ValueError, match="embedding"):
        build_params(replace(tiny_config, embedding_dim=8), tiny_table, 0)


def test_inducer_params_only_for_latent_trees(tiny_config, tiny_table):
    assert any(n.startswith("inducer.") for n in build_params(tiny_config, tiny_table, 0).names())
    for config in (replace(tiny_config, variant="no_tree"), replace(tiny_config, tree_source="parser")):
        assert not uses_latent_tree(config)
        assert not any(n.startswith("inducer.") for n in build_params(config, tiny_table, 0).names())


def test_forward_shapes_and_losses(tiny_config, tiny_table, instances):
    model = _model(tiny_config, tiny_table, alpha=0.3)
    fp = model.forward(instances[0])
    m = len(instances[0].tokens) + 1
    assert fp.marginals.P.shape == (m, m)
    assert abs(fp.probs.value.sum() - 1.0) <= 1e-12
    expected = 0.3 * float(fp.loss_a.value) + 0.7 * float(fp.loss_s.value)
    assert abs(float(fp.loss.value) - expected) <= 1e-12
    assert 0.0 <= fp.aspect_root_mass <= 1.0


def test_mtt_variant_trains_on_sentiment_only(tiny_config, tiny_table, instances):
    fp = _model(replace(tiny_config, variant="mtt"), tiny_table).forward(instances[0])
    assert float(fp.loss.value) == float(fp.loss_s.value)
    assert float(fp.loss_a.value) > 0.0


def test_fixed_root_puts_root_on_first_aspect_token(tiny_config, tiny_table, instances):
    inst = instances[3]
    fp = _model(replace(tiny_config, variant="fixed_root"), tiny_table).forward(inst)
    assert fp.marginals.Pr[inst.aspect_rows.start] >= 1.0 - 1e-9


def test_no_tree_variant_roots_at_sentence_node(tiny_config, tiny_table, instances):
    fp = _model(replace(tiny_config, variant="no_tree"), tiny_table).forward(instances[1])
    np.testing.assert_array_equal(fp.marginals.P, 0.0)
    assert fp.marginals.Pr[0] == 1.0
    assert float(fp.loss.value) == float(fp.loss_s.value)


def test_parser_source_uses_parse_heads(tiny_config, tiny_table, instances):
    fp = _model(replace(tiny_config, tree_source="parser"), tiny_table).forward(instances[0])
    assert fp.marginals.P[0, 4] == 1.0 and fp.marginals.P[4, 2] == 1.0
    assert fp.marginals.Pr[0] == 1.0


def test_parser_source_needs_heads(tiny_config, tiny_table):
    model = _model(replace(tiny_config, tree_source="parser"), tiny_table)
    with pytest.raises(DataValidationError, match="parse_heads"):
        model.forward(Instance(["the", "food"], (1, 2), "neutral", id="noparse"))


@pytest.mark.parametrize("kind", ["structured_attention", "gcn"])
def test_predict_and_induce(tiny_config, tiny_table, instances, kind):
    model = _model(replace(tiny_config, tree_encoder_kind=kind), tiny_table)
    pred = model.predict(instances[2])
    assert pred.label == int(np.argmax(pred.probs))
    assert pred.marginals.P_var is None
    tree, marginals = model.induce(instances[2])
    assert tree.m == len(instances[2].tokens) + 1 and tree.token_offset == 1
    assert is_arborescence(tree.heads) and tree.heads[tree.root] == ROOT
    assert tree.root == int(np.argmax(marginals.Pr))


def test_prediction_is_deterministic(tiny_config, tiny_table, instances):
    a = _model(tiny_config, tiny_table, seed=5).predict(instances[3])
    b = _model(tiny_config, tiny_table, seed=5).predict(instances[3])
    np.testing.assert_array_equal(a.probs, b.probs)


def test_pruned_forward_runs(tiny_config, tiny_table, instances):
    fp = _model(replace(tiny_config, prune_k=1), tiny_table).forward(instances[2])
    assert np.isfinite(float(fp.loss.value))


def test_dropout_only_in_training(tiny_config, tiny_table, instances):
    model = ACLTModel(tiny_config, tiny_table, build_params(tiny_config, tiny_table, 0), dropout=0.5)
    plain = model.forward(instances[0]).probs.value
    again = model.forward(instances[0]).probs.value
    np.testing.assert_array_equal(plain, again)
    trained = model.forward(instances[0], train=True, rng=np.random.default_rng(0)).probs.value
    assert not np.array_equal(plain, trained)


@pytest.mark.parametrize("variant", ["aclt", "fixed_root"])
def test_full_model_gradients(tiny_config, tiny_table, instances, variant):
    config = replace(tiny_config, variant=variant)
    model = _model(config, tiny_table, seed=2)

    def f(tape):
        return model.forward(instances[0], tape=tape).loss.node

    assert grad_check(f, model.params) <= 1e-4

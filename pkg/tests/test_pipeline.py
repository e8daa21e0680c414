import json
import math

import pytest
from hypothesis import given, strategies as st

from builders import chain, figure_tree, identity_pipeline, leaf, node
from conftest import example_path
from ravenlet import pipeline as pl
from ravenlet.errors import SchemaError, ValidationError
from ravenlet.synth import SynthConfig, make_case


def _doc(**over):
    doc = {
        "format": "ravenlet/1",
        "name": "tiny",
        "inputs": [{"name": "x", "dtype": "float64"}],
        "nodes": [
            {"id": "s", "op": "Scaler", "offsets": [0.0], "scales": [1.0]},
            {"id": "m", "op": "LinearModel", "weights": [[1.0]], "intercepts": [0.0]},
        ],
        "edges": [{"from": "x", "to": "s", "port": 0}, {"from": "s", "to": "m", "port": 0}],
        "outputs": [{"name": "score", "node": "m", "port": "score"},
                    {"name": "label", "node": "m", "port": "label"}],
    }
    doc.update(over)
    return doc


def test_load_two_node_pipeline():
    p = pl.load_pipeline(json.dumps(_doc()))
    assert len(p.nodes) == 2
    assert p.input_names == ["x"]
    assert isinstance(p.node("s").op, pl.Scaler)


def test_dangling_edge_is_rejected():
    doc = _doc()
    doc["edges"][1] = {"from": "ghost", "to": "m", "port": 0}
    with pytest.raises(ValidationError, match="dangling edge"):
        pl.load_pipeline(json.dumps(doc))


def test_running_example_loads():
    p = pl.read_pipeline(example_path("model.json"))
    assert len(p.inputs) == 4
    kinds = [type(n.op).__name__ for n in p.nodes]
    assert kinds.count("TreeEnsemble") == 1
    assert {"Scaler", "OneHotEncoder", "Concat"} <= set(kinds)
    assert len(p.model_node.op.trees) == 1
    assert not pl.validate(p)


@pytest.mark.parametrize("bad, message", [
    ("not json", "JSON"),
    (json.dumps([1, 2]), "object"),
    (json.dumps({"format": "ravenlet/1"}), "missing"),
])
def test_malformed_documents(bad, message):
    with pytest.raises(SchemaError):
        pl.load_pipeline(bad)


def test_wrong_format_tag():
    with pytest.raises(SchemaError):
        pl.load_pipeline(json.dumps(_doc(format="onnx")))


def test_cycle_reported():
    p = chain([pl.PipelineInput("x", "float64")], [("a", pl.Scaler((0.0,), (1.0,)), ["b"]),
                                                     ("b", pl.Scaler((0.0,), (1.0,)), ["a"])],
              pl.LinearModel(((1.0,),), (0.0,)))
    assert any("cycle" in r for r in pl.validate(p).reasons())


def test_duplicate_category_reported():
    p = chain([pl.PipelineInput("c", "string")], [("ohe", pl.OneHotEncoder((("A", "A"),)), None)],
              pl.LinearModel(((1.0,), (1.0,)), (0.0,)))
    assert "duplicate category" in pl.validate(p).reasons()


def test_nan_scale_cannot_be_saved():
    p = chain([pl.PipelineInput("x", "float64")], [("s", pl.Scaler((0.0,), (math.nan,)), None)],
              pl.LinearModel(((1.0,),), (0.0,)))
    with pytest.raises(ValidationError, match="non-finite scale"):
        pl.save_pipeline(p)


@pytest.mark.parametrize("bad_op, reason", [
    (pl.Scaler((0.0, 1.0), (1.0, 1.0)), "Scaler parameters"),
    (pl.FeatureExtractor((0, 0)), "duplicate feature index"),
    (pl.FeatureExtractor((3,)), "out of range"),
    (pl.OneHotEncoder(((),)), "empty category list"),
])
def test_featurizer_invariants(bad_op, reason):
    p = chain([pl.PipelineInput("x", "float64")], [("f", bad_op, None)], pl.LinearModel(((1.0,),), (0.0,)))
    assert any(reason in r for r in pl.validate(p).reasons())


def test_linear_rows_must_match_width():
    p = chain([pl.PipelineInput("x", "float64")], [], pl.LinearModel(((1.0,), (2.0,)), (0.0,)))
    assert any("weight rows" in r for r in pl.validate(p).reasons())


def test_tree_feature_out_of_range():
    t = pl.TreeEnsemble((node(3, "<", 1, leaf(0), leaf(1)),))
    p = chain([pl.PipelineInput("x", "float64")], [], t)
    assert any("out of range" in r for r in pl.validate(p).reasons())


def test_round_trip_trivial():
    p = identity_pipeline()
    assert pl.load_pipeline(pl.save_pipeline(p)) == p


def test_round_trip_running_example():
    p = pl.read_pipeline(example_path("model.json"))
    assert pl.load_pipeline(pl.save_pipeline(p)) == p


def test_load_then_save_is_identity_up_to_key_order():
    raw = open(example_path("model.json")).read()
    again = pl.save_pipeline(pl.load_pipeline(raw))
    assert json.loads(again) == json.loads(raw)


def test_widths_follow_edges():
    p = pl.read_pipeline(example_path("model.json"))
    w = p.widths()
    assert w["scaler"] == 2 and w["ohe_asthma"] == 2 and w["ohe_gender"] == 2
    assert w["concat"] == w["scaler"] + w["ohe_asthma"] + w["ohe_gender"]


def test_tree_helpers():
    t = figure_tree()
    assert pl.tree_depth(t) == 2
    assert pl.tree_size(t) == 7
    assert len(pl.tree_leaves(t)) == 4
    assert pl.tree_features(t) == {0, 1, 2}
    assert pl.tree_features(pl.remap_tree(t, {0: 5, 1: 6, 2: 7})) == {5, 6, 7}


@given(st.integers(0, 10_000))
def test_round_trip_generated(seed):
    p = make_case(seed, SynthConfig(n_rows=5)).pipeline
    assert not pl.validate(p)
    assert pl.load_pipeline(pl.save_pipeline(p)) == p


@given(st.integers(0, 10_000))
def test_generated_widths_consistent(seed):
    p = make_case(seed, SynthConfig(n_rows=5)).pipeline
    w = p.widths()
    for n in pl.topo_nodes(p):
        if isinstance(n.op, pl.Concat):
            assert w[n.id] == sum(w[s] for s in n.inputs)

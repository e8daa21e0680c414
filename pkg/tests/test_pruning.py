import itertools

import numpy as np
from hypothesis import given, settings, strategies as st

from builders import GRID, chain, eval_tree, leaf, node, one_table, plan_for, random_tree
from ravenlet import ir
from ravenlet import pipeline as pl
from ravenlet.executor import execute_plan, make_table
from ravenlet.optimizer import predicate_based_model_pruning
from ravenlet.synth import SynthConfig, equal_tables, make_case


def test_running_example_asthma(example):
    plan = predicate_based_model_pruning(example["plan"])
    assert "pt.asthma" not in plan.node("project.input").op.columns
    (const,) = plan.find(pl.Constant)
    assert const.op.values == (1.0,)
    assert plan.consumers(const.id) == ["ml.ohe_asthma"]
    (tree,) = plan.model_node.op.trees
    # root (asthma test) and its right branch are gone
    assert tree == node(0, ">", 60, node(4, "==", 0, leaf(1), leaf(0)), node(5, "==", 1, leaf(1), leaf(0)))


def test_no_predicates_leaves_plan_alone(example):
    plan = example["plan"]
    assert predicate_based_model_pruning(plan, [], []) == plan


def _grid_table(n_features, extra=()):
    cols = [("id", "int64")] + [(f"f{j}", "float64") for j in range(n_features)] + list(extra)
    rows = list(itertools.product(GRID, repeat=n_features))
    data = {"id": np.arange(len(rows))}
    for j in range(n_features):
        data[f"f{j}"] = np.array([r[j] for r in rows])
    return cols, data, rows


def _tree_pipeline(tree, n_features):
    inputs = [pl.PipelineInput(f"f{j}", "float64") for j in range(n_features)]
    return chain(inputs, [], pl.TreeEnsemble((tree,), classes=(0, 1)))


def _depth4_tree(rng):
    # full depth-4 tree whose root tests feature 0; other levels test any feature
    def build(d):
        if d == 4:
            return leaf(float(rng.integers(0, 2)))
        f = 0 if d == 0 else int(rng.integers(0, 3))
        return node(f, str(rng.choice(["<", "<=", ">", ">=", "=="])), float(rng.choice(GRID)),
                    build(d + 1), build(d + 1))
    return build(0)


def _tests_on(t, feature):
    if isinstance(t, pl.Leaf):
        return 0
    return (t.feature == feature) + _tests_on(t.true, feature) + _tests_on(t.false, feature)


@given(st.integers(0, 2**32 - 1), st.sampled_from(GRID))
def test_equality_on_root_feature_grid_oracle(seed, v):
    tree = _depth4_tree(np.random.default_rng(seed))
    cols, data, rows = _grid_table(3)
    cat = one_table(cols)
    q = f"SELECT t.id, PREDICT(m.json, f0, f1, f2) AS p FROM t WHERE f0 = {v}"
    plan = plan_for(q, _tree_pipeline(tree, 3), cat)
    out = predicate_based_model_pruning(plan)
    (pruned,) = out.model_node.op.trees
    assert _tests_on(pruned, 0) == 0
    assert pl.tree_size(pruned) <= pl.tree_size(tree)
    got = execute_plan(out, {"t": make_table(cols, data)})
    # exhaustive oracle over the 5x5x5 grid rows that satisfy f0 = v
    want = [(i, eval_tree(tree, r)) for i, r in enumerate(rows) if r[0] == v]
    assert [(int(i), float(s)) for i, s in zip(got["t.id"], got["p"])] == want


def test_output_predicate_collapses_failing_subtree():
    tree = node(0, "<", 0, node(1, "<", 0, leaf(0), leaf(0)), node(1, "<", 1, leaf(1), leaf(0)))
    cols, data, _ = _grid_table(2)
    cat = one_table(cols)
    q = "SELECT t.id, PREDICT(m.json, f0, f1) AS p FROM t WHERE p = 1"
    plan = plan_for(q, _tree_pipeline(tree, 2), cat)
    out = predicate_based_model_pruning(plan)
    (pruned,) = out.model_node.op.trees
    assert pl.tree_size(pruned) == 5
    assert isinstance(pruned.true, pl.Leaf)
    tables = {"t": make_table(cols, data)}
    assert equal_tables(execute_plan(out, tables), execute_plan(plan, tables))


def test_contradiction_gives_empty_result():
    cols, data, _ = _grid_table(2)
    cat = one_table(cols)
    plan = plan_for("SELECT t.id, PREDICT(m.json, f0, f1) AS p FROM t WHERE f0 = 1 AND f0 = 2",
                    _tree_pipeline(node(0, "<", 0, leaf(0), leaf(1)), 2), cat)
    out = predicate_based_model_pruning(plan)
    assert isinstance(out.node(out.root).op, ir.EmptyResult)
    res = execute_plan(out, {"t": make_table(cols, data)})
    assert res.n_rows == 0
    assert list(res.schema) == list(plan.schema(plan.root))


def test_not_equal_on_category_prunes_one_hot_test():
    cols = [("id", "int64"), ("c", "string")]
    cat = one_table(cols)
    tree = node(1, "==", 1, leaf(1), node(0, "==", 1, leaf(0), leaf(1)))
    p = chain([pl.PipelineInput("c", "string")], [("ohe", pl.OneHotEncoder((("A", "B", "C"),)), None)],
              pl.TreeEnsemble((tree,), classes=(0, 1)))
    plan = plan_for("SELECT t.id, PREDICT(m.json, c) AS p FROM t WHERE c <> 'B'", p, cat)
    out = predicate_based_model_pruning(plan)
    assert out.model_node.op.trees[0] == tree.false
    data = {"id": np.arange(4), "c": np.array(["A", "B", "C", "D"], dtype=object)}
    tables = {"t": make_table(cols, data)}
    assert equal_tables(execute_plan(out, tables), execute_plan(plan, tables))


def test_numeric_not_equal_is_ignored():
    cols, data, _ = _grid_table(1)
    cat = one_table(cols)
    tree = node(0, "==", 1, leaf(1), leaf(0))
    plan = plan_for("SELECT t.id, PREDICT(m.json, f0) AS p FROM t WHERE f0 <> 2",
                    _tree_pipeline(tree, 1), cat)
    assert predicate_based_model_pruning(plan) == plan


def test_range_predicate_prunes():
    # age < 30 on the running-example style test age > 60
    cols, data, _ = _grid_table(1)
    cat = one_table(cols)
    tree = node(0, ">", 60, leaf(1), node(0, "<=", 0, leaf(0), leaf(1)))
    plan = plan_for("SELECT t.id, PREDICT(m.json, f0) AS p FROM t WHERE f0 < 30",
                    _tree_pipeline(tree, 1), cat)
    assert predicate_based_model_pruning(plan).model_node.op.trees[0] == tree.false


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_idempotent_and_sound_on_generated(seed):
    case = make_case(seed, SynthConfig(n_rows=150, n_trees=(1, 8)))
    plan = case.plan()
    once = predicate_based_model_pruning(plan)
    assert predicate_based_model_pruning(once) == once
    assert once.tree_node_count() <= plan.tree_node_count()
    assert equal_tables(execute_plan(once, case.tables), execute_plan(plan, case.tables))


def test_random_tree_with_constant_matches_traversal():
    rng = np.random.default_rng(7)
    for _ in range(20):
        tree = random_tree(rng, 3, 12)
        cols, data, rows = _grid_table(3)
        cat = one_table(cols)
        plan = plan_for("SELECT t.id, PREDICT(m.json, f0, f1, f2) AS p FROM t WHERE f1 = 0.5 AND f2 >= 0",
                        _tree_pipeline(tree, 3), cat)
        out = predicate_based_model_pruning(plan)
        got = execute_plan(out, {"t": make_table(cols, data)})
        want = [eval_tree(tree, r) for r in rows if r[1] == 0.5 and r[2] >= 0]
        assert [float(s) for s in got["p"]] == want

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import GRID, eval_tree, figure_tree, leaf, node, random_tree
from ravenlet import ir, ml2dnn
from ravenlet import pipeline as pl
from ravenlet.errors import ShapeError
from ravenlet.executor import execute_plan, predict_model
from ravenlet.synth import SynthConfig, equal_tables, make_case


def _run(op, X):
    prog = ml2dnn.compile_model_to_tensors(op, X.shape[1])
    return ml2dnn.run_program(prog, X)


def _reference(op, X):
    return predict_model(op, [X[:, j] for j in range(X.shape[1])], X.shape[0])


def test_stump_exhaustive():
    eps = np.nextafter(0.5, 1.0)
    xs = np.array([[-1.0], [0.0], [0.5], [eps], [1.0]])
    for cmp in ("<", "<=", ">", ">=", "=="):
        op = pl.TreeEnsemble((node(0, cmp, 0.5, leaf(1), leaf(0)),), classes=(0, 1))
        labels, scores = _run(op, xs)
        want = [float(pl.compare(cmp, x, 0.5)) for x in xs[:, 0]]
        assert scores.tolist() == want
        assert labels.tolist() == want


def test_figure_tree_grid():
    op = pl.TreeEnsemble((figure_tree(),), classes=(0, 1))
    rows = list(itertools.product(np.linspace(50, 70, 10), np.linspace(-1, 2, 10), (0.0, 1.0)))
    X = np.array(rows)
    _, scores = _run(op, X)
    assert scores.tolist() == [eval_tree(figure_tree(), r) for r in rows]


def test_two_identical_stumps_averaged_equal_one():
    s = node(0, ">", 0, leaf(1), leaf(0))
    X = np.array([[-1.0], [0.0], [1.0]])
    one = _run(pl.TreeEnsemble((s,), aggregate="average", classes=(0, 1)), X)
    two = _run(pl.TreeEnsemble((s, s), aggregate="average", classes=(0, 1)), X)
    assert np.array_equal(one[0], two[0]) and np.array_equal(one[1], two[1])


def test_linear_identity_and_sum():
    X = np.array([[1.0], [-2.5], [0.0]])
    _, s = _run(pl.LinearModel(((1.0,),), (0.0,)), X)
    assert s.tolist() == [1.0, -2.5, 0.0]
    _, s = _run(pl.LinearModel(((1.0,), (1.0,)), (0.0,)), np.array([[1.0, 2.0]]))
    assert s.tolist() == [3.0]


def test_linear_random_exact():
    rng = np.random.default_rng(11)
    w = tuple((float(v),) for v in rng.normal(size=20) * (rng.random(20) > 0.3))
    for post in ("identity", "logistic"):
        op = pl.LinearModel(w, (float(rng.normal()),), post, (0, 1))
        X = rng.normal(size=(2, 20))
        got = _run(op, X)
        want = _reference(op, X)
        assert np.array_equal(got[1], want[1])
        assert np.array_equal(got[0], want[0])


def test_bare_leaf_tree():
    op = pl.TreeEnsemble((leaf(0.75),), classes=(0, 1))
    labels, scores = _run(op, np.zeros((4, 2)))
    assert scores.tolist() == [0.75] * 4 and labels.tolist() == [1.0] * 4


def test_vote_aggregation():
    trees = (node(0, ">", 0, leaf(1), leaf(0)), node(0, ">", 1, leaf(1), leaf(0)), node(0, "<", 5, leaf(1), leaf(0)))
    op = pl.TreeEnsemble(trees, aggregate="vote", classes=(0, 1))
    X = np.array([[-1.0], [0.5], [2.0], [6.0]])
    got, want = _run(op, X), _reference(op, X)
    assert np.array_equal(got[0], want[0]) and np.array_equal(got[1], want[1])


def test_empty_batch():
    op = pl.TreeEnsemble((figure_tree(),), classes=(0, 1))
    labels, scores = _run(op, np.zeros((0, 3)))
    assert labels.shape == (0,) and scores.shape == (0,)


def test_batch_sizes_and_chunking():
    rng = np.random.default_rng(2)
    op = pl.TreeEnsemble(tuple(random_tree(rng, 4, 15) for _ in range(5)), classes=(0, 1))
    prog = ml2dnn.compile_model_to_tensors(op, 4)
    X = rng.choice(np.array(GRID), size=(100, 4))
    full = ml2dnn.run_program(prog, X)
    singles = [ml2dnn.run_program(prog, X[i:i + 1]) for i in range(100)]
    assert np.array_equal(full[1], np.concatenate([s[1] for s in singles]))
    for chunk in (1, 7, 64):
        assert np.array_equal(ml2dnn.run_program(prog, X, chunk_rows=chunk)[1], full[1])


def test_shape_errors():
    prog = ml2dnn.compile_model_to_tensors(pl.TreeEnsemble((figure_tree(),)), 3)
    with pytest.raises(ShapeError):
        ml2dnn.run_program(prog, np.zeros((2, 4)))
    with pytest.raises(ShapeError):
        ml2dnn.compile_tree_to_tensors(pl.TreeEnsemble((figure_tree(),)), n_features=2)
    bad = ml2dnn.TensorProgram(3, {}, (ml2dnn.TensorOp("GATHER", ("X",), "g0", {"indices": [5]}),), (("label", "g0"), ("score", "g0")))
    with pytest.raises(ShapeError):
        ml2dnn.check_program(bad)
    undefined = ml2dnn.TensorProgram(1, {}, (ml2dnn.TensorOp("CAST", ("nope",), "f0"),), (("label", "f0"), ("score", "f0")))
    with pytest.raises(ShapeError):
        ml2dnn.check_program(undefined)


def test_check_program_on_compiled():
    prog = ml2dnn.compile_model_to_tensors(pl.TreeEnsemble((figure_tree(), leaf(1)), classes=(0, 1)), 3)
    shapes = ml2dnn.check_program(prog)
    assert shapes[prog.output("score")] == ("N", 1)


def test_serialization_round_trip():
    rng = np.random.default_rng(4)
    op = pl.TreeEnsemble(tuple(random_tree(rng, 3, 8) for _ in range(3)), post="logistic", classes=(0, 1))
    prog = ml2dnn.compile_model_to_tensors(op, 3)
    back = ml2dnn.program_from_dict(json.loads(json.dumps(ml2dnn.program_to_dict(prog))))
    assert back == prog
    X = rng.choice(np.array(GRID), size=(50, 3))
    assert np.array_equal(ml2dnn.run_program(back, X)[1], ml2dnn.run_program(prog, X)[1])
    with pytest.raises(ShapeError):
        ml2dnn.program_from_dict({"n_features": 1})


@given(st.integers(0, 2**32 - 1), st.integers(0, 30), st.integers(1, 4))
def test_tree_program_size_and_values(seed, n_internal, n_trees):
    rng = np.random.default_rng(seed)
    trees = tuple(random_tree(rng, 3, n_internal) for _ in range(n_trees))
    op = pl.TreeEnsemble(trees, classes=(0, 1))
    prog = ml2dnn.compile_model_to_tensors(op, 3)
    # a fixed number of ops per tree plus the aggregation
    assert len(prog.ops) <= 7 * n_trees + 4
    # path matrix is I x L and L = I + 1
    n_const = sum(a.size for a in prog.constants.values())
    assert n_const <= n_trees * (n_internal * (n_internal + 1) + 3 * n_internal + 3) + 3
    X = rng.choice(np.array(GRID + (0.3,)), size=(40, 3))
    got, want = ml2dnn.run_program(prog, X), _reference(op, X)
    assert np.array_equal(got[1], want[1]) and np.array_equal(got[0], want[0])


@settings(max_examples=30)
@given(st.integers(0, 100_000))
def test_tensor_model_plan_on_generated(seed):
    case = make_case(seed, SynthConfig(n_rows=150, n_trees=(1, 8)))
    plan = case.plan()
    out = ml2dnn.to_tensor_model(plan)
    assert isinstance(out.model_node.op, ir.TensorModel)
    assert equal_tables(execute_plan(out, case.tables), execute_plan(plan, case.tables))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import chain, eval_tree, figure_tree, identity_pipeline, leaf, node, one_table, plan_for, random_tree
from conftest import example_path
from ravenlet import pipeline as pl
from ravenlet.errors import CoverageError, CsvError, ExecError
from ravenlet.executor import (
    Selector, evaluate_pipeline, execute_plan, hash_join, load_csv, make_table, run_partitioned,
)
from ravenlet.executor import _Rel
from ravenlet.frontend import Catalog, TableSchema
from ravenlet.synth import SynthConfig, equal_tables, make_case

SCHEMA = [("id", "int64"), ("x", "float64"), ("s", "string")]


def _write(tmp_path, text):
    p = tmp_path / "t.csv"
    p.write_text(text)
    return p


def test_load_csv(tmp_path):
    t = load_csv(_write(tmp_path, "id,x,s\n1,2.5,a\n2,-1,b c\n"), SCHEMA)
    assert t.n_rows == 2
    assert t.rows() == [(1, 2.5, "a"), (2, -1.0, "b c")]
    assert t["id"].dtype == np.int64


def test_header_mismatch(tmp_path):
    with pytest.raises(CsvError, match="header"):
        load_csv(_write(tmp_path, "id,y,s\n1,2,a\n"), SCHEMA)


def test_header_only(tmp_path):
    t = load_csv(_write(tmp_path, "id,x,s\n"), SCHEMA)
    assert t.n_rows == 0 and t.names == ["id", "x", "s"]


def test_bad_cell_position(tmp_path):
    with pytest.raises(CsvError) as err:
        load_csv(_write(tmp_path, "id,x,s\n1,2,a\n2,oops,b\n"), SCHEMA)
    assert (err.value.row, err.value.column) == (3, 2)
    with pytest.raises(CsvError):
        load_csv(_write(tmp_path, "id,x,s\n1,,a\n"), SCHEMA)
    with pytest.raises(CsvError):
        load_csv(tmp_path / "missing.csv", SCHEMA)


def test_running_example_expected(example):
    # by hand: asthma patients 1,2,3,5,7,8,10; the tree then says high exactly for gender F
    got = execute_plan(example["plan"], example["tables"])
    want = load_csv(example_path("expected.csv"), [("pi.id", "int64"), ("risk", "string")])
    assert got.equals(want)
    assert [r[0] for r in got.rows()] == [1, 5, 7, 10]


def test_filter_keeps_everything():
    cat = one_table([("x", "float64")])
    tables = {"t": make_table([("x", "float64")], {"x": [1.0, 2.0, 3.0]})}
    a = execute_plan(plan_for("SELECT t.x, PREDICT(m.json, *) AS p FROM t WHERE x > 0", identity_pipeline(), cat), tables)
    b = execute_plan(plan_for("SELECT t.x, PREDICT(m.json, *) AS p FROM t", identity_pipeline(), cat), tables)
    assert a.equals(b)


def _two_tables():
    return Catalog({"a": TableSchema("a", (("id", "int64"), ("x", "float64"))),
                    "b": TableSchema("b", (("id", "int64"), ("y", "float64")))})


def test_disjoint_join_is_empty():
    cat = _two_tables()
    tables = {"a": make_table(cat.tables["a"].columns, {"id": [1, 2], "x": [0.0, 1.0]}),
              "b": make_table(cat.tables["b"].columns, {"id": [3, 4], "y": [0.0, 1.0]})}
    plan = plan_for("SELECT a.id, PREDICT(m.json, x) AS p FROM a JOIN b ON a.id = b.id", identity_pipeline(), cat)
    out = execute_plan(plan, tables)
    assert out.n_rows == 0 and out.names == ["a.id", "p"]


def _rel(prefix, keys):
    keys = np.asarray(keys)
    return _Rel([(f"{prefix}.k", "int64")], {f"{prefix}.k": keys}, {prefix: np.arange(len(keys))}, len(keys))


@given(st.lists(st.integers(0, 5), max_size=30), st.lists(st.integers(0, 5), max_size=30))
def test_hash_join_equals_nested_loop(left, right):
    out = hash_join(_rel("l", left), _rel("r", right), "l.k", "r.k")
    want = [(i, j) for i, a in enumerate(left) for j, b in enumerate(right) if a == b]
    assert list(zip(out.rowids["l"].tolist(), out.rowids["r"].tolist())) == want


def test_evaluate_pipeline_identity():
    x = np.linspace(-3, 3, 13)
    _, scores = evaluate_pipeline(identity_pipeline(), {"x": x})
    assert np.array_equal(scores, x)


def test_evaluate_pipeline_figure_tree_path():
    p = chain([pl.PipelineInput(n, "float64") for n in ("a", "m", "f")], [],
              pl.TreeEnsemble((figure_tree(),), classes=("low", "high")))
    labels, scores = evaluate_pipeline(p, {"a": [70.0, 70.0, 50.0, 50.0], "m": [0.0, 1.0, 1.0, 0.0],
                                           "f": [1.0, 0.0, 0.0, 1.0]})
    assert scores.tolist() == [1.0, 0.0, 0.0, 1.0]
    assert labels.tolist() == ["high", "low", "low", "high"]


def _oracle_row(offsets, scales, cats, tree, x, c):
    # one row at a time with plain python floats
    feats = [(xi - o) * s for xi, o, s in zip(x, offsets, scales)]
    feats += [1.0 if c == v else 0.0 for v in cats]
    return eval_tree(tree, feats)


@given(st.integers(0, 2**32 - 1))
def test_pipeline_against_row_oracle(seed):
    rng = np.random.default_rng(seed)
    offsets = tuple(float(v) for v in rng.normal(size=2).round(2))
    scales = tuple(float(v) for v in rng.uniform(0.1, 2, size=2).round(2))
    cats = ("a", "b", "c")
    tree = random_tree(rng, 5, int(rng.integers(0, 15)))
    p = chain([pl.PipelineInput("x0", "float64"), pl.PipelineInput("x1", "float64"), pl.PipelineInput("c", "string")],
              [("s", pl.Scaler(offsets, scales), ["x0", "x1"]), ("o", pl.OneHotEncoder((cats,)), ["c"]),
               ("cat", pl.Concat(2), ["s", "o"])],
              pl.TreeEnsemble((tree,), classes=(0, 1)))
    n = 60
    x = rng.normal(size=(n, 2)).round(1)
    c = np.array(rng.choice(["a", "b", "c", "d"], size=n), dtype=object)
    _, scores = evaluate_pipeline(p, {"x0": x[:, 0], "x1": x[:, 1], "c": c})
    want = [_oracle_row(offsets, scales, cats, tree, x[i], c[i]) for i in range(n)]
    assert scores.tolist() == want


def test_normalizer_and_label_encoder_values():
    p = chain([pl.PipelineInput("a", "float64"), pl.PipelineInput("b", "float64")],
              [("n", pl.Normalizer("L2"), None)], pl.LinearModel(((1.0,), (0.0,)), (0.0,)))
    _, s = evaluate_pipeline(p, {"a": [3.0, 0.0], "b": [4.0, 0.0]})
    assert s.tolist() == [0.6, 0.0]
    p = chain([pl.PipelineInput("k", "string")], [("le", pl.LabelEncoder((("x", 2), ("y", 5))), None)],
              pl.LinearModel(((1.0,),), (0.0,)))
    _, s = evaluate_pipeline(p, {"k": np.array(["y", "x", "z"], dtype=object)})
    assert s.tolist() == [5.0, 2.0, -1.0]


def test_logistic_linear_matches_formula():
    p = chain([pl.PipelineInput("a", "float64")], [], pl.LinearModel(((2.0,),), (-1.0,), "logistic", (0, 1)))
    labels, s = evaluate_pipeline(p, {"a": [0.0, 0.5, 1.0]})
    assert s.tolist() == [1 / (1 + math.exp(1.0)), 0.5, 1 / (1 + math.exp(-1.0))]
    assert labels.tolist() == [0.0, 1.0, 1.0]


@settings(max_examples=20)
@given(st.integers(0, 100_000), st.sampled_from([1, 7, 100]))
def test_chunk_size_invariance_and_determinism(seed, chunk):
    case = make_case(seed, SynthConfig(n_rows=150, n_trees=(1, 6)))
    plan = case.plan()
    base = execute_plan(plan, case.tables)
    assert equal_tables(execute_plan(plan, case.tables, chunk_rows=chunk), base)
    assert equal_tables(execute_plan(plan, case.tables), base)


def test_trivial_partition(example):
    plan, tables = example["plan"], example["tables"]
    full = execute_plan(plan, tables)
    assert run_partitioned([(Selector("pi", "age", 0, 200, 0), plan)], tables).equals(full)
    assert run_partitioned([(None, plan)], tables).equals(full)


def test_partition_gap_and_overlap(example):
    plan, tables = example["plan"], example["tables"]
    with pytest.raises(CoverageError):
        run_partitioned([(Selector("pi", "age", 0, 50, 0), plan), (Selector("pi", "age", 51, 80, 1), plan)], tables)
    with pytest.raises(CoverageError):
        run_partitioned([(Selector("pi", "age", 0, 70, 0), plan), (Selector("pi", "age", 60, 90, 1), plan)], tables)
    with pytest.raises(CoverageError):
        run_partitioned([], tables)


def test_missing_table_is_exec_error(example):
    with pytest.raises(ExecError):
        execute_plan(example["plan"], {})


def test_count_query():
    cat = one_table([("x", "float64")])
    p = chain([pl.PipelineInput("x", "float64")], [], pl.TreeEnsemble((node(0, ">", 0, leaf(1), leaf(0)),), classes=(0, 1)))
    plan = plan_for("SELECT COUNT(*) FROM PREDICT(MODEL = m.json, DATA = t) WITH (label INT, score FLOAT) AS p "
                    "WHERE p.label = 1", p, cat)
    out = execute_plan(plan, {"t": make_table([("x", "float64")], {"x": [-1.0, 1.0, 2.0]})})
    assert out.rows() == [(2,)]

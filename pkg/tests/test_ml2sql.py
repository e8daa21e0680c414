import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import GRID, chain, eval_tree, figure_tree, identity_pipeline, leaf, node, one_table, plan_for, random_tree
from ravenlet import ir, ml2sql, passes
from ravenlet import pipeline as pl
from ravenlet.errors import CompilationFailed
from ravenlet.executor import Selector, execute_plan, execute_sql, make_table, predict_model
from ravenlet.sqlexpr import (
    Col, Env, FeatureRef, case_depth, evaluate, expr_size, parse_expr, parse_statement, render, render_statement,
)
from ravenlet.synth import SynthConfig, equal_tables, make_case

FIGURE_SQL = ("CASE WHEN F[0] > 60 THEN (CASE WHEN F[1] = 0 THEN 1 ELSE 0 END) "
              "ELSE (CASE WHEN F[2] = 1 THEN 1 ELSE 0 END) END")


def _ws(s):
    return " ".join(s.split())


def test_figure_tree_text():
    assert _ws(ml2sql.tree_to_sql(figure_tree())) == FIGURE_SQL


def test_scaler_text():
    (e,) = ml2sql.compile_operator(pl.Scaler((3.0,), (0.5,)), [Col(None, "x")])
    assert render(e) == "(x - 3) * 0.5"


def _feature_env(X):
    return Env({}, X.shape[0], [X[:, j] for j in range(X.shape[1])])


def test_linear_logistic_text_and_values():
    op = pl.LinearModel(((2.0,), (-1.0,)), (3.0,), "logistic", (0, 1))
    label, score = ml2sql.compile_operator(op, [FeatureRef(0), FeatureRef(1)])
    s = "1 / (1 + EXP(-(2 * F[0] - 1 * F[1] + 3)))"
    assert render(score) == s
    assert render(label) == f"CASE WHEN {s} >= 0.5 THEN 1 ELSE 0 END"
    X = np.random.default_rng(0).normal(scale=3, size=(1000, 2))
    want_l, want_s = predict_model(op, [X[:, 0], X[:, 1]], 1000)
    env = _feature_env(X)
    assert np.array_equal(evaluate(score, env), want_s)
    assert np.array_equal(evaluate(label, env), want_l)


def test_running_example_sql_equals_plan(example):
    plan = example["plan"]
    text = ml2sql.compile_pipeline_to_sql(example["pipeline"], plan)
    for word in ("PREDICT", "TreeEnsemble", "Scaler"):
        assert word not in text
    assert "CASE WHEN" in text
    tables = example["tables"]
    assert equal_tables(execute_sql(text, tables), execute_plan(plan, tables))


def test_running_example_ansi_dialect(example):
    plan = example["plan"]
    text = ml2sql.compile_pipeline_to_sql(example["pipeline"], plan, dialect="ansi")
    tables = example["tables"]
    assert equal_tables(execute_sql(text, tables), execute_plan(plan, tables))


def test_sql_compute_plan_matches(example):
    plan = example["plan"]
    out = ml2sql.to_sql_compute(plan)
    assert not any(ir.is_ml(n.op) for n in out.nodes)
    assert out.find(ir.SqlCompute)
    tables = example["tables"]
    assert equal_tables(execute_plan(out, tables), execute_plan(plan, tables))


def test_unsupported_operator_fails_by_name_and_falls_back():
    cat = one_table([("x", "float64"), ("y", "float64")])
    p = chain([pl.PipelineInput("x", "float64"), pl.PipelineInput("y", "float64")],
              [("n", pl.Normalizer("L2"), None)], pl.LinearModel(((1.0,), (1.0,)), (0.0,)))
    plan = plan_for("SELECT PREDICT(m.json, *) AS p FROM t", p, cat)
    cfg = ml2sql.SqlConfig(unsupported=frozenset({"Normalizer"}))
    with pytest.raises(CompilationFailed) as err:
        ml2sql.compile_pipeline_to_sql(p, plan, config=cfg)
    assert err.value.op_name == "Normalizer"
    log = []
    assert passes.apply_transform(plan, "MLtoDNN", log) != plan  # tensor model still applies
    # without a config the normalizer compiles
    assert ml2sql.compile_pipeline_to_sql(p, plan)


def test_fallback_keeps_plan_on_failure():
    cat = one_table([("x", "float64")])
    p = chain([pl.PipelineInput("x", "float64")], [], pl.LinearModel(((1.0,),), (0.0,)))
    plan = plan_for("SELECT PREDICT(m.json, *) AS p FROM t", p, cat)
    # a plan with no model is left as is by either transform
    bare = ir.make_plan([n for n in plan.nodes if n.id.startswith("scan")], "scan.t")
    assert passes.apply_transform(bare, "MLtoSQL") == bare


def test_identity_pipeline():
    cat = one_table([("x", "float64")])
    plan = plan_for("SELECT PREDICT(m.json, *) AS p FROM t", identity_pipeline(), cat)
    neutral = ml2sql.compile_pipeline_to_sql(identity_pipeline(), plan)
    assert "(t.x - 0) * 1 AS __scaler_0" in neutral
    ansi = ml2sql.compile_pipeline_to_sql(identity_pipeline(), plan, dialect="ansi")
    assert "1 * ((t.x - 0) * 1) AS p" in ansi
    x = np.random.default_rng(1).normal(size=200)
    tables = {"t": make_table([("x", "float64")], {"x": x})}
    for text in (neutral, ansi):
        assert np.array_equal(np.asarray(execute_sql(text, tables)["p"], dtype=float), x)


def test_round_trip_running_example(example):
    stmt = ml2sql.compile_plan_to_statement(example["plan"])
    for dialect in ("neutral", "ansi"):
        text = render_statement(stmt, dialect)
        assert render_statement(parse_statement(text), dialect) == text
    assert parse_statement(render_statement(stmt)) == stmt


@given(st.integers(0, 2**32 - 1), st.integers(0, 25))
def test_tree_round_trip_depth_size(seed, n_internal):
    tree = random_tree(np.random.default_rng(seed), 3, n_internal)
    e = ml2sql.compile_tree(tree, [FeatureRef(i) for i in range(3)])
    assert parse_expr(render(e)) == e
    assert case_depth(e) == pl.tree_depth(tree)
    # one comparison, one CASE and a constant per test, one constant per leaf
    assert expr_size(e) <= 8 * pl.tree_size(tree)


def test_tree_matches_traversal_10k_rows():
    rng = np.random.default_rng(5)
    X = rng.choice(np.array(GRID + (0.25, 1.5)), size=(10_000, 4))
    env = _feature_env(X)
    for _ in range(10):
        tree = random_tree(rng, 4, int(rng.integers(1, 30)))
        e = ml2sql.compile_tree(tree, [FeatureRef(i) for i in range(4)])
        want = np.array([eval_tree(tree, r) for r in X])
        assert np.array_equal(evaluate(e, env), want)


@settings(max_examples=30)
@given(st.integers(0, 100_000))
def test_generated_cases_sql_equal(seed):
    case = make_case(seed, SynthConfig(n_rows=150, n_trees=(1, 8)))
    plan = case.plan()
    text = ml2sql.compile_pipeline_to_sql(case.pipeline, plan)
    got, want = execute_sql(text, case.tables), execute_plan(plan, case.tables)
    agreement = passes.compare_tables(got, want, passes.score_columns(plan))
    assert agreement.same_shape and agreement.label_agreement == 1.0
    assert agreement.max_score_delta <= 1e-9


def test_restrict_statement(example):
    stmt = ml2sql.compile_plan_to_statement(example["plan"])
    sel = Selector("pi", "age", 25, 60, 0)
    text = render_statement(ml2sql.restrict_statement(stmt, sel))
    assert "pi.age >= 25" in text and "pi.age <= 60" in text
    tables = example["tables"]
    low = execute_sql(text, tables)
    high = execute_sql(render_statement(ml2sql.restrict_statement(stmt, Selector("pi", "age", 61, 90, 1))), tables)
    full = execute_sql(render_statement(stmt), tables)
    assert low.n_rows + high.n_rows == full.n_rows


def test_string_label_classes():
    cat = one_table([("x", "float64")])
    p = chain([pl.PipelineInput("x", "float64")], [],
              pl.TreeEnsemble((node(0, ">", 0, leaf(1), leaf(0)),), classes=("no", "yes")))
    plan = plan_for("SELECT t.x, PREDICT(m.json, *) AS p FROM t WHERE p = 'yes'", p, cat)
    text = ml2sql.compile_pipeline_to_sql(p, plan)
    tables = {"t": make_table([("x", "float64")], {"x": [-1.0, 0.0, 1.0, 2.0]})}
    got = execute_sql(text, tables)
    assert list(got["t.x"]) == [1.0, 2.0]

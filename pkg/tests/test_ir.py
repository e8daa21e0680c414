import numpy as np
import pydot
import pytest
from hypothesis import given, strategies as st

from builders import chain, identity_pipeline, one_table, plan_for
from ravenlet import ir
from ravenlet import pipeline as pl
from ravenlet.errors import ArityError, BindError, CycleError, SchemaError
from ravenlet.executor import evaluate_pipeline, execute_plan
from ravenlet.synth import SynthConfig, make_case


def _kinds(plan):
    return [type(n.op).__name__ for n in plan.nodes]


def test_running_example_plan(example):
    plan = example["plan"]
    k = _kinds(plan)
    assert k.count("Scan") == 3 and k.count("Join") == 2
    assert k.count("Filter") == 2  # asthma = 1 below, risk = 'high' above
    for kind in ("Scaler", "OneHotEncoder", "Concat", "TreeEnsemble", "PredictBoundary"):
        assert kind in k
    assert plan.column_map == {"age": "pi.age", "bpm": "bt.bpm", "asthma": "pt.asthma", "gender": "pi.gender"}
    assert plan.node("filter.input").op.conds == (ir.Cond("pt.asthma", "=", 1),)


def test_identity_pipeline_chain():
    cat = one_table([("x", "float64")])
    plan = plan_for("SELECT PREDICT(m.json, *) AS p FROM t", identity_pipeline(), cat)
    order = [type(n.op).__name__ for n in ir.topo_order(plan)]
    assert order[0] == "Scan"
    assert order.index("Project") < order.index("ModelInput") < order.index("Scaler")
    assert order.index("Scaler") < order.index("LinearModel") < order.index("PredictBoundary")


def test_missing_input_column_is_bind_error():
    cat = one_table([("x", "float64")])
    p = chain([pl.PipelineInput("bmi", "float64")], [], pl.LinearModel(((1.0,),), (0.0,)))
    with pytest.raises(BindError, match="bmi"):
        plan_for("SELECT PREDICT(m.json, *) AS p FROM t", p, cat)


def test_dtype_mismatch_is_bind_error():
    cat = one_table([("x", "string")])
    with pytest.raises(BindError):
        plan_for("SELECT PREDICT(m.json, *) AS p FROM t", identity_pipeline(), cat)


def _scan(nid, cols=(("a", "float64"),)):
    return ir.PlanNode(nid, ir.Scan("t", nid, cols))


def test_topo_chain():
    nodes = [ir.PlanNode("c", ir.Project(("x.a",)), ("b",)),
             ir.PlanNode("b", ir.Filter((ir.Cond("x.a", ">", 0.0),)), ("x",)),
             _scan("x")]
    plan = ir.make_plan(nodes, "c")
    assert [n.id for n in ir.topo_order(plan)] == ["x", "b", "c"]


def test_topo_diamond_is_stable():
    nodes = [_scan("l", (("k", "int64"),)), _scan("r", (("k", "int64"),)),
             ir.PlanNode("j", ir.Join("l.k", "r.k"), ("l", "r"))]
    plan = ir.make_plan(nodes, "j")
    first = [n.id for n in ir.topo_order(plan)]
    assert first == ["l", "r", "j"]
    shuffled = ir.make_plan(list(reversed(nodes)), "j")
    assert [n.id for n in ir.topo_order(shuffled)] == first


def test_topo_cycle():
    nodes = [ir.PlanNode("a", ir.Project(("x",)), ("b",)), ir.PlanNode("b", ir.Project(("x",)), ("a",))]
    with pytest.raises(CycleError):
        ir._order_ids(nodes)


def test_replace_filter_with_identity(example):
    plan = example["plan"]
    out = ir.replace_node(plan, "filter.input", ir.Subgraph((), "$0", 1))
    assert "filter.input" not in out
    assert len(out.nodes) == len(plan.nodes) - 1
    assert out.node("project.input").inputs == ("join.2",)


def test_replace_tree_keeps_schemas(example):
    plan = example["plan"]
    m = plan.model_node
    stump = pl.TreeEnsemble((pl.Leaf((1.0,)),), classes=m.op.classes)
    out = ir.replace_node(plan, m.id, ir.Subgraph((ir.PlanNode("ml.stump", stump, ("$0",)),), "ml.stump", 1))
    for nid in ("predict", "filter.output", "project.output"):
        assert out.schema(nid) == plan.schema(nid)


def test_replace_arity_mismatch(example):
    with pytest.raises(ArityError):
        ir.replace_node(example["plan"], "filter.input", ir.Subgraph((), "$0", 2))


def test_replace_bad_schema(example):
    bad = ir.PlanNode("p2", ir.Project(("nope.col",)), ("$0",))
    with pytest.raises(SchemaError):
        ir.replace_node(example["plan"], "project.input", ir.Subgraph((bad,), "p2", 1))


def test_explain_chain():
    nodes = [_scan("x"), ir.PlanNode("f", ir.Filter((ir.Cond("x.a", ">", 1.0),)), ("x",)),
             ir.PlanNode("p", ir.Project(("x.a",)), ("f",))]
    text = ir.explain(ir.make_plan(nodes, "p"))
    assert text.splitlines() == ["p: Project(x.a)", "  f: Filter(x.a > 1.0)", "    x: Scan(t AS x: a)"]


def test_explain_names_every_node(example):
    plan = example["plan"]
    text = ir.explain(plan)
    for n in plan.nodes:
        assert n.id in text
    assert ir.explain(plan) == text


def test_dot_parses(example):
    dot = ir.to_dot(example["plan"])
    (graph,) = pydot.graph_from_dot_data(dot)
    names = {n.get_name().strip('"') for n in graph.get_nodes()}
    assert {n.id for n in example["plan"].nodes} <= names
    assert len(graph.get_edges()) == sum(len(n.inputs) for n in example["plan"].nodes)


def test_plan_json_round_trip(example):
    plan = example["plan"]
    assert ir.load_plan(ir.save_plan(plan)) == plan


def test_plan_json_rejects_garbage():
    with pytest.raises(SchemaError):
        ir.load_plan('{"nodes": [{"id": "x", "op": "Teleport", "inputs": []}], "root": "x"}')


@given(st.integers(0, 10_000))
def test_build_ir_matches_relational_then_pipeline(seed):
    case = make_case(seed, SynthConfig(n_rows=60, n_tables=(1, 1), predicates=False, n_trees=(1, 5)))
    plan = case.plan()
    if plan.find(ir.Count):
        return
    got = execute_plan(plan, case.tables)
    # relational part by hand: one table, no predicates, so every row is scored
    t = next(iter(case.tables.values()))
    batch = {name: t[col.split(".")[1]] for name, col in case.input_columns.items()}
    labels, scores = evaluate_pipeline(case.pipeline, batch)
    assert list(got["p.label"]) == list(labels)
    assert np.array_equal(np.asarray(got["p.score"], dtype=float), scores)


_SMALL = st.tuples(
    st.sampled_from(["<", ">", "="]), st.integers(0, 2),
    st.floats(-2, 2, allow_nan=False).map(lambda v: round(v, 1)),
    st.floats(0.5, 2, allow_nan=False).map(lambda v: round(v, 1)),
    st.booleans(),
)


def _small_plan(op, value, offset, scale, with_x):
    cat = one_table([("x", "float64"), ("y", "float64")])
    p = chain([pl.PipelineInput("x", "float64")], [("s", pl.Scaler((offset,), (scale,)), None)],
              pl.LinearModel(((1.0,),), (0.0,)))
    proj = "t.x, " if with_x else ""
    return plan_for(f"SELECT {proj}PREDICT(m.json, x) AS p FROM t WHERE y {op} {value}", p, cat)


@given(st.lists(_SMALL, min_size=2, max_size=12, unique=True))
def test_explain_injective_on_small_plans(params):
    seen = {}
    for args in params:
        plan = _small_plan(*args)
        assert len(plan.nodes) <= 12
        text = ir.explain(plan)
        if text in seen:
            assert seen[text] == plan
        seen[text] = plan


def test_make_plan_drops_unreachable():
    nodes = [_scan("x"), _scan("orphan"), ir.PlanNode("p", ir.Project(("x.a",)), ("x",))]
    assert [n.id for n in ir.make_plan(nodes, "p").nodes] == ["x", "p"]


def test_project_of_unknown_column():
    with pytest.raises(SchemaError):
        ir.make_plan([_scan("x"), ir.PlanNode("p", ir.Project(("x.zz",)), ("x",))], "p")


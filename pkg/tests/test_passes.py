import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import example_path
from ravenlet import ir, passes, strategy
from ravenlet.executor import Table, execute_plan
from ravenlet.optimizer import load_stats
from ravenlet.synth import SynthConfig, equal_tables, make_case


@pytest.mark.parametrize("text,want", [
    ("all", set(passes.ALL_PASSES)),
    ("none", set()),
    ("logical", set(passes.LOGICAL)),
    ("pred_prune, ml2sql", {"pred_prune", "ml2sql"}),
])
def test_parse_passes(text, want):
    assert passes.parse_passes(text) == want


def test_parse_passes_unknown():
    with pytest.raises(ValueError, match="warp"):
        passes.parse_passes("pred_prune,warp")


def test_no_passes_is_identity(example):
    opt = passes.optimize(example["plan"], frozenset())
    assert opt.parts == [(None, example["plan"])] and opt.choice is None


def test_running_example_all_passes(example):
    stats = load_stats(example_path("stats.json"))
    opt = passes.optimize(example["plan"], passes.parse_passes("all"), stats, example["catalog"])
    assert len(opt.parts) == 2
    assert opt.choice.choice == strategy.NO_TRANSFORM  # 4 inputs, 6 features
    assert opt.log[:2] == ["pred_prune", "proj_pushdown"]
    tables = example["tables"]
    assert equal_tables(opt.execute(tables), execute_plan(example["plan"], tables))


def test_forced_transforms(example, tmp_path):
    path = tmp_path / "t.json"
    tables = example["tables"]
    base = execute_plan(example["plan"], tables)
    for choice, kind in (("MLtoSQL", ir.SqlCompute), ("MLtoDNN", ir.TensorModel)):
        path.write_text(f'{{"choice": "{choice}"}}')
        opt = passes.optimize(example["plan"], passes.parse_passes("all"), strategy_spec=f"table:{path}")
        assert opt.choice.choice == choice
        assert opt.plan.find(kind)
        assert equal_tables(opt.execute(tables), base)


def test_transform_disabled_keeps_model(example, tmp_path):
    path = tmp_path / "t.json"
    path.write_text('{"choice": "MLtoSQL"}')
    opt = passes.optimize(example["plan"], passes.parse_passes("pred_prune,proj_pushdown,ml2dnn"), strategy_spec=f"table:{path}")
    assert opt.choice.choice == "MLtoSQL"
    assert not opt.plan.find(ir.SqlCompute)


def test_compare_tables_counts():
    a = Table((("k", "int64"), ("s", "float64")), {"k": np.array([1, 2, 3, 4]), "s": np.array([1.0, 2.0, 3.0, 4.0])})
    b = Table((("k", "int64"), ("s", "float64")), {"k": np.array([1, 2, 3, 5]), "s": np.array([1.0, 2.0, 3.0 + 3e-9, 4.0])})
    ag = passes.compare_tables(a, b, {"s"})
    assert ag.rows == 4 and ag.label_agreement == 0.75 and ag.same_shape
    assert ag.max_score_delta == pytest.approx(1e-9)
    assert not ag.ok()
    assert passes.compare_tables(a, a, {"s"}).ok()


@settings(max_examples=20)
@given(st.integers(0, 100_000))
def test_every_pass_subset_is_exact(seed):
    case = make_case(seed, SynthConfig(n_rows=120, n_trees=(1, 6)))
    plan = case.plan()
    base = execute_plan(plan, case.tables)
    for mask in range(8):
        chosen = frozenset(p for i, p in enumerate(passes.LOGICAL) if mask >> i & 1)
        opt = passes.optimize(plan, chosen, case.stats, case.catalog)
        assert equal_tables(opt.execute(case.tables), base), chosen

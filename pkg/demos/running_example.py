"""Walk the patient-risk example through each optimizer stage.

    python3 demos/running_example.py
"""
from importlib import resources

from ravenlet import build_ir, execute_plan, explain, load_catalog, load_tables, read_pipeline, read_query
from ravenlet import ml2sql, passes
from ravenlet.optimizer import load_stats, model_projection_pushdown, predicate_based_model_pruning

HERE = resources.files("ravenlet") / "data" / "running_example"


def show(title, plan):
    print(f"== {title}: {plan.tree_node_count()} tree nodes, {plan.scanned_columns()} scanned columns")
    print(explain(plan))
    print()


def main():
    cat = load_catalog(HERE / "catalog.json")
    plan = build_ir(read_query(HERE / "query.sql", cat), read_pipeline(HERE / "model.json"), cat)
    tables = load_tables(cat, HERE)

    show("as written", plan)
    pruned = predicate_based_model_pruning(plan)
    show("after predicate pruning (asthma = 1)", pruned)
    final = model_projection_pushdown(pruned)
    show("after projection pushdown", final)

    print("== tree as SQL")
    (tree,) = final.model_node.op.trees
    print(ml2sql.tree_to_sql(tree))
    print()

    opt = passes.optimize(plan, passes.parse_passes("all"), load_stats(HERE / "stats.json"), cat)
    print(f"== with stats: {len(opt.parts)} partition plans")
    for sel, p in opt.parts:
        print(f"  {sel.column} in [{sel.lo:g}, {sel.hi:g}]: {p.tree_node_count()} tree nodes")
    print()
    print("== result")
    print(opt.execute(tables).to_csv(), end="")
    assert opt.execute(tables).equals(execute_plan(plan, tables))


if __name__ == "__main__":
    main()

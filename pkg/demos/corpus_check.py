"""Optimize a generated corpus and report agreement and shrinkage.

    python3 demos/corpus_check.py [n_cases]
"""
import sys
import time

from ravenlet import execute_plan, passes
from ravenlet.synth import SynthConfig, corpus, equal_tables


def main(n=50):
    t0 = time.perf_counter()
    exact = trees_before = trees_after = cols_before = cols_after = 0
    choices = {}
    for case in corpus(n, SynthConfig(n_rows=1000)):
        plan = case.plan()
        opt = passes.optimize(plan, passes.parse_passes("all"), case.stats, case.catalog)
        ag = passes.compare_tables(execute_plan(plan, case.tables), opt.execute(case.tables),
                                   passes.score_columns(plan))
        exact += ag.label_agreement == 1.0 and ag.max_score_delta == 0
        trees_before += plan.tree_node_count()
        cols_before += plan.scanned_columns()
        trees_after += max(p.tree_node_count() for _, p in opt.parts)
        cols_after += max(p.scanned_columns() for _, p in opt.parts)
        key = opt.choice.choice if opt.choice else "none"
        choices[key] = choices.get(key, 0) + 1
    print(f"{n} cases in {time.perf_counter() - t0:.1f}s, {exact} bit-identical")
    print(f"tree nodes {trees_before} -> {trees_after} (worst partition)")
    print(f"scanned columns {cols_before} -> {cols_after}")
    print(f"strategy choices {choices}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 50)

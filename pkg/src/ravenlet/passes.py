"""The optimizer driver: logical passes in fixed order, then one transform."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ir
from . import ml2dnn, ml2sql, strategy
from .errors import CompilationFailed
from .executor import Table, execute_plan, run_partitioned
from .optimizer import data_induced_pruning, model_projection_pushdown, predicate_based_model_pruning

LOGICAL = ("pred_prune", "proj_pushdown", "data_induced")
TRANSFORMS = ("ml2sql", "ml2dnn")
ALL_PASSES = LOGICAL + TRANSFORMS


def parse_passes(text) -> frozenset:
    """``all``, ``none``, ``logical`` or a comma-separated subset of pass names."""
    if text is None or text == "all":
        return frozenset(ALL_PASSES)
    if text == "none":
        return frozenset()
    if text == "logical":
        return frozenset(LOGICAL)
    names = {t.strip() for t in text.split(",") if t.strip()}
    bad = names - set(ALL_PASSES)
    if bad:
        raise ValueError(f"unknown pass(es): {', '.join(sorted(bad))}")
    return frozenset(names)


@dataclass
class Optimized:
    parts: list  # [(Selector | None, Plan)]
    choice: strategy.TransformChoice | None = None
    log: list = field(default_factory=list)

    @property
    def plan(self) -> ir.Plan:
        """The single plan, or the first partition's."""
        return self.parts[0][1]

    def execute(self, tables) -> Table:
        return run_partitioned(self.parts, tables)


def _apply(parts, fn):
    return [(s, fn(p)) for s, p in parts]


def apply_transform(plan: ir.Plan, choice: str, log=None) -> ir.Plan:
    """Apply MLtoSQL or MLtoDNN; on CompilationFailed keep the plan as is."""
    if plan.model_node is None or choice == strategy.NO_TRANSFORM:
        return plan
    try:
        if choice == strategy.ML_TO_SQL:
            return ml2sql.to_sql_compute(plan)
        if choice == strategy.ML_TO_DNN:
            return ml2dnn.to_tensor_model(plan)
    except CompilationFailed as e:
        if log is not None:
            log.append(f"{choice} failed on {e.op_name}; keeping the plan")
    return plan


def optimize(plan: ir.Plan, passes=frozenset(LOGICAL), stats=None, catalog=None,
             strategy_spec="rule", has_gpu=False) -> Optimized:
    """pred_prune -> proj_pushdown -> data_induced -> strategy transform.

    The order is fixed; ``passes`` can only switch steps off. The transform
    runs only if the chosen one is enabled in ``passes``.
    """
    log = []
    parts = [(None, plan)]
    if "pred_prune" in passes:
        parts = _apply(parts, predicate_based_model_pruning)
        log.append("pred_prune")
    if "proj_pushdown" in passes:
        parts = _apply(parts, model_projection_pushdown)
        log.append("proj_pushdown")
    if "data_induced" in passes and stats:
        parts = data_induced_pruning(parts[0][1], stats, catalog, pushdown="proj_pushdown" in passes)
        log.append(f"data_induced: {len(parts)} plan(s)")
    choice = None
    wanted = passes & set(TRANSFORMS)
    seg_plan = parts[0][1]
    if wanted and seg_plan.model_node is not None:
        st = strategy.extract_stats(ir.ml_segment(seg_plan))
        choice = strategy.choose(st, strategy_spec, has_gpu)
        log.append(f"strategy: {choice.choice} ({choice.rationale})")
        target = {strategy.ML_TO_SQL: "ml2sql", strategy.ML_TO_DNN: "ml2dnn"}.get(choice.choice)
        if target in wanted:
            parts = _apply(parts, lambda p: apply_transform(p, choice.choice, log))
    return Optimized(parts, choice, log)


# --------------------------------------------------------------------------
# result comparison


@dataclass(frozen=True)
class Agreement:
    rows: int
    label_agreement: float  # fraction of rows whose non-score columns match
    max_score_delta: float  # max relative deviation over score columns
    same_shape: bool

    def ok(self, threshold=0.995, tolerance=1e-9) -> bool:
        return self.same_shape and self.label_agreement >= threshold and self.max_score_delta <= tolerance


def score_columns(plan: ir.Plan) -> set:
    b = plan.boundary
    if b is None:
        sc = plan.find(ir.SqlCompute)
        if not sc:
            return set()
        outs = {name for name, alias in sc[0].op.outputs if "score" in alias}
        return outs
    return {name for name, port in b.op.outputs if port == "score"}


def compare_tables(a: Table, b: Table, score_cols=()) -> Agreement:
    names_a = [c for c, _ in a.schema]
    names_b = [c for c, _ in b.schema]
    n = min(a.n_rows, b.n_rows)
    total = max(a.n_rows, b.n_rows)
    if names_a != names_b:
        return Agreement(total, 0.0, float("inf"), False)
    same = np.ones(n, dtype=bool)
    delta = 0.0
    for c in names_a:
        x, y = a[c][:n], b[c][:n]
        if c in score_cols:
            x = np.asarray(x, dtype=np.float64)
            y = np.asarray(y, dtype=np.float64)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.abs(x - y) / np.maximum(np.maximum(np.abs(x), np.abs(y)), 1e-300)
            d = np.where(x == y, 0.0, d)
            if n:
                delta = max(delta, float(np.max(d)))
        else:
            same &= np.asarray(x == y, dtype=bool)
    agree = float(np.count_nonzero(same)) / total if total else 1.0
    return Agreement(total, agree, delta, a.n_rows == b.n_rows)


def run(opt: Optimized, tables) -> Table:
    return opt.execute(tables)


def baseline(plan: ir.Plan, tables) -> Table:
    return execute_plan(plan, tables)

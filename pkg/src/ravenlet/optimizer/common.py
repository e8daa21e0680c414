"""Plan helpers shared by the passes: constraint propagation and column pruning."""
from __future__ import annotations

from .. import ir
from .. import pipeline as pl
from ..sqlexpr import columns_used
from .constraints import UNKNOWN, push_constraint


def slot_constraints(plan: ir.Plan, column_cs: dict) -> dict:
    """Constraint list for the output of every ML-side node.

    ``column_cs`` maps qualified relational columns to a constraint.
    """
    out = {}
    for n in ir.topo_order(plan):
        op = n.op
        if isinstance(op, ir.ModelInput):
            out[n.id] = [column_cs.get(op.column, UNKNOWN)]
        elif ir.is_ml(op) and not ir.is_model_op(op):
            ins = [c for s in n.inputs for c in out[s]]
            out[n.id] = push_constraint(op, ins)
    return out


def model_input_constraints(plan: ir.Plan, column_cs: dict) -> tuple[str, list] | None:
    m = plan.model_node
    if m is None:
        return None
    slots = slot_constraints(plan, column_cs)
    return m.id, [c for s in m.inputs for c in slots[s]]


def replace_ops(plan: ir.Plan, ops: dict) -> ir.Plan:
    return ir.make_plan([ir.PlanNode(n.id, ops.get(n.id, n.op), n.inputs) for n in plan.nodes], plan.root)


def prune_columns(plan: ir.Plan) -> ir.Plan:
    """Drop every relational column nobody reads, shrinking Projects and Scans.

    The root's schema is kept intact.
    """
    req: dict[str, set] = {n.id: set() for n in plan.nodes}
    root = plan.node(plan.root)
    if isinstance(plan.schema(root.id), list):
        req[root.id] = {c for c, _ in plan.schema(root.id)}
    order = ir.topo_order(plan)
    for n in reversed(order):
        op = n.op
        need = req[n.id]
        if isinstance(op, ir.Project):
            keep = [c for c, name in zip(op.columns, op.out_names) if name in need]
            req[n.inputs[0]] |= set(keep)
        elif isinstance(op, ir.Filter):
            req[n.inputs[0]] |= need | {c.column for c in op.conds}
        elif isinstance(op, ir.Join):
            left = {c for c, _ in plan.schema(n.inputs[0])}
            right = {c for c, _ in plan.schema(n.inputs[1])}
            req[n.inputs[0]] |= (need & left) | {op.left}
            req[n.inputs[1]] |= (need & right) | {op.right}
        elif isinstance(op, ir.PredictBoundary):
            outs = {name for name, _ in op.outputs}
            req[n.inputs[0]] |= need - outs
        elif isinstance(op, ir.SqlCompute):
            outs = {name for name, _ in op.outputs}
            refs = set()
            for _, e in op.bindings:
                for c in columns_used(e):
                    if c.table is not None:
                        refs.add(f"{c.table}.{c.name}")
                    else:
                        refs.add(c.name)
            req[n.inputs[0]] |= (need - outs) | refs
        elif isinstance(op, ir.ModelInput):
            req[n.inputs[0]].add(op.column)
        elif isinstance(op, ir.Count):
            pass
    nodes = []
    for n in plan.nodes:
        op = n.op
        if isinstance(op, ir.Project) and n.id != plan.root:
            pairs = [(c, name) for c, name in zip(op.columns, op.out_names) if name in req[n.id]]
            if len(pairs) != len(op.columns):
                names = None if op.names is None else tuple(p[1] for p in pairs)
                op = ir.Project(tuple(p[0] for p in pairs), names)
        elif isinstance(op, ir.Scan):
            cols = tuple((c, t) for c, t in op.columns if f"{op.alias}.{c}" in req[n.id])
            if cols != op.columns:
                op = ir.Scan(op.table, op.alias, cols)
        nodes.append(ir.PlanNode(n.id, op, n.inputs))
    return ir.make_plan(nodes, plan.root)


def used_features(op) -> list[int]:
    """Sorted input positions a model actually reads."""
    if isinstance(op, pl.TreeEnsemble):
        feats = set()
        for t in op.trees:
            feats |= pl.tree_features(t)
        return sorted(feats)
    if isinstance(op, pl.LinearModel):
        return [j for j, row in enumerate(op.weights) if row[0] != 0]
    raise TypeError(type(op).__name__)


def model_width(plan: ir.Plan, node: ir.PlanNode) -> int:
    return sum(plan.schema(s) for s in node.inputs)

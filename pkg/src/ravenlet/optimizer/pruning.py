"""Predicate-based model pruning.

Step 1 replaces every equality-constrained model input with a Constant node
and drops the column from the Project feeding the model. Step 2 pushes all
input-side constraints through the featurizers and prunes tree branches whose
test they decide. Output predicates then collapse subtrees of a single-tree
model whose leaves can never pass the output filter.
"""
from __future__ import annotations

import numpy as np

from .. import ir
from .. import pipeline as pl
from ..frontend import ColumnRef
from .common import model_input_constraints, prune_columns, replace_ops
from .constraints import EMPTY, UNKNOWN, Const, from_predicate, meet, prune_ensemble


def _as_cond(p):
    if isinstance(p, ir.Cond):
        return p
    name = p.target.name
    return ir.Cond(name, p.op, p.value)


def _filter_conds(plan, above_model: bool):
    b = plan.boundary
    out = []
    for n in plan.find(ir.Filter):
        below = b is not None and _reaches(plan, b.inputs[0], n.id)
        if below != above_model:
            out.extend(n.op.conds)
    return out


def _reaches(plan, start, target):
    stack, seen = [start], set()
    while stack:
        nid = stack.pop()
        if nid == target:
            return True
        if nid not in seen:
            seen.add(nid)
            stack.extend(plan.node(nid).inputs)
    return False


def empty_result(plan: ir.Plan) -> ir.Plan:
    """Plan marker for a query whose predicates contradict each other."""
    root = plan.node(plan.root)
    if isinstance(root.op, ir.Count):
        child = plan.schema(root.inputs[0])
        return ir.make_plan(
            [ir.PlanNode("empty", ir.EmptyResult(tuple(child))), ir.PlanNode(root.id, root.op, ("empty",))],
            root.id,
        )
    return ir.make_plan([ir.PlanNode("empty", ir.EmptyResult(tuple(plan.schema(root.id))))], "empty")


def predicate_based_model_pruning(plan: ir.Plan, input_predicates=None, output_predicates=None) -> ir.Plan:
    """Simplify the model using the query's predicates.

    Predicates default to the plan's own Filter conditions. Supplied
    predicates are only used when the plan actually enforces them.
    """
    if plan.boundary is None or plan.model_node is None:
        return plan
    enforced_in = _filter_conds(plan, above_model=False)
    enforced_out = _filter_conds(plan, above_model=True)
    if input_predicates is not None:
        wanted = [_as_cond(p) for p in input_predicates if isinstance(getattr(p, "target", None), ColumnRef)
                  or isinstance(p, ir.Cond)]
        ins = [c for c in wanted if c in enforced_in]
    else:
        ins = enforced_in
    if output_predicates is not None:
        outs = [c for c in (_as_cond(p) for p in output_predicates) if c in enforced_out]
    else:
        outs = enforced_out
    if not ins and not outs:
        return plan

    cs: dict = {}
    for c in ins:
        cs[c.column] = meet(cs.get(c.column, UNKNOWN), from_predicate(c.op, c.value))
    if any(v is EMPTY for v in cs.values()):
        return empty_result(plan)

    # step 1: constant substitution for equality-constrained inputs
    taken = {n.id for n in plan.nodes}
    rewire = {}
    new_nodes = []
    for n in plan.nodes:
        c = cs.get(n.op.column) if isinstance(n.op, ir.ModelInput) else None
        if isinstance(c, Const):
            cid = ir.fresh_id(taken, f"{ir.ML_PREFIX}const_{n.op.name}")
            taken.add(cid)
            rewire[n.id] = cid
            new_nodes.append(ir.PlanNode(cid, pl.Constant((c.value,))))
    if rewire:
        nodes = [
            ir.PlanNode(n.id, n.op, tuple(rewire.get(s, s) for s in n.inputs))
            for n in plan.nodes if n.id not in rewire
        ]
        plan = prune_columns(ir.make_plan(nodes + new_nodes, plan.root))

    # step 2: constraint propagation and tree pruning
    m = plan.model_node
    ops = {}
    if isinstance(m.op, pl.TreeEnsemble):
        _, slots = model_input_constraints(plan, cs)
        pruned = prune_ensemble(m.op, slots)
        if outs:
            pruned = prune_by_output(pruned, outs, dict(plan.boundary.op.outputs))
        if pruned != m.op:
            ops[m.id] = pruned
    if ops:
        plan = replace_ops(plan, ops)
    return plan


# --------------------------------------------------------------------------
# output predicates


_CMP = {
    "=": lambda a, b: a == b,
    "<>": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _leaf_outputs(op: pl.TreeEnsemble, leaf: pl.Leaf):
    from ..executor import predict_model

    single = pl.TreeEnsemble((leaf,), op.aggregate, op.task, op.post, op.classes)
    lab, sc = predict_model(single, [], 1)
    lab = lab[0]
    return (lab.item() if isinstance(lab, np.generic) else lab), float(sc[0])


def prune_by_output(op: pl.TreeEnsemble, conds, ports: dict) -> pl.TreeEnsemble:
    """Collapse subtrees of a single-tree model with no leaf passing ``conds``."""
    if len(op.trees) != 1:
        return op
    checks = [(ports[c.column], c) for c in conds if c.column in ports]
    if not checks:
        return op

    def ok(leaf):
        label, score = _leaf_outputs(op, leaf)
        for port, c in checks:
            v = label if port == "label" else score
            if isinstance(v, str) != isinstance(c.value, str):
                return False
            if not _CMP[c.op](v, c.value if isinstance(v, str) else float(c.value)):
                return False
        return True

    def walk(t):
        if isinstance(t, pl.Leaf):
            return t, ok(t)
        tt, tok = walk(t.true)
        ft, fok = walk(t.false)
        if not tok and not fok:
            return pl.tree_leaves(t)[0], False
        if tt is t.true and ft is t.false:
            return t, True
        return pl.Internal(t.feature, t.cmp, t.threshold, tt, ft), True

    tree, _ = walk(op.trees[0])
    if tree is op.trees[0]:
        return op
    return pl.TreeEnsemble((tree,), op.aggregate, op.task, op.post, op.classes)

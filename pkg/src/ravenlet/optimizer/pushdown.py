"""Model-projection pushdown.

Pass 1 swaps every model that ignores some of its input features for a dense
copy reading only the used ones, behind a FeatureExtractor. Pass 2 pushes
each FeatureExtractor toward the scans until no rule applies:

* identity extractors vanish;
* empty extractors vanish (or become an empty Constant where their consumer
  needs an input);
* over several ports or a Concat: one extractor per port, with the Concat
  arity fixed up;
* over Scaler, OneHotEncoder, LabelEncoder: the operator shrinks and the
  extractor moves below it;
* over Constant: the constant shrinks;
* over another FeatureExtractor: the two compose.

Finally the relational Projects and Scans drop the columns no longer read.
"""
from __future__ import annotations

from .. import ir
from .. import pipeline as pl
from .common import model_width, prune_columns, used_features


def densify(plan: ir.Plan) -> ir.Plan:
    """Pass 1: dense model plus FeatureExtractor for every sparse model."""
    m = plan.model_node
    if m is None or not isinstance(m.op, pl.MODELS):
        return plan
    width = model_width(plan, m)
    used = used_features(m.op)
    if len(used) == width:
        return plan
    mapping = {old: new for new, old in enumerate(used)}
    if isinstance(m.op, pl.TreeEnsemble):
        dense = pl.TreeEnsemble(
            tuple(pl.remap_tree(t, mapping) for t in m.op.trees),
            m.op.aggregate, m.op.task, m.op.post, m.op.classes,
        )
    else:
        dense = pl.LinearModel(tuple(m.op.weights[j] for j in used), m.op.intercepts, m.op.post, m.op.classes)
    taken = {n.id for n in plan.nodes}
    fe_id = ir.fresh_id(taken, f"{ir.ML_PREFIX}fe_{ir._ml_name(m.id)}")
    nodes = []
    for n in plan.nodes:
        if n.id == m.id:
            nodes.append(ir.PlanNode(fe_id, pl.FeatureExtractor(tuple(used)), n.inputs))
            nodes.append(ir.PlanNode(n.id, dense, (fe_id,)))
        else:
            nodes.append(n)
    return ir.make_plan(nodes, plan.root)


class _Graph:
    """Mutable working copy of the plan's node list."""

    def __init__(self, plan: ir.Plan):
        self.nodes = {n.id: n for n in plan.nodes}
        self.order = [n.id for n in plan.nodes]
        self.root = plan.root

    def consumers(self, nid):
        return [n for n in self.nodes.values() if nid in n.inputs]

    def fresh(self, base):
        return ir.fresh_id(self.nodes, base)

    def put(self, node, after=None):
        if node.id not in self.nodes:
            pos = self.order.index(after) if after in self.order else len(self.order) - 1
            self.order.insert(pos, node.id)
        self.nodes[node.id] = node

    def splice(self, nid, replacement: tuple):
        """Make every consumer read ``replacement`` ports where it read ``nid``."""
        for c in self.consumers(nid):
            ins = []
            for s in c.inputs:
                ins.extend(replacement if s == nid else (s,))
            op = c.op
            if isinstance(op, pl.Concat):
                op = pl.Concat(len(ins))
            self.nodes[c.id] = ir.PlanNode(c.id, op, tuple(ins))

    def width(self, nid):
        """ML output width, recomputed for nodes rewritten in this pass."""
        n = self.nodes[nid]
        if isinstance(n.op, ir.ModelInput):
            return 1
        ins = sum(self.width(s) for s in n.inputs)
        return pl.output_width(n.op, ins)

    def plan(self):
        return ir.make_plan([self.nodes[i] for i in self.order if i in self.nodes], self.root)


def _can_drop_port(consumer) -> bool:
    return len(consumer.inputs) > 1 or ir.is_model_op(consumer.op)


def _sink(g: _Graph, fid, src, new_op, indices, below):
    """Replace ``src`` by ``new_op`` reading a new extractor over ``below``."""
    nid = g.fresh(f"{ir.ML_PREFIX}fe_{ir._ml_name(src)}")
    g.put(ir.PlanNode(nid, pl.FeatureExtractor(tuple(indices)), tuple(below)), after=src)
    g.nodes[src] = ir.PlanNode(src, new_op, (nid,))
    _bypass(g, fid, src)


def _bypass(g: _Graph, fid, src):
    g.splice(fid, (src,))
    del g.nodes[fid]


def _split(g: _Graph, idx, ports, widths):
    """One extractor per port; returns the new node ids in port order."""
    parts, start = [], 0
    for s, w in zip(ports, widths):
        local = tuple(i - start for i in idx if start <= i < start + w)
        pid = g.fresh(f"{ir.ML_PREFIX}fe_{ir._ml_name(s)}")
        g.put(ir.PlanNode(pid, pl.FeatureExtractor(local), (s,)), after=s)
        parts.append(pid)
        start += w
    return tuple(parts)


def _step(g: _Graph) -> bool:
    """Apply one rewrite to some FeatureExtractor; False at fixpoint."""
    for fid in list(g.order):
        n = g.nodes.get(fid)
        if n is None or not isinstance(n.op, pl.FeatureExtractor):
            continue
        idx = list(n.op.indices)
        widths = [g.width(s) for s in n.inputs]
        total = sum(widths)

        if not idx:
            if all(_can_drop_port(c) for c in g.consumers(fid)):
                g.splice(fid, ())
                del g.nodes[fid]
            else:
                g.nodes[fid] = ir.PlanNode(fid, pl.Constant(()), ())
            return True
        if idx == list(range(total)):
            g.splice(fid, n.inputs)
            del g.nodes[fid]
            return True
        ordered = idx == sorted(idx)

        if len(n.inputs) > 1:
            if not ordered:
                continue
            # ports concatenate implicitly, so per-port extractors can replace us
            g.splice(fid, _split(g, idx, n.inputs, widths))
            del g.nodes[fid]
            return True

        (src,) = n.inputs
        p = g.nodes[src]
        if len(g.consumers(src)) != 1:
            continue
        op = p.op
        if isinstance(op, pl.Concat):
            if not ordered:
                continue
            in_widths = [g.width(s) for s in p.inputs]
            parts = _split(g, idx, p.inputs, in_widths)
            g.nodes[src] = ir.PlanNode(src, pl.Concat(len(parts)), parts)
            _bypass(g, fid, src)
            return True
        if isinstance(op, pl.FeatureExtractor):
            g.nodes[src] = ir.PlanNode(src, pl.FeatureExtractor(tuple(op.indices[i] for i in idx)), p.inputs)
            _bypass(g, fid, src)
            return True
        if isinstance(op, pl.Constant):
            g.nodes[src] = ir.PlanNode(src, pl.Constant(tuple(op.values[i] for i in idx)), ())
            _bypass(g, fid, src)
            return True
        if isinstance(op, pl.Scaler):
            new_op = pl.Scaler(tuple(op.offsets[i] for i in idx), tuple(op.scales[i] for i in idx))
            _sink(g, fid, src, new_op, idx, p.inputs)
            return True
        if isinstance(op, pl.LabelEncoder):
            _sink(g, fid, src, op, idx, p.inputs)
            return True
        if isinstance(op, pl.OneHotEncoder):
            if not ordered:
                continue
            keep_cols, cats, start = [], [], 0
            wanted = set(idx)
            for col, cs in enumerate(op.categories):
                sel = tuple(c for k, c in enumerate(cs) if start + k in wanted)
                if sel:
                    keep_cols.append(col)
                    cats.append(sel)
                start += len(cs)
            _sink(g, fid, src, pl.OneHotEncoder(tuple(cats)), keep_cols, p.inputs)
            return True
    return False


def push_extractors(plan: ir.Plan) -> ir.Plan:
    """Pass 2: push every FeatureExtractor down to fixpoint."""
    g = _Graph(plan)
    changed = False
    guard = 10 * (len(plan.nodes) + 10) ** 2
    while _step(g):
        changed = True
        guard -= 1
        if guard < 0:
            raise RuntimeError("FeatureExtractor pushdown did not converge")
    # a single-port Concat is the identity
    for nid in list(g.order):
        n = g.nodes.get(nid)
        if n is not None and isinstance(n.op, pl.Concat) and len(n.inputs) == 1:
            g.splice(nid, n.inputs)
            del g.nodes[nid]
            changed = True
    if not changed:
        return plan
    return g.plan()


def model_projection_pushdown(plan: ir.Plan) -> ir.Plan:
    out = push_extractors(densify(plan))
    if out is plan:
        return plan
    return prune_columns(out)

"""Compile a whole model pipeline into SQL expressions.

Arithmetic mirrors the reference evaluator operation for operation (same
operands, same association, same order), so compiled scores are bit-equal to
direct evaluation:

* Scaler ``(x - o) * s``; Normalizer divides by a named norm binding.
* OneHotEncoder / LabelEncoder become ``CASE`` chains; only one-hot positions
  some consumer reads are compiled.
* Linear models are a left-to-right sum over non-zero weights; a negative
  weight or intercept is written with ``-``, which is exact in IEEE arithmetic.
* Each tree is one nested ``CASE`` built by depth-first traversal. Vote
  ensembles count ``CASE WHEN tree >= 0.5 THEN 1 ELSE 0 END`` indicators.
* Logistic scores are ``1 / (1 + EXP(-raw))``; binary labels are
  ``CASE WHEN score >= 0.5 THEN c1 ELSE c0 END``.

Compilation is whole or nothing: any operator that cannot be expressed raises
:class:`CompilationFailed` and the caller keeps the original plan.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from . import ir
from . import pipeline as pl
from .errors import CompilationFailed, UnsupportedModel, UnsupportedOperator
from .sqlexpr import (
    And, BinOp, Case, Cmp, Col, DerivedFrom, FeatureRef, Func, Neg, Num, Select, Str, TableFrom,
    lit, render, render_statement,
)

_SQL_CMP = {"==": "=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}
_ONE, _ZERO, _HALF = Num(1.0), Num(0.0), Num(0.5)

DERIVED_ALIAS = "q"


@dataclass(frozen=True)
class SqlConfig:
    """Operators listed in ``unsupported`` make compilation fail by name."""

    unsupported: frozenset = frozenset()


def _inline(expr, hint):
    return expr


def _is_atom(e) -> bool:
    return isinstance(e, (Col, FeatureRef, Num, Str))


def _kind_of(e, default="num"):
    if isinstance(e, Str):
        return "str"
    if isinstance(e, Num):
        return "num"
    return default


def _same_family(kind, value) -> bool:
    return (kind == "str") == isinstance(value, str)


def _eq(x, value):
    return Cmp("=", x, lit(value))


def _sum(terms):
    out = terms[0]
    for t in terms[1:]:
        out = BinOp("+", out, t)
    return out


def _indicator(cond):
    return Case(((cond, _ONE),), _ZERO)


def _linear(op: pl.LinearModel, xs):
    acc = None
    for row, x in zip(op.weights, xs):
        w = float(row[0])
        if w == 0:
            continue
        if x is None:
            raise CompilationFailed("LinearModel", "a weighted input was not compiled")
        if acc is None:
            acc = BinOp("*", Num(w), x)
        elif w < 0:
            acc = BinOp("-", acc, BinOp("*", Num(-w), x))
        else:
            acc = BinOp("+", acc, BinOp("*", Num(w), x))
    b = float(op.intercepts[0])
    if acc is None:
        return Num(b)
    if b == 0:
        return acc
    return BinOp("-", acc, Num(-b)) if b < 0 else BinOp("+", acc, Num(b))


def compile_tree(tree, xs) -> object:
    """One nested CASE per tree, built depth first."""
    if isinstance(tree, pl.Leaf):
        return Num(float(tree.value[0]))
    x = xs[tree.feature]
    if x is None:
        raise CompilationFailed("TreeEnsemble", f"feature {tree.feature} was not compiled")
    cond = Cmp(_SQL_CMP[tree.cmp], x, Num(float(tree.threshold)))
    return Case(((cond, compile_tree(tree.true, xs)),), compile_tree(tree.false, xs))


def _label(op, score):
    classes = pl.model_classes(op)
    if classes is None:
        return score
    c0, c1 = classes
    return Case(((Cmp(">=", score, _HALF), lit(c1)),), lit(c0))


def _sigmoid(raw):
    return BinOp("/", _ONE, BinOp("+", _ONE, Func("EXP", (Neg(raw),))))


def _model(op, xs, bind):
    """``[label, score]`` expressions for a model node."""
    if isinstance(op, pl.LinearModel):
        score = _linear(op, xs)
        if op.post == "logistic":
            score = _sigmoid(bind(score, "raw"))
        score = bind(score, "score")
        return [_label(op, score), score]
    if isinstance(op, pl.TreeEnsemble):
        trees = [compile_tree(t, xs) for t in op.trees]
        n = Num(float(len(trees)))
        if op.aggregate == "vote":
            votes = bind(_sum([_indicator(Cmp(">=", t, _HALF)) for t in trees]), "votes")
            score = bind(BinOp("/", votes, n), "score")
            classes = pl.model_classes(op)
            if classes is None:
                raise UnsupportedModel("TreeEnsemble", "vote aggregation needs a classifier")
            c0, c1 = classes
            label = Case(((Cmp(">", BinOp("*", votes, Num(2.0)), n), lit(c1)),), lit(c0))
            return [label, score]
        score = _sum(trees)
        if op.aggregate == "average":
            score = BinOp("/", bind(score, "sum"), n)
        if op.post == "logistic":
            score = _sigmoid(bind(score, "raw"))
        score = bind(score, "score")
        return [_label(op, score), score]
    raise UnsupportedModel(type(op).__name__)


def compile_operator(op, input_exprs, input_kinds=None, bind=None, needed=None, config=None) -> list:
    """SQL expression for every output slot of ``op``.

    ``input_exprs`` holds one expression per input slot (``None`` for slots no
    consumer needs). Models return ``[label, score]``. ``bind(expr, hint)``
    may turn a sub-expression into a named reference; the default inlines.
    ``needed`` restricts which output slots are compiled (others are None).
    """
    bind = bind or _inline
    config = config or SqlConfig()
    xs = list(input_exprs)
    kinds = list(input_kinds) if input_kinds is not None else [_kind_of(x) for x in xs]
    name = type(op).__name__
    if name in config.unsupported:
        raise UnsupportedOperator(name)

    def want(i):
        return needed is None or i in needed

    if isinstance(op, pl.MODELS):
        return _model(op, xs, bind)
    if isinstance(op, pl.Constant):
        return [lit(v) if want(i) else None for i, v in enumerate(op.values)]
    if isinstance(op, pl.Concat):
        return xs
    if isinstance(op, pl.FeatureExtractor):
        return [xs[i] if want(k) else None for k, i in enumerate(op.indices)]
    if isinstance(op, pl.Scaler):
        out = []
        for i, (x, o, s) in enumerate(zip(xs, op.offsets, op.scales)):
            if x is None or not want(i):
                out.append(None)
                continue
            if kinds[i] == "str":
                raise UnsupportedOperator(name, "Scaler over a string input")
            out.append(BinOp("*", BinOp("-", x, Num(float(o))), Num(float(s))))
        return out
    if isinstance(op, pl.Normalizer):
        if not any(want(i) for i in range(len(xs))):
            return [None] * len(xs)
        if any(x is None for x in xs) or "str" in kinds:
            raise UnsupportedOperator(name)
        if op.norm == "L1":
            norm = _sum([Func("ABS", (x,)) for x in xs])
        elif op.norm == "L2":
            norm = Func("SQRT", (_sum([BinOp("*", x, x) for x in xs]),))
        else:
            norm = Func("GREATEST", tuple(Func("ABS", (x,)) for x in xs)) if len(xs) > 1 else Func("ABS", (xs[0],))
        norm = bind(norm, "norm")
        safe = bind(Case(((Cmp("=", norm, _ZERO), _ONE),), norm), "norm")
        return [BinOp("/", x, safe) if want(i) else None for i, x in enumerate(xs)]
    if isinstance(op, pl.OneHotEncoder):
        out, pos = [], 0
        for x, kind, cats in zip(xs, kinds, op.categories):
            for c in cats:
                if not want(pos) or x is None:
                    out.append(None)
                elif not _same_family(kind, c):
                    out.append(_ZERO)  # never equal across type families
                else:
                    out.append(_indicator(_eq(x, c)))
                pos += 1
        return out
    if isinstance(op, pl.LabelEncoder):
        out = []
        for i, (x, kind) in enumerate(zip(xs, kinds)):
            if x is None or not want(i):
                out.append(None)
                continue
            whens, seen = [], set()
            for k, v in op.mapping:
                key = (isinstance(k, str), k if isinstance(k, str) else float(k))
                if _same_family(kind, k) and key not in seen:
                    seen.add(key)
                    whens.append((_eq(x, k), Num(float(v))))
            out.append(Case(tuple(whens), Num(-1.0)) if whens else Num(-1.0))
        return out
    raise UnsupportedOperator(name)


# --------------------------------------------------------------------------
# needed slots (lazy one-hot compilation)


def _input_slots(node, widths):
    """Map each input slot of ``node`` to (source id, local slot)."""
    out = []
    for s in node.inputs:
        out.extend((s, k) for k in range(widths[s]))
    return out


def _needed_slots(order, model, widths) -> dict:
    need: dict = {n.id: set() for n in order}
    slots = _input_slots(model, widths)
    if isinstance(model.op, pl.TreeEnsemble):
        used = set()
        for t in model.op.trees:
            used |= pl.tree_features(t)
    else:
        used = {j for j, row in enumerate(model.op.weights) if row[0] != 0}
    for j in used:
        s, k = slots[j]
        need[s].add(k)
    for n in reversed(order):
        if n.id == model.id or not need[n.id]:
            continue
        op = n.op
        if isinstance(op, ir.ModelInput):
            continue
        slots = _input_slots(n, widths)
        want = need[n.id]
        if isinstance(op, pl.FeatureExtractor):
            idx = {op.indices[k] for k in want}
        elif isinstance(op, pl.OneHotEncoder):
            idx, pos = set(), 0
            for col, cats in enumerate(op.categories):
                if any(pos + k in want for k in range(len(cats))):
                    idx.add(col)
                pos += len(cats)
        elif isinstance(op, pl.Normalizer):
            idx = set(range(len(slots)))
        elif isinstance(op, pl.Constant):
            idx = set()
        else:
            idx = set(want)
        for j in idx:
            s, k = slots[j]
            need[s].add(k)
    return need


# --------------------------------------------------------------------------
# pipeline segment


@dataclass(frozen=True)
class CompiledSegment:
    bindings: tuple  # ((alias, expr), ...) evaluated in order
    outputs: tuple  # ((output column, alias), ...)
    kinds: tuple  # dtype per output


_UNSAFE = re.compile(r"[^A-Za-z0-9_]")


def _split_col(name):
    table, _, col = name.partition(".")
    return Col(table, col) if col else Col(None, table)


def compile_segment(plan: ir.Plan, colref=_split_col, config=None) -> CompiledSegment:
    """Compile the plan's ML segment into ordered named bindings."""
    m, b = plan.model_node, plan.boundary
    if m is None or b is None:
        raise CompilationFailed("PredictBoundary", "plan has no model to compile")
    if isinstance(m.op, ir.TensorModel):
        raise UnsupportedModel("TensorModel")
    order = [n for n in ir.topo_order(plan) if ir.is_ml(n.op) or isinstance(n.op, ir.ModelInput)]
    widths = {n.id: plan.schema(n.id) for n in order}
    need = _needed_slots(order, m, widths)
    rel = plan.schema(b.inputs[0])
    dtypes = dict(rel)
    bindings: list = []
    taken = {c for c, _ in rel}

    def fresh(base):
        base = "__" + _UNSAFE.sub("_", base)
        alias, k = base, 1
        while alias in taken:
            k += 1
            alias = f"{base}_{k}"
        taken.add(alias)
        return alias

    vals: dict = {}
    kinds: dict = {}
    for n in order:
        op = n.op
        if isinstance(op, ir.ModelInput):
            vals[n.id] = [colref(op.column)]
            kinds[n.id] = ["str" if dtypes[op.column] == "string" else "num"]
            continue
        ins = [e for s in n.inputs for e in vals[s]]
        in_kinds = [k for s in n.inputs for k in kinds[s]]
        stem = ir._ml_name(n.id)

        def bind(expr, hint, stem=stem):
            if _is_atom(expr):
                return expr
            alias = fresh(f"{stem}_{hint}")
            bindings.append((alias, expr))
            return Col(None, alias)

        if n.id == m.id:
            label, score = compile_operator(op, ins, in_kinds, bind, config=config)
            vals[n.id] = [label, score]
            continue
        outs = compile_operator(op, ins, in_kinds, bind, needed=need[n.id], config=config)
        if isinstance(op, (pl.Concat, pl.FeatureExtractor)):
            out_kinds = in_kinds if isinstance(op, pl.Concat) else [in_kinds[i] for i in op.indices]
        elif isinstance(op, pl.Constant):
            out_kinds = ["str" if isinstance(v, str) else "num" for v in op.values]
        else:
            out_kinds = ["num"] * len(outs)
        # shared featurizer outputs are emitted once as named bindings
        if not isinstance(op, (pl.Concat, pl.FeatureExtractor)):
            outs = [e if e is None else bind(e, str(k)) for k, e in enumerate(outs)]
        vals[n.id] = outs
        kinds[n.id] = out_kinds

    label, score = vals[m.id]
    model = ir.model_of(m.op)
    out_alias = {}
    for port, e in (("score", score), ("label", label)):
        if isinstance(e, Col) and e.table is None and e.name.startswith("__"):
            out_alias[port] = e.name
        else:
            a = fresh(f"{ir._ml_name(m.id)}_{port}")
            bindings.append((a, e))
            out_alias[port] = a
    outputs = tuple((name, out_alias[port]) for name, port in b.op.outputs)
    kinds_out = tuple(ir._output_dtype(model, port) for _, port in b.op.outputs)
    return CompiledSegment(tuple(bindings), outputs, kinds_out)


def _check_pipeline(pipeline, plan):
    if pipeline is None:
        return
    seg = ir.ml_segment(plan)
    mine = {n.id: (n.op, n.inputs) for n in seg.nodes}
    theirs = {n.id: (n.op, n.inputs) for n in pipeline.nodes}
    if mine != theirs:
        raise ValueError("pipeline does not match the plan's ML segment")


# --------------------------------------------------------------------------
# whole statement


def _relational_source(plan: ir.Plan, nid):
    """(tables, joins, where terms, name -> expr) for a relational subplan."""
    n = plan.node(nid)
    op = n.op
    if isinstance(op, ir.Scan):
        cols = {f"{op.alias}.{c}": Col(op.alias, c) for c, _ in op.columns}
        return [(op.table, op.alias)], [], [], cols
    if isinstance(op, ir.Join):
        lt, lj, lw, lc = _relational_source(plan, n.inputs[0])
        rt, rj, rw, rc = _relational_source(plan, n.inputs[1])
        if len(rt) != 1:
            raise CompilationFailed("Join", "only left-deep joins are compiled")
        return lt + rt, lj + [(lc[op.left], rc[op.right])], lw + rw, {**lc, **rc}
    if isinstance(op, ir.Filter):
        t, j, w, c = _relational_source(plan, n.inputs[0])
        for cond in op.conds:
            w.append(Cmp(cond.op, c[cond.column], lit(cond.value)))
        return t, j, w, c
    if isinstance(op, ir.Project):
        t, j, w, c = _relational_source(plan, n.inputs[0])
        return t, j, w, {name: c[col] for col, name in zip(op.columns, op.out_names)}
    raise CompilationFailed(type(op).__name__, f"cannot express {type(op).__name__} in the statement")


def _where(terms):
    if not terms:
        return None
    return terms[0] if len(terms) == 1 else And(tuple(terms))


def compile_plan_to_statement(plan: ir.Plan, config=None) -> Select:
    """One SELECT computing the plan's result, ML segment included."""
    b = plan.boundary
    if b is None:
        raise CompilationFailed("PredictBoundary", "plan has no model to compile")
    tables, joins, where, cols = _relational_source(plan, b.inputs[0])
    rel = plan.schema(b.inputs[0])
    seg = compile_segment(plan, colref=lambda name: cols[name], config=config)
    items = [(cols[c], c) for c, _ in rel]
    items += [(e, a) for a, e in seg.bindings]
    items += [(Col(None, a), name) for name, a in seg.outputs]
    inner = Select(tuple(items), TableFrom(tuple(tables), tuple(joins)), _where(where))

    # operators above the boundary, bottom to top
    chain, nid = [], plan.root
    while nid != b.id:
        n = plan.node(nid)
        if len(n.inputs) != 1:
            raise CompilationFailed(type(n.op).__name__)
        chain.append(n)
        nid = n.inputs[0]
    names = {c: Col(DERIVED_ALIAS, c) for c, _ in plan.schema(b.id)}
    outer_where = []
    select_items = None
    count = False
    for n in reversed(chain):
        op = n.op
        if isinstance(op, ir.Filter) and select_items is None:
            outer_where += [Cmp(c.op, names[c.column], lit(c.value)) for c in op.conds]
        elif isinstance(op, ir.Project) and select_items is None:
            select_items = [(names[c], name) for c, name in zip(op.columns, op.out_names)]
            names = {name: names[c] for c, name in zip(op.columns, op.out_names)}
        elif isinstance(op, ir.Count) and n.id == plan.root:
            count = True
        else:
            raise CompilationFailed(type(op).__name__, "unsupported operator above the prediction")
    if count:
        select_items = [(Func("COUNT", ()), "count")]
    elif select_items is None:
        select_items = [(names[c], c) for c, _ in plan.schema(b.id)]
    return Select(tuple(select_items), DerivedFrom(inner, DERIVED_ALIAS), _where(outer_where))


def restrict_statement(stmt: Select, selector) -> Select:
    """Add ``lo <= alias.column <= hi`` to the innermost WHERE.

    Used for per-partition plans: the UNION ALL of the restricted statements
    returns the rows of the unpartitioned query.
    """
    inner = stmt.source.query if isinstance(stmt.source, DerivedFrom) else stmt
    col = Col(selector.alias, selector.column)
    terms = [] if inner.where is None else list(inner.where.terms) if isinstance(inner.where, And) else [inner.where]
    terms += [Cmp(">=", col, lit(float(selector.lo))), Cmp("<=", col, lit(float(selector.hi)))]
    inner = Select(inner.items, inner.source, _where(terms))
    if isinstance(stmt.source, DerivedFrom):
        return Select(stmt.items, DerivedFrom(inner, stmt.source.alias), stmt.where)
    return inner


def compile_pipeline_to_sql(pipeline, plan: ir.Plan, dialect="neutral", config=None, selector=None) -> str:
    """Whole-plan SQL text; raises CompilationFailed on any unsupported operator."""
    _check_pipeline(pipeline, plan)
    stmt = compile_plan_to_statement(plan, config)
    if selector is not None:
        stmt = restrict_statement(stmt, selector)
    return render_statement(stmt, dialect) + "\n"


def tree_to_sql(tree) -> str:
    """Nested CASE text of one tree over positional features ``F[i]``."""
    width = max(pl.tree_features(tree), default=-1) + 1
    return render(compile_tree(tree, [FeatureRef(i) for i in range(width)]))


def to_sql_compute(plan: ir.Plan, config=None) -> ir.Plan:
    """Replace the ML segment and its PredictBoundary by one SqlCompute node."""
    seg = compile_segment(plan, config=config)
    b = plan.boundary
    nid = ir.fresh_id({n.id for n in plan.nodes}, "sql")
    op = ir.SqlCompute(seg.bindings, seg.outputs, seg.kinds)
    nodes = []
    for n in plan.nodes:
        if ir.is_ml(n.op) or isinstance(n.op, ir.ModelInput) or n.id == b.id:
            continue
        nodes.append(ir.PlanNode(n.id, n.op, tuple(nid if s == b.id else s for s in n.inputs)))
    nodes.append(ir.PlanNode(nid, op, (b.inputs[0],)))
    root = nid if plan.root == b.id else plan.root
    return ir.make_plan(nodes, root)

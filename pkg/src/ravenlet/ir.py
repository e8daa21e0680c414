"""Unified plan IR: one DAG holding relational operators and the inlined pipeline.

Layout produced by :func:`build_ir` (bottom to top)::

    Scan ... Join ... Filter(input predicates) -> Project(columns feeding the model
    and the query) -> ModelInput per pipeline input -> ML operators -> PredictBoundary
    -> Filter(output predicates) -> Project(final) [-> Count]

``ModelInput`` nodes are the column map: each links one pipeline input name to
one qualified relational column (``alias.column``). Plans are immutable and
validated eagerly on construction.
"""
from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Any

from . import pipeline as pl
from .errors import ArityError, BindError, CycleError, SchemaError, ValidationError
from .frontend import Catalog, ColumnRef, QueryAst, normalize_predict

# --------------------------------------------------------------------------
# relational operators


@dataclass(frozen=True)
class Scan:
    table: str
    alias: str
    columns: tuple[tuple[str, str], ...]  # (column, dtype), unqualified


@dataclass(frozen=True)
class Join:
    left: str  # qualified column of the left input
    right: str


@dataclass(frozen=True)
class Cond:
    column: str
    op: str  # = <> < <= > >=
    value: Any

    def __str__(self):
        v = f"'{self.value}'" if isinstance(self.value, str) else repr(self.value)
        return f"{self.column} {self.op} {v}"


@dataclass(frozen=True)
class Filter:
    conds: tuple[Cond, ...] = ()  # conjunction; empty means TRUE


@dataclass(frozen=True)
class Project:
    columns: tuple[str, ...]
    names: tuple[str, ...] | None = None  # output names, defaults to columns

    @property
    def out_names(self):
        return self.names if self.names is not None else self.columns


@dataclass(frozen=True)
class ModelInput:
    name: str  # pipeline input name
    column: str  # qualified relational column


@dataclass(frozen=True)
class PredictBoundary:
    outputs: tuple[tuple[str, str], ...]  # (column name, port label|score)


@dataclass(frozen=True)
class Count:
    pass


@dataclass(frozen=True)
class EmptyResult:
    schema: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class SqlCompute:
    """Compiled replacement for the ML segment plus its PredictBoundary.

    ``bindings`` are evaluated in order; each may reference relational columns
    of the child and earlier bindings. ``outputs`` maps output column names to
    binding names.
    """

    bindings: tuple[tuple[str, Any], ...]
    outputs: tuple[tuple[str, str], ...]
    kinds: tuple[str, ...] = ()  # dtype per output


@dataclass(frozen=True)
class TensorModel:
    """A model node replaced by a tensor program; ``source`` is the original."""

    program: Any
    source: Any


RELATIONAL = (Scan, Join, Filter, Project, PredictBoundary, Count, EmptyResult, SqlCompute)


def is_ml(op) -> bool:
    return isinstance(op, pl.FEATURIZERS + pl.MODELS + (TensorModel,))


def is_model_op(op) -> bool:
    return isinstance(op, pl.MODELS + (TensorModel,))


def model_of(op):
    return op.source if isinstance(op, TensorModel) else op


@dataclass(frozen=True)
class PlanNode:
    id: str
    op: Any
    inputs: tuple[str, ...] = ()


# --------------------------------------------------------------------------
# plan


@dataclass(frozen=True)
class Plan:
    nodes: tuple[PlanNode, ...]
    root: str
    schemas: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "schemas", _validate(self))

    # lookups -------------------------------------------------------------

    def node(self, node_id) -> PlanNode:
        return self._index()[node_id]

    def _index(self):
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {n.id: n for n in self.nodes}
            object.__setattr__(self, "_idx", idx)
        return idx

    def __contains__(self, node_id):
        return node_id in self._index()

    def consumers(self, node_id) -> list[str]:
        return [n.id for n in self.nodes if node_id in n.inputs]

    def find(self, kind) -> list[PlanNode]:
        return [n for n in self.nodes if isinstance(n.op, kind)]

    def schema(self, node_id):
        """Relational schema ``[(name, dtype)]`` or ML width (int)."""
        return self.schemas[node_id]

    @property
    def column_map(self) -> dict[str, str]:
        """Pipeline input name -> qualified relational column."""
        return {n.op.name: n.op.column for n in self.find(ModelInput)}

    @property
    def input_for_column(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for name, col in self.column_map.items():
            out.setdefault(col, []).append(name)
        return out

    @property
    def model_node(self) -> PlanNode | None:
        ms = [n for n in self.nodes if is_model_op(n.op)]
        return ms[0] if ms else None

    @property
    def boundary(self) -> PlanNode | None:
        bs = self.find(PredictBoundary)
        return bs[0] if bs else None

    def ml_nodes(self) -> list[PlanNode]:
        return [n for n in self.nodes if is_ml(n.op)]

    # metrics -------------------------------------------------------------

    def scanned_columns(self) -> int:
        return sum(len(n.op.columns) for n in self.find(Scan))

    def tree_node_count(self) -> int:
        total = 0
        for n in self.nodes:
            op = model_of(n.op) if is_ml(n.op) else None
            if isinstance(op, pl.TreeEnsemble):
                total += sum(pl.tree_size(t) for t in op.trees)
        return total

    def with_nodes(self, nodes, root=None) -> "Plan":
        return make_plan(nodes, root or self.root)


def make_plan(nodes, root) -> Plan:
    """Build a plan from ``nodes`` after dropping everything unreachable from ``root``."""
    by_id = {}
    for n in nodes:
        if n.id in by_id:
            raise SchemaError(f"duplicate node id {n.id!r}")
        by_id[n.id] = n
    if root not in by_id:
        raise SchemaError(f"root {root!r} is not a node")
    keep, stack = set(), [root]
    while stack:
        nid = stack.pop()
        if nid in keep:
            continue
        keep.add(nid)
        if nid not in by_id:
            raise SchemaError(f"dangling reference to {nid!r}")
        stack.extend(by_id[nid].inputs)
    return Plan(tuple(n for n in nodes if n.id in keep), root)


def fresh_id(taken, base) -> str:
    taken = set(taken)
    if base not in taken:
        return base
    i = 1
    while f"{base}_{i}" in taken:
        i += 1
    return f"{base}_{i}"


# --------------------------------------------------------------------------
# validation and schema propagation


_ARITY = {
    Scan: (0, 0), Join: (2, 2), Filter: (1, 1), Project: (1, 1), ModelInput: (1, 1),
    PredictBoundary: (2, 2), Count: (1, 1), EmptyResult: (0, 0), SqlCompute: (1, 1),
}


def _order_ids(nodes) -> list[str]:
    """Kahn's algorithm with smallest-id tie-break."""
    ids = {n.id for n in nodes}
    indeg = {n.id: 0 for n in nodes}
    out: dict[str, list[str]] = {n.id: [] for n in nodes}
    for n in nodes:
        for s in n.inputs:
            if s in ids:
                indeg[n.id] += 1
                out[s].append(n.id)
    heap = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for c in out[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != len(ids):
        raise CycleError("plan contains a cycle")
    return order


def topo_order(plan: Plan) -> list[PlanNode]:
    """Every node after its inputs; ties broken by node id."""
    idx = plan._index()
    return [idx[i] for i in _order_ids(plan.nodes)]


def _kind(dtype):
    return "str" if dtype == "string" else "num"


def _validate(plan: Plan) -> dict:
    by_id = {}
    for n in plan.nodes:
        if n.id in by_id:
            raise SchemaError(f"duplicate node id {n.id!r}")
        by_id[n.id] = n
    if plan.root not in by_id:
        raise SchemaError(f"root {plan.root!r} is not a node")
    for n in plan.nodes:
        for s in n.inputs:
            if s not in by_id:
                raise SchemaError(f"node {n.id!r} reads unknown node {s!r}")
    order = _order_ids(plan.nodes)
    consumed = {s for n in plan.nodes for s in n.inputs}
    for n in plan.nodes:
        if n.id != plan.root and n.id not in consumed:
            raise SchemaError(f"node {n.id!r} is not reachable from the root")
    if plan.root in consumed:
        raise SchemaError("root node has consumers")

    schemas: dict[str, Any] = {}
    kinds: dict[str, list[str]] = {}  # ML slot kinds
    for nid in order:
        n = by_id[nid]
        op = n.op
        if type(op) in _ARITY:
            lo, hi = _ARITY[type(op)]
            if not lo <= len(n.inputs) <= hi:
                raise ArityError(f"node {nid!r}: {type(op).__name__} takes {lo} input(s), got {len(n.inputs)}")
        ins = [schemas[s] for s in n.inputs]
        if isinstance(op, Scan):
            schemas[nid] = [(f"{op.alias}.{c}", t) for c, t in op.columns]
        elif isinstance(op, Join):
            left, right = ins
            _need(nid, left, op.left)
            _need(nid, right, op.right)
            if _dtype(left, op.left) != _dtype(right, op.right):
                raise SchemaError(f"node {nid!r}: join keys have different types")
            names = [c for c, _ in left]
            if set(names) & {c for c, _ in right}:
                raise SchemaError(f"node {nid!r}: join inputs share column names")
            schemas[nid] = left + right
        elif isinstance(op, Filter):
            (child,) = ins
            for c in op.conds:
                t = _dtype(child, c.column)
                if t is None:
                    raise SchemaError(f"node {nid!r}: filter column {c.column!r} not in input")
                if (t == "string") != isinstance(c.value, str):
                    raise SchemaError(f"node {nid!r}: literal type does not match {c.column!r}")
            schemas[nid] = child
        elif isinstance(op, Project):
            (child,) = ins
            if op.names is not None and len(op.names) != len(op.columns):
                raise SchemaError(f"node {nid!r}: projection names do not match columns")
            out = []
            for c, name in zip(op.columns, op.out_names):
                t = _dtype(child, c)
                if t is None:
                    raise SchemaError(f"node {nid!r}: column {c!r} not in input")
                out.append((name, t))
            if len({c for c, _ in out}) != len(out):
                raise SchemaError(f"node {nid!r}: duplicate output column")
            schemas[nid] = out
        elif isinstance(op, ModelInput):
            (child,) = ins
            t = _dtype(child, op.column)
            if t is None:
                raise SchemaError(f"node {nid!r}: model input column {op.column!r} not in input")
            schemas[nid] = 1
            kinds[nid] = [_kind(t)]
        elif isinstance(op, PredictBoundary):
            rel, model = ins
            if not isinstance(rel, list) or not is_model_op(by_id[n.inputs[1]].op):
                raise SchemaError(f"node {nid!r}: PredictBoundary needs (relation, model)")
            m = model_of(by_id[n.inputs[1]].op)
            schemas[nid] = rel + [(name, _output_dtype(m, port)) for name, port in op.outputs]
        elif isinstance(op, SqlCompute):
            (child,) = ins
            if len(op.kinds) != len(op.outputs):
                raise SchemaError(f"node {nid!r}: output kinds missing")
            schemas[nid] = child + [(name, k) for (name, _), k in zip(op.outputs, op.kinds)]
        elif isinstance(op, Count):
            schemas[nid] = [("count", "int64")]
        elif isinstance(op, EmptyResult):
            schemas[nid] = list(op.schema)
        elif is_ml(op):
            for s in n.inputs:
                if isinstance(schemas[s], list):
                    raise SchemaError(f"node {nid!r}: ML operator reads relational node {s!r}")
            if not is_model_op(op):
                # widths and kinds are checked by the segment validator below
                in_kinds = [k for s in n.inputs for k in kinds[s]]
                w = len(in_kinds)
                try:
                    schemas[nid] = pl.output_width(op, w)
                except TypeError:
                    raise SchemaError(f"node {nid!r}: bad operator") from None
                if isinstance(op, pl.FeatureExtractor):
                    kinds[nid] = [in_kinds[i] if 0 <= i < w else "num" for i in op.indices]
                elif isinstance(op, pl.Concat):
                    kinds[nid] = in_kinds
                elif isinstance(op, pl.Constant):
                    kinds[nid] = ["str" if isinstance(v, str) else "num" for v in op.values]
                else:
                    kinds[nid] = ["num"] * schemas[nid]
            else:
                schemas[nid] = 0
        else:
            raise SchemaError(f"node {nid!r}: unknown operator {type(op).__name__}")

    if any(is_ml(n.op) for n in plan.nodes):
        seg = ml_segment(plan, schemas)
        rep = pl.validate(seg)
        if rep:
            first = rep.issues[0]
            raise SchemaError(f"ML segment invalid: {first}")
    return schemas


def _need(nid, schema, col):
    if _dtype(schema, col) is None:
        raise SchemaError(f"node {nid!r}: column {col!r} not in input")


def _dtype(schema, col):
    for c, t in schema:
        if c == col:
            return t
    return None


def _output_dtype(model, port):
    classes = pl.model_classes(model)
    if port == "label" and classes is not None and isinstance(classes[0], str):
        return "string"
    return "float64"


# --------------------------------------------------------------------------
# ML segment view


ML_PREFIX = "ml."
INPUT_PREFIX = "input."


def ml_segment(plan: Plan, schemas=None) -> pl.ModelPipeline:
    """The inlined pipeline as a standalone ModelPipeline.

    ModelInput nodes become pipeline inputs named after the pipeline input;
    a TensorModel contributes its source model so widths can be checked.
    """
    schemas = schemas if schemas is not None else plan.schemas
    by_id = {n.id: n for n in plan.nodes}
    inputs = []
    rename = {}
    for n in plan.nodes:
        if isinstance(n.op, ModelInput):
            rel = schemas[n.inputs[0]]
            inputs.append(pl.PipelineInput(n.op.name, _dtype(rel, n.op.column)))
            rename[n.id] = n.op.name
    nodes = []
    for n in plan.nodes:
        if is_ml(n.op):
            rename[n.id] = _ml_name(n.id)
    for n in plan.nodes:
        if is_ml(n.op):
            nodes.append(pl.PipelineNode(rename[n.id], model_of(n.op), tuple(rename[s] for s in n.inputs)))
    outputs = []
    for n in plan.nodes:
        if isinstance(n.op, PredictBoundary):
            m = by_id[n.inputs[1]]
            outputs = [pl.PipelineOutput(name, rename[m.id], port) for name, port in n.op.outputs]
    return pl.ModelPipeline("segment", tuple(inputs), tuple(nodes), tuple(outputs))


def _ml_name(node_id):
    return node_id[len(ML_PREFIX):] if node_id.startswith(ML_PREFIX) else node_id


# --------------------------------------------------------------------------
# build


def build_ir(ast: QueryAst, pipeline: pl.ModelPipeline, catalog: Catalog) -> Plan:
    """Inline ``pipeline`` into the relational plan of ``ast``."""
    ast = normalize_predict(ast)
    call = ast.predict

    # bind pipeline inputs to query columns by name
    if call.inputs == "*":
        candidates = [
            ColumnRef(s.alias, c) for s in ast.sources for c in catalog[s.table].column_names
        ]
    else:
        candidates = list(call.inputs)
    binding: dict[str, ColumnRef] = {}
    for inp in pipeline.inputs:
        hits = [c for c in candidates if c.column == inp.name]
        if not hits:
            raise BindError(f"pipeline input {inp.name!r} has no matching column in the query")
        if len(hits) > 1:
            raise BindError(f"pipeline input {inp.name!r} matches several columns: "
                            + ", ".join(h.name for h in hits))
        col = hits[0]
        dtype = catalog[ast.alias_table(col.table)].dtype(col.column)
        if not _compatible(dtype, inp.dtype):
            raise BindError(f"pipeline input {inp.name!r} is {inp.dtype} but {col.name} is {dtype}")
        binding[inp.name] = col
    if call.inputs != "*" and len(call.inputs) != len(pipeline.inputs):
        extra = [c.name for c in call.inputs if c not in binding.values()]
        raise BindError(f"PREDICT passes columns the pipeline does not take: {', '.join(extra)}")

    # columns each source must produce
    needed: dict[str, list[str]] = {s.alias: [] for s in ast.sources}

    def need(ref: ColumnRef):
        if ref.column not in needed[ref.table]:
            needed[ref.table].append(ref.column)

    for j in ast.joins:
        need(j.left)
        need(j.right)
    for p in ast.predicates:
        if isinstance(p.target, ColumnRef):
            need(p.target)
    for pr in ast.projections:
        if isinstance(pr.ref, ColumnRef):
            need(pr.ref)
    for inp in pipeline.inputs:
        need(binding[inp.name])

    nodes = []
    ids = set()

    def add(node_id, op, inputs=()):
        node_id = fresh_id(ids, node_id)
        ids.add(node_id)
        nodes.append(PlanNode(node_id, op, tuple(inputs)))
        return node_id

    scans = {}
    for s in ast.sources:
        schema = catalog[s.table]
        cols = tuple((c, schema.dtype(c)) for c in schema.column_names if c in needed[s.alias])
        scans[s.alias] = add(f"scan.{s.alias}", Scan(s.table, s.alias, cols))
    cur = scans[ast.sources[0].alias]
    joined = {ast.sources[0].alias}
    for k, (s, j) in enumerate(zip(ast.sources[1:], ast.joins), 1):
        left, right = j.left, j.right
        if left.table == s.alias:
            left, right = right, left
        if left.table not in joined or right.table != s.alias:
            raise BindError(f"join condition {j.left} = {j.right} does not link {s.alias!r} to earlier tables")
        cur = add(f"join.{k}", Join(left.name, right.name), (cur, scans[s.alias]))
        joined.add(s.alias)

    in_preds, out_preds = [], []
    for p in ast.predicates:
        if isinstance(p.target, ColumnRef):
            in_preds.append(Cond(p.target.name, p.op, p.value))
        else:
            out_preds.append(p)
    if in_preds:
        cur = add("filter.input", Filter(tuple(in_preds)), (cur,))

    proj_cols = []
    for inp in pipeline.inputs:
        c = binding[inp.name].name
        if c not in proj_cols:
            proj_cols.append(c)
    for pr in ast.projections:
        if isinstance(pr.ref, ColumnRef) and pr.ref.name not in proj_cols:
            proj_cols.append(pr.ref.name)
    project = add("project.input", Project(tuple(proj_cols)), (cur,))

    rename = {}
    for inp in pipeline.inputs:
        rename[inp.name] = add(INPUT_PREFIX + inp.name, ModelInput(inp.name, binding[inp.name].name), (project,))
    for n in pipeline.nodes:
        rename[n.id] = fresh_id(ids, ML_PREFIX + n.id)
        ids.add(rename[n.id])
    for n in pl.topo_nodes(pipeline):
        nodes.append(PlanNode(rename[n.id], n.op, tuple(rename[s] for s in n.inputs)))
    model_id = rename[pipeline.model_node.id]

    outs = []
    for b in call.outputs:
        if pipeline.output(b.key) is None:
            raise BindError(f"pipeline has no {b.key} output for {b.full_name!r}")
        outs.append((b.full_name, b.key))
    cur = add("predict", PredictBoundary(tuple(outs)), (project, model_id))

    if out_preds:
        conds = []
        for p in out_preds:
            b = call.binding(p.target.name)
            if b is None:
                raise BindError(f"{p.target.name!r} is not a PREDICT output")
            conds.append(Cond(b.full_name, p.op, p.value))
        cur = add("filter.output", Filter(tuple(conds)), (cur,))

    cols, names = [], []
    for pr in ast.projections:
        if isinstance(pr.ref, ColumnRef):
            cols.append(pr.ref.name)
        else:
            b = call.binding(pr.ref.name)
            if b is None:
                raise BindError(f"{pr.ref.name!r} is not a PREDICT output")
            cols.append(b.full_name)
        names.append(pr.name)
    cur = add("project.output", Project(tuple(cols), tuple(names)), (cur,))
    if ast.count:
        cur = add("count", Count(), (cur,))
    try:
        return make_plan(nodes, cur)
    except SchemaError as e:
        raise BindError(str(e)) from None


def _compatible(col_dtype, input_dtype):
    if col_dtype == input_dtype:
        return True
    return col_dtype == "int64" and input_dtype == "float64"


# --------------------------------------------------------------------------
# rewriting


@dataclass(frozen=True)
class Subgraph:
    """Replacement for one node.

    Node inputs may name ``$i`` to read the replaced node's i-th input.
    ``output`` is the id whose result stands in for the old node, or ``$i``.
    """

    nodes: tuple[PlanNode, ...]
    output: str
    n_inputs: int


def replace_node(plan: Plan, old_id: str, sub: Subgraph) -> Plan:
    old = plan.node(old_id)
    if sub.n_inputs != len(old.inputs):
        raise ArityError(f"subgraph takes {sub.n_inputs} inputs, {old_id!r} has {len(old.inputs)}")

    def resolve(ref):
        if ref.startswith("$"):
            k = int(ref[1:])
            if not 0 <= k < len(old.inputs):
                raise ArityError(f"subgraph placeholder {ref} out of range")
            return old.inputs[k]
        return ref

    taken = {n.id for n in plan.nodes if n.id != old_id}
    for n in sub.nodes:
        if n.id in taken:
            raise SchemaError(f"subgraph node id {n.id!r} already in plan")
    out = resolve(sub.output)
    new_nodes = []
    for n in plan.nodes:
        if n.id == old_id:
            new_nodes.extend(PlanNode(s.id, s.op, tuple(resolve(i) for i in s.inputs)) for s in sub.nodes)
            continue
        if old_id in n.inputs:
            n = PlanNode(n.id, n.op, tuple(out if i == old_id else i for i in n.inputs))
        new_nodes.append(n)
    root = out if plan.root == old_id else plan.root
    return make_plan(new_nodes, root)


def substitute(plan: Plan, replacements: dict[str, PlanNode]) -> Plan:
    """Swap nodes by id (same id, new op or inputs) and rebuild."""
    nodes = [replacements.get(n.id, n) for n in plan.nodes]
    extra = [n for nid, n in replacements.items() if nid not in plan]
    return make_plan(nodes + extra, plan.root)


# --------------------------------------------------------------------------
# explain


def describe(op) -> str:
    """One-line label carrying every parameter of ``op``."""
    if isinstance(op, Scan):
        return f"Scan({op.table} AS {op.alias}: {', '.join(c for c, _ in op.columns)})"
    if isinstance(op, Join):
        return f"Join({op.left} = {op.right})"
    if isinstance(op, Filter):
        return f"Filter({' AND '.join(map(str, op.conds)) or 'TRUE'})"
    if isinstance(op, Project):
        if op.names is None:
            return f"Project({', '.join(op.columns)})"
        parts = [c if c == n else f"{c} AS {n}" for c, n in zip(op.columns, op.names)]
        return f"Project({', '.join(parts)})"
    if isinstance(op, ModelInput):
        return f"ModelInput({op.name} <- {op.column})"
    if isinstance(op, PredictBoundary):
        return f"PredictBoundary({', '.join(f'{n}={p}' for n, p in op.outputs)})"
    if isinstance(op, Count):
        return "Count()"
    if isinstance(op, EmptyResult):
        return f"EmptyResult({', '.join(c for c, _ in op.schema)})"
    if isinstance(op, SqlCompute):
        from .sqlexpr import render

        parts = [f"{a} := {render(e)}" for a, e in op.bindings]
        parts += [f"{n} = {a}" for n, a in op.outputs]
        return _clip(f"SqlCompute({'; '.join(parts)})", op)
    if isinstance(op, TensorModel):
        return f"TensorModel({len(op.program.ops)} ops, {_digest(op)})"
    if isinstance(op, pl.Scaler):
        return f"Scaler(offsets={_nums(op.offsets)}, scales={_nums(op.scales)})"
    if isinstance(op, pl.Normalizer):
        return f"Normalizer({op.norm})"
    if isinstance(op, pl.OneHotEncoder):
        return f"OneHotEncoder({json.dumps([list(c) for c in op.categories])})"
    if isinstance(op, pl.LabelEncoder):
        return f"LabelEncoder({json.dumps([list(m) for m in op.mapping])})"
    if isinstance(op, pl.Concat):
        return f"Concat({op.arity})"
    if isinstance(op, pl.FeatureExtractor):
        return f"FeatureExtractor({list(op.indices)})"
    if isinstance(op, pl.Constant):
        return f"Constant({json.dumps(list(op.values))})"
    if isinstance(op, pl.LinearModel):
        return _clip(
            f"LinearModel(weights={_nums(w[0] for w in op.weights)}, "
            f"intercept={_nums(op.intercepts)}, post={op.post})",
            op,
        )
    if isinstance(op, pl.TreeEnsemble):
        body = "; ".join(tree_text(t) for t in op.trees)
        head = f"TreeEnsemble({op.aggregate}, {op.task}, post={op.post}, trees={len(op.trees)}"
        return _clip(f"{head}: {body})", op)
    return repr(op)


def _nums(vals):
    return "[" + ", ".join(repr(float(v)) for v in vals) + "]"


def _digest(op):
    return hashlib.sha1(repr(op).encode()).hexdigest()[:12]


def _clip(text, op, limit=240):
    if len(text) <= limit:
        return text
    return text[: limit - 30] + f"... #{_digest(op)})"


def tree_text(t) -> str:
    if isinstance(t, pl.Leaf):
        return repr(float(t.value[0]))
    return f"(F[{t.feature}] {t.cmp} {float(t.threshold)!r} ? {tree_text(t.true)} : {tree_text(t.false)})"


def explain(plan: Plan) -> str:
    """Indented rendering from the root; shared subplans print once."""
    lines = []
    seen = set()

    def walk(nid, depth):
        n = plan.node(nid)
        pad = "  " * depth
        if nid in seen:
            lines.append(f"{pad}{nid} (shared)")
            return
        seen.add(nid)
        lines.append(f"{pad}{nid}: {describe(n.op)}")
        for s in n.inputs:
            walk(s, depth + 1)

    walk(plan.root, 0)
    return "\n".join(lines)


def to_dot(plan: Plan) -> str:
    def q(s):
        return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'

    lines = ["digraph plan {", "  rankdir=BT;"]
    for n in topo_order(plan):
        lines.append(f"  {q(n.id)} [label={q(describe(n.op))}];")
    for n in topo_order(plan):
        for port, s in enumerate(n.inputs):
            lines.append(f"  {q(s)} -> {q(n.id)} [label={q(str(port))}];")
    lines.append("}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# JSON


def plan_to_dict(plan: Plan) -> dict:
    return {
        "format": pl.FORMAT_TAG + "/plan",
        "root": plan.root,
        "nodes": [
            {"id": n.id, "inputs": list(n.inputs), **_op_to_json(n.op)} for n in plan.nodes
        ],
    }


def plan_from_dict(doc) -> Plan:
    if not isinstance(doc, dict) or "nodes" not in doc or "root" not in doc:
        raise SchemaError("plan document needs 'nodes' and 'root'")
    nodes = []
    for d in doc["nodes"]:
        nodes.append(PlanNode(d["id"], _op_from_json(d), tuple(d.get("inputs", ()))))
    return Plan(tuple(nodes), doc["root"])


def _op_to_json(op) -> dict:
    if isinstance(op, Scan):
        return {"op": "Scan", "table": op.table, "alias": op.alias, "columns": [list(c) for c in op.columns]}
    if isinstance(op, Join):
        return {"op": "Join", "left": op.left, "right": op.right}
    if isinstance(op, Filter):
        return {"op": "Filter", "conds": [[c.column, c.op, c.value] for c in op.conds]}
    if isinstance(op, Project):
        d = {"op": "Project", "columns": list(op.columns)}
        if op.names is not None:
            d["names"] = list(op.names)
        return d
    if isinstance(op, ModelInput):
        return {"op": "ModelInput", "name": op.name, "column": op.column}
    if isinstance(op, PredictBoundary):
        return {"op": "PredictBoundary", "outputs": [list(o) for o in op.outputs]}
    if isinstance(op, Count):
        return {"op": "Count"}
    if isinstance(op, EmptyResult):
        return {"op": "EmptyResult", "schema": [list(c) for c in op.schema]}
    if isinstance(op, SqlCompute):
        from .sqlexpr import render

        return {
            "op": "SqlCompute",
            "bindings": [[a, render(e)] for a, e in op.bindings],
            "outputs": [list(o) for o in op.outputs],
            "kinds": list(op.kinds),
        }
    if isinstance(op, TensorModel):
        from .ml2dnn import program_to_dict

        return {"op": "TensorModel", "program": program_to_dict(op.program), "source": pl.op_to_json(op.source)}
    return {"op": "ML", "ml": pl.op_to_json(op)}


def _op_from_json(d):
    kind = d.get("op")
    if kind == "Scan":
        return Scan(d["table"], d["alias"], tuple(tuple(c) for c in d["columns"]))
    if kind == "Join":
        return Join(d["left"], d["right"])
    if kind == "Filter":
        return Filter(tuple(Cond(*c) for c in d["conds"]))
    if kind == "Project":
        names = d.get("names")
        return Project(tuple(d["columns"]), tuple(names) if names is not None else None)
    if kind == "ModelInput":
        return ModelInput(d["name"], d["column"])
    if kind == "PredictBoundary":
        return PredictBoundary(tuple(tuple(o) for o in d["outputs"]))
    if kind == "Count":
        return Count()
    if kind == "EmptyResult":
        return EmptyResult(tuple(tuple(c) for c in d["schema"]))
    if kind == "SqlCompute":
        from .sqlexpr import parse_expr

        return SqlCompute(
            tuple((a, parse_expr(t)) for a, t in d["bindings"]),
            tuple(tuple(o) for o in d["outputs"]),
            tuple(d["kinds"]),
        )
    if kind == "TensorModel":
        from .ml2dnn import program_from_dict

        return TensorModel(program_from_dict(d["program"]), pl.op_from_json(d["source"]))
    if kind == "ML":
        return pl.op_from_json(d["ml"])
    raise SchemaError(f"unknown plan operator {kind!r}")


def save_plan(plan: Plan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=True)


def load_plan(text) -> Plan:
    try:
        return plan_from_dict(json.loads(text))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, (ValidationError, SchemaError)):
            raise
        raise SchemaError(f"malformed plan document: {e}") from None

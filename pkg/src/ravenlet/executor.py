"""Reference in-memory engine and pipeline evaluator.

Everything here is the correctness oracle for the optimizer, so arithmetic
order is fixed and documented:

* Scaler: ``(x - offset) * scale``.
* Normalizer: the norm is accumulated left to right (L1 ``|x0| + |x1| + ...``,
  L2 ``sqrt(x0*x0 + x1*x1 + ...)``, MAX running maximum of ``|x|``); a zero
  norm is replaced by 1.
* LinearModel: ``((w0*x0 + w1*x1) + ...) + b`` over the non-zero weights only.
* TreeEnsemble: leaf values summed left to right starting from tree 0;
  ``average`` divides the sum by the tree count. ``vote`` counts trees whose
  leaf is ``>= 0.5``.
* Logistic post-processing: ``1 / (1 + exp(-raw))``.
* Binary labels: ``classes[1]`` iff ``score >= 0.5`` (vote: iff the class-1
  votes are a strict majority). Regression labels equal the score.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import ir
from . import pipeline as pl
from .errors import CoverageError, CsvError, EvalError, ExecError
from .sqlexpr import And, Cmp, DerivedFrom, Env, Func, Select, TableFrom, evaluate, fmt_number, lit
from .sqlexpr import Col as SqlCol

CHUNK_ROWS = 10_000

# --------------------------------------------------------------------------
# tables


_NP_DTYPES = {"float64": np.float64, "int64": np.int64, "string": object}


@dataclass(frozen=True)
class Table:
    schema: tuple[tuple[str, str], ...]
    columns: dict

    def __post_init__(self):
        n = None
        for name, dtype in self.schema:
            col = self.columns.get(name)
            if col is None:
                raise ExecError(f"table is missing column {name!r}")
            if n is not None and len(col) != n:
                raise ExecError("table columns differ in length")
            n = len(col)

    @property
    def n_rows(self) -> int:
        if not self.schema:
            return 0
        return len(self.columns[self.schema[0][0]])

    @property
    def names(self):
        return [c for c, _ in self.schema]

    def __getitem__(self, name):
        return self.columns[name]

    def rows(self):
        cols = [self.columns[c] for c in self.names]
        return [tuple(_py(c[i]) for c in cols) for i in range(self.n_rows)]

    def take(self, idx) -> "Table":
        return Table(self.schema, {c: self.columns[c][idx] for c in self.names})

    def equals(self, other: "Table") -> bool:
        """Exact equality of schema and values (float ``==``, so 0.0 == -0.0)."""
        if list(self.schema) != list(other.schema) or self.n_rows != other.n_rows:
            return False
        return all(np.array_equal(self.columns[c], other.columns[c]) for c in self.names)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.names)
        for row in self.rows():
            w.writerow([_fmt_cell(v) for v in row])
        return buf.getvalue()


def _py(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def _fmt_cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return fmt_number(v) if np.isfinite(v) else repr(float(v))


def empty_column(dtype):
    return np.empty(0, dtype=_NP_DTYPES[dtype])


def make_table(schema, data: dict) -> Table:
    cols = {}
    for name, dtype in schema:
        cols[name] = np.asarray(data[name], dtype=_NP_DTYPES[dtype])
        if dtype == "string":
            cols[name] = np.array(list(data[name]), dtype=object)
    return Table(tuple((c, t) for c, t in schema), cols)


def load_csv(path, schema) -> Table:
    """Read a headered CSV with the given ``[(name, dtype)]`` schema."""
    schema = [tuple(c) for c in schema]
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise CsvError(f"cannot read {path}: {e.strerror}") from None
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        want = [c for c, _ in schema]
        if header is None:
            raise CsvError(f"{path}: missing header row")
        if [h.strip() for h in header] != want:
            raise CsvError(f"{path}: header {header} does not match schema {want}")
        values = {c: [] for c in want}
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(schema):
                raise CsvError(f"{path}: expected {len(schema)} cells", r, len(row))
            for k, ((name, dtype), cell) in enumerate(zip(schema, row), start=1):
                values[name].append(_parse_cell(cell, dtype, path, r, k))
    return make_table(schema, values)


def _parse_cell(cell, dtype, path, row, col):
    if dtype == "string":
        if cell == "":
            raise CsvError(f"{path}: empty cell (NULL is not supported)", row, col)
        return cell
    text = cell.strip()
    if text == "":
        raise CsvError(f"{path}: empty cell (NULL is not supported)", row, col)
    try:
        return int(text) if dtype == "int64" else float(text)
    except ValueError:
        raise CsvError(f"{path}: cannot parse {cell!r} as {dtype}", row, col) from None


def load_tables(catalog, data_dir) -> dict[str, Table]:
    """Load ``<data_dir>/<table>.csv`` for every catalog table."""
    import os

    out = {}
    for name, t in catalog.tables.items():
        out[name] = load_csv(os.path.join(data_dir, f"{name}.csv"), t.columns)
    return out


# --------------------------------------------------------------------------
# ML operator semantics


def _as_num(col):
    if col.dtype == object:
        raise EvalError("numeric operator received a string column")
    return col.astype(np.float64, copy=False)


def _full(n, v):
    if isinstance(v, str):
        out = np.empty(n, dtype=object)
        out[:] = v
        return out
    return np.full(n, float(v), dtype=np.float64)


def _matches(col, value):
    """Elementwise ``col == value`` that is all-false across type families."""
    if (col.dtype == object) != isinstance(value, str):
        return np.zeros(len(col), dtype=bool)
    if col.dtype == object:
        return np.asarray(col == value, dtype=bool)
    return col == float(value)


def eval_featurizer(op, cols: list, n: int) -> list:
    """Apply a featurizer to its (implicitly concatenated) input columns."""
    if isinstance(op, pl.Constant):
        return [_full(n, v) for v in op.values]
    if isinstance(op, pl.Concat):
        return list(cols)
    if isinstance(op, pl.FeatureExtractor):
        return [cols[i] for i in op.indices]
    if isinstance(op, pl.Scaler):
        return [(_as_num(x) - o) * s for x, o, s in zip(cols, op.offsets, op.scales)]
    if isinstance(op, pl.Normalizer):
        xs = [_as_num(x) for x in cols]
        if op.norm == "L1":
            acc = np.abs(xs[0])
            for x in xs[1:]:
                acc = acc + np.abs(x)
        elif op.norm == "L2":
            acc = xs[0] * xs[0]
            for x in xs[1:]:
                acc = acc + x * x
            acc = np.sqrt(acc)
        else:
            acc = np.abs(xs[0])
            for x in xs[1:]:
                acc = np.maximum(acc, np.abs(x))
        acc = np.where(acc == 0, 1.0, acc)
        return [x / acc for x in xs]
    if isinstance(op, pl.OneHotEncoder):
        out = []
        for x, cats in zip(cols, op.categories):
            for c in cats:
                out.append(_matches(x, c).astype(np.float64))
        return out
    if isinstance(op, pl.LabelEncoder):
        out = []
        for x in cols:
            y = np.full(n, -1.0)
            done = np.zeros(n, dtype=bool)
            for k, v in op.mapping:
                m = _matches(x, k) & ~done
                y[m] = float(v)
                done |= m
            out.append(y)
        return out
    raise EvalError(f"{type(op).__name__} is not a featurizer")


def eval_tree(tree, X: list, n: int) -> np.ndarray:
    """Leaf value reached by each row."""
    out = np.empty(n, dtype=np.float64)
    stack = [(tree, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        if len(idx) == 0:
            continue
        if isinstance(node, pl.Leaf):
            out[idx] = node.value[0]
            continue
        m = pl.compare(node.cmp, X[node.feature][idx], node.threshold)
        stack.append((node.true, idx[m]))
        stack.append((node.false, idx[~m]))
    return out


def sigmoid(raw):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-raw))


def linear_raw(op: pl.LinearModel, X: list, n: int) -> np.ndarray:
    acc = None
    for row, x in zip(op.weights, X):
        w = row[0]
        if w == 0:
            continue
        term = w * _as_num(x)
        acc = term if acc is None else acc + term
    b = op.intercepts[0]
    return np.full(n, float(b)) if acc is None else acc + b


def predict_model(op, X: list, n: int):
    """Return ``(labels, scores)`` for a model node."""
    with np.errstate(over="ignore", invalid="ignore"):
        if isinstance(op, pl.LinearModel):
            score = linear_raw(op, X, n)
            if op.post == "logistic":
                score = sigmoid(score)
            return _labels(op, score), score
        if isinstance(op, pl.TreeEnsemble):
            if op.aggregate == "vote":
                votes = None
                for t in op.trees:
                    v = (eval_tree(t, X, n) >= 0.5).astype(np.float64)
                    votes = v if votes is None else votes + v
                k = float(len(op.trees))
                score = votes / k
                return _pick(op, votes * 2.0 > k), score
            acc = None
            for t in op.trees:
                v = eval_tree(t, X, n)
                acc = v if acc is None else acc + v
            if op.aggregate == "average":
                acc = acc / float(len(op.trees))
            if op.post == "logistic":
                acc = sigmoid(acc)
            return _labels(op, acc), acc
    raise EvalError(f"{type(op).__name__} is not a model")


def _labels(op, score):
    if pl.model_classes(op) is None:
        return score
    return _pick(op, score >= 0.5)


def _pick(op, positive):
    c0, c1 = pl.model_classes(op)
    if isinstance(c0, str):
        out = np.empty(len(positive), dtype=object)
        out[:] = c0
        out[positive] = c1
        return out
    return np.where(positive, float(c1), float(c0))


def evaluate_pipeline(p: pl.ModelPipeline, batch, chunk_rows=CHUNK_ROWS):
    """Run ``p`` over ``batch`` (a Table or a dict of columns keyed by input name)."""
    cols = {}
    for inp in p.inputs:
        try:
            col = batch[inp.name]
        except KeyError:
            raise EvalError(f"batch has no column for pipeline input {inp.name!r}") from None
        col = np.asarray(col)
        if (inp.dtype == "string") != (col.dtype == object):
            raise EvalError(f"input {inp.name!r} expects {inp.dtype}, got {col.dtype}")
        cols[inp.name] = col
    n = len(next(iter(cols.values()))) if cols else 0
    if isinstance(batch, Table):
        n = batch.n_rows
    order = pl.topo_nodes(p)
    model = p.model_node
    labels, scores = [], []
    for start in range(0, max(n, 1), chunk_rows):
        stop = min(start + chunk_rows, n)
        m = stop - start
        vals = {k: [_input_col(v[start:stop])] for k, v in cols.items()}
        for node in order:
            ins = [c for s in node.inputs for c in vals[s]]
            if node.id == model.id:
                lab, sc = predict_model(node.op, ins, m)
                labels.append(lab)
                scores.append(sc)
            else:
                vals[node.id] = eval_featurizer(node.op, ins, m)
    return np.concatenate(labels), np.concatenate(scores)


def _input_col(col):
    return col if col.dtype == object else col.astype(np.float64)


# --------------------------------------------------------------------------
# plan execution


@dataclass
class _Rel:
    """Intermediate relation with hidden per-scan row ids for provenance."""

    schema: list
    cols: dict
    rowids: dict  # alias -> int array
    n: int

    def take(self, idx):
        return _Rel(
            self.schema,
            {c: v[idx] for c, v in self.cols.items()},
            {a: v[idx] for a, v in self.rowids.items()},
            len(idx),
        )


def _scan(op: ir.Scan, tables, restrict=None):
    try:
        t = tables[op.table]
    except KeyError:
        raise ExecError(f"no data for table {op.table!r}") from None
    n = t.n_rows
    ids = np.arange(n)
    if restrict is not None:
        ids = ids[restrict(t)]
    cols = {}
    for c, dtype in op.columns:
        if c not in t.columns:
            raise ExecError(f"table {op.table!r} has no column {c!r}")
        col = t.columns[c]
        if dtype == "string":
            col = np.asarray(col, dtype=object)
        cols[f"{op.alias}.{c}"] = col[ids]
    schema = [(f"{op.alias}.{c}", dtype) for c, dtype in op.columns]
    return _Rel(schema, cols, {op.alias: ids}, len(ids))


def hash_join(left: _Rel, right: _Rel, lkey: str, rkey: str) -> _Rel:
    """Inner equi-join; output follows left row order, then right row order."""
    buckets: dict = {}
    for j, k in enumerate(right.cols[rkey].tolist()):
        buckets.setdefault(k, []).append(j)
    li, ri = [], []
    for i, k in enumerate(left.cols[lkey].tolist()):
        for j in buckets.get(k, ()):
            li.append(i)
            ri.append(j)
    li = np.asarray(li, dtype=np.int64)
    ri = np.asarray(ri, dtype=np.int64)
    a, b = left.take(li), right.take(ri)
    return _Rel(a.schema + b.schema, {**a.cols, **b.cols}, {**a.rowids, **b.rowids}, len(li))


def _cond_mask(rel: _Rel, conds) -> np.ndarray:
    mask = np.ones(rel.n, dtype=bool)
    for c in conds:
        e = Cmp(c.op, SqlCol(None, c.column), lit(c.value))
        mask &= evaluate(e, Env(rel.cols, rel.n))
    return mask


def _eval_ml(plan: ir.Plan, rel: _Rel, model_id: str, chunk_rows):
    """Evaluate the ML segment rooted at ``model_id`` over the rows of ``rel``."""
    order = [n for n in ir.topo_order(plan) if ir.is_ml(n.op) or isinstance(n.op, ir.ModelInput)]
    labels, scores = [], []
    for start in range(0, max(rel.n, 1), chunk_rows):
        stop = min(start + chunk_rows, rel.n)
        m = stop - start
        vals = {}
        for node in order:
            op = node.op
            if isinstance(op, ir.ModelInput):
                vals[node.id] = [_input_col(rel.cols[op.column][start:stop])]
                continue
            ins = [c for s in node.inputs for c in vals[s]]
            if node.id == model_id:
                if isinstance(op, ir.TensorModel):
                    from .ml2dnn import run_program

                    X = np.column_stack(ins) if ins else np.zeros((m, 0))
                    lab, sc = run_program(op.program, X)
                    lab = _relabel(op.source, lab)
                else:
                    lab, sc = predict_model(op, ins, m)
                labels.append(lab)
                scores.append(sc)
            elif not ir.is_model_op(op):
                vals[node.id] = eval_featurizer(op, ins, m)
    return np.concatenate(labels), np.concatenate(scores)


def _relabel(model, lab):
    """Map 0/1 program labels onto the model's class values."""
    if pl.model_classes(model) is None:
        return lab
    return _pick(model, lab == 1.0)


def _sql_compute(op: ir.SqlCompute, rel: _Rel, chunk_rows):
    outs = {name: [] for name, _ in op.outputs}
    for start in range(0, max(rel.n, 1), chunk_rows):
        stop = min(start + chunk_rows, rel.n)
        env = Env({c: v[start:stop] for c, v in rel.cols.items()}, stop - start)
        for alias, e in op.bindings:
            env.columns[alias] = evaluate(e, env)
        for name, alias in op.outputs:
            outs[name].append(env.columns[alias])
    return {k: np.concatenate(v) for k, v in outs.items()}


def _exec(plan: ir.Plan, tables, chunk_rows=CHUNK_ROWS, restrict=None) -> _Rel:
    results: dict = {}
    for node in ir.topo_order(plan):
        op = node.op
        if ir.is_ml(op) or isinstance(op, ir.ModelInput):
            continue  # evaluated on demand by the PredictBoundary
        try:
            ins = [results[s] for s in node.inputs if s in results]
            if isinstance(op, ir.Scan):
                r = None if restrict is None else restrict.get(op.alias)
                results[node.id] = _scan(op, tables, r)
            elif isinstance(op, ir.Join):
                results[node.id] = hash_join(ins[0], ins[1], op.left, op.right)
            elif isinstance(op, ir.Filter):
                results[node.id] = ins[0].take(np.flatnonzero(_cond_mask(ins[0], op.conds)))
            elif isinstance(op, ir.Project):
                child = ins[0]
                schema = plan.schema(node.id)
                cols = {new: child.cols[old] for old, new in zip(op.columns, op.out_names)}
                results[node.id] = _Rel(list(schema), cols, child.rowids, child.n)
            elif isinstance(op, ir.PredictBoundary):
                rel = ins[0]
                lab, sc = _eval_ml(plan, rel, node.inputs[1], chunk_rows)
                cols = dict(rel.cols)
                for name, port in op.outputs:
                    cols[name] = lab if port == "label" else sc
                results[node.id] = _Rel(list(plan.schema(node.id)), cols, rel.rowids, rel.n)
            elif isinstance(op, ir.SqlCompute):
                rel = ins[0]
                cols = dict(rel.cols)
                cols.update(_sql_compute(op, rel, chunk_rows))
                results[node.id] = _Rel(list(plan.schema(node.id)), cols, rel.rowids, rel.n)
            elif isinstance(op, ir.Count):
                results[node.id] = _Rel(
                    [("count", "int64")], {"count": np.array([ins[0].n], dtype=np.int64)}, {}, 1
                )
            elif isinstance(op, ir.EmptyResult):
                cols = {c: empty_column(t) for c, t in op.schema}
                results[node.id] = _Rel(list(op.schema), cols, {}, 0)
            else:
                raise ExecError(f"cannot execute {type(op).__name__}")
        except (ExecError, EvalError) as e:
            if isinstance(e, ExecError) and e.node_id is not None:
                raise
            raise ExecError(str(e), node.id) from e
    return results[plan.root]


def _to_table(rel: _Rel) -> Table:
    cols = {}
    for c, t in rel.schema:
        v = rel.cols[c]
        if t == "int64":
            v = np.asarray(v, dtype=np.int64)
        elif t == "float64":
            v = np.asarray(v, dtype=np.float64)
        cols[c] = v
    return Table(tuple(rel.schema), cols)


def execute_plan(plan: ir.Plan, tables, chunk_rows=CHUNK_ROWS) -> Table:
    """Evaluate ``plan`` over ``tables`` (table name -> Table)."""
    return _to_table(_exec(plan, tables, chunk_rows))


# --------------------------------------------------------------------------
# partitioned execution


@dataclass(frozen=True)
class Selector:
    """Closed range ``lo <= alias.column <= hi`` on a partition column."""

    alias: str
    column: str
    lo: float
    hi: float
    partition_id: object = None

    def mask(self, values):
        v = np.asarray(values, dtype=np.float64)
        return (v >= self.lo) & (v <= self.hi)


def run_partitioned(plans, tables, chunk_rows=CHUNK_ROWS) -> Table:
    """Execute one specialized plan per selector and merge in base-row order.

    ``plans`` is a list of ``(Selector | None, Plan)``; ``None`` means the
    plan covers every row. The merged result equals the unpartitioned run.
    """
    if not plans:
        raise CoverageError("no partition plans given")
    if len(plans) == 1 and plans[0][0] is None:
        return execute_plan(plans[0][1], tables, chunk_rows)
    sels = [s for s, _ in plans]
    if any(s is None for s in sels):
        raise CoverageError("a catch-all plan cannot be mixed with partition selectors")
    key = {(s.alias, s.column) for s in sels}
    if len(key) != 1:
        raise CoverageError("partition selectors must share one column")
    alias, column = key.pop()
    table_name = _alias_table(plans[0][1], alias)
    values = tables[table_name][column]
    hits = np.zeros(len(values), dtype=np.int64)
    for s in sels:
        hits += s.mask(values)
    if np.any(hits == 0):
        row = int(np.flatnonzero(hits == 0)[0])
        raise CoverageError(f"row {row} of {table_name}.{column} = {values[row]!r} matches no partition")
    if np.any(hits > 1):
        row = int(np.flatnonzero(hits > 1)[0])
        raise CoverageError(f"row {row} of {table_name}.{column} matches several partitions")

    counting = isinstance(plans[0][1].node(plans[0][1].root).op, ir.Count)
    parts = []
    for sel, plan in plans:
        if counting:
            plan = ir.make_plan(plan.nodes, plan.node(plan.root).inputs[0])
        restrict = {alias: (lambda t, s=sel: s.mask(t[s.column]))}
        parts.append(_exec(plan, tables, chunk_rows, restrict))
    if counting:
        total = sum(p.n for p in parts)
        return Table((("count", "int64"),), {"count": np.array([total], dtype=np.int64)})

    first = parts[0]
    # an EmptyResult partition carries no row ids; it contributes nothing
    parts = [p for p in parts if p.n > 0] or [first]
    aliases = list(parts[0].rowids)
    for p in parts:
        if [c for c, _ in p.schema] != [c for c, _ in first.schema]:
            raise ExecError("partition plans produce different schemas")
    cols = {c: _concat([p.cols[c] for p in parts]) for c, _ in first.schema}
    ids = {a: np.concatenate([p.rowids[a] for p in parts]) for a in aliases}
    if aliases:
        order = np.lexsort([ids[a] for a in reversed(aliases)])
    else:
        order = np.arange(sum(p.n for p in parts))
    merged = _Rel(first.schema, {c: v[order] for c, v in cols.items()}, {}, len(order))
    return _to_table(merged)


def _concat(arrays):
    if any(a.dtype == object for a in arrays):
        return np.concatenate([a.astype(object) for a in arrays])
    return np.concatenate(arrays)


def _alias_table(plan, alias):
    for n in plan.find(ir.Scan):
        if n.op.alias == alias:
            return n.op.table
    raise CoverageError(f"no scan with alias {alias!r}")


# --------------------------------------------------------------------------
# SQL statements


def execute_sql(text_or_stmt, tables, chunk_rows=CHUNK_ROWS) -> Table:
    """Run a compiled statement in the neutral dialect over ``tables``."""
    from .sqlexpr import parse_statement

    stmt = parse_statement(text_or_stmt) if isinstance(text_or_stmt, str) else text_or_stmt
    schema, cols, n = _run_select(stmt, tables, chunk_rows)
    data = {}
    out_schema = []
    for name in schema:
        v = cols[name]
        if v.dtype == object:
            dtype = "string"
        elif v.dtype.kind in "iu":
            dtype = "int64"
        else:
            dtype = "float64"
        out_schema.append((name, dtype))
        data[name] = v
    return Table(tuple(out_schema), data)


def _run_select(stmt: Select, tables, chunk_rows):
    src = stmt.source
    if isinstance(src, DerivedFrom):
        names, cols, n = _run_select(src.query, tables, chunk_rows)
        rel = {f"{src.alias}.{c}": cols[c] for c in names}
    else:
        rel, n = _run_from(src, tables)
    if stmt.where is not None:
        keep = np.flatnonzero(evaluate(stmt.where, Env(rel, n)))
        rel = {c: v[keep] for c, v in rel.items()}
        n = len(keep)

    if len(stmt.items) == 1 and isinstance(stmt.items[0][0], Func) and stmt.items[0][0].name == "COUNT":
        alias = stmt.items[0][1]
        return [alias], {alias: np.array([n], dtype=np.int64)}, 1

    names = [alias for _, alias in stmt.items]
    out = {a: [] for a in names}
    for start in range(0, max(n, 1), chunk_rows):
        stop = min(start + chunk_rows, n)
        env = Env({c: v[start:stop] for c, v in rel.items()}, stop - start)
        for e, alias in stmt.items:
            v = evaluate(e, env)
            env.columns[alias] = v
            out[alias].append(v)
    return names, {a: _concat(v) for a, v in out.items()}, n


def _run_from(src: TableFrom, tables):
    rels = []
    for t, alias in src.tables:
        try:
            table = tables[t]
        except KeyError:
            raise ExecError(f"no data for table {t!r}") from None
        cols = {f"{alias}.{c}": table.columns[c] for c in table.names}
        schema = [(f"{alias}.{c}", d) for c, d in table.schema]
        rels.append(_Rel(schema, cols, {alias: np.arange(table.n_rows)}, table.n_rows))
    cur = rels[0]
    for rel, (l, r) in zip(rels[1:], src.joins):
        lk, rk = _key(l), _key(r)
        if lk in rel.cols:
            lk, rk = rk, lk
        cur = hash_join(cur, rel, lk, rk)
    return cur.cols, cur.n


def _key(c):
    if not isinstance(c, SqlCol):
        raise ExecError("join keys must be column references")
    return c.name if c.table is None else f"{c.table}.{c.name}"


def where_clause(conds) -> And | Cmp | None:
    terms = tuple(Cmp(c.op, _col_expr(c.column), lit(c.value)) for c in conds)
    if not terms:
        return None
    return terms[0] if len(terms) == 1 else And(terms)


def _col_expr(name):
    table, _, col = name.partition(".")
    return SqlCol(table, col) if col else SqlCol(None, table)

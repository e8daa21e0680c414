"""Random prediction queries for equivalence testing.

Each case bundles a pipeline, a catalog, a query over 1-3 joined tables, the
table data and matching column statistics. Thresholds and predicate literals
are drawn from the data itself so that ties, equality tests and boundary
values actually occur.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pipeline as pl
from .executor import Table, eval_featurizer, make_table
from .frontend import Catalog, TableSchema, parse_query
from .optimizer.data_induced import ColumnStats, PartitionStats

CMPS = ("<", "<=", ">", ">=", "==")
PRED_OPS = ("=", "<>", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class SynthConfig:
    n_rows: int = 1000
    n_tables: tuple = (1, 3)
    n_numeric: tuple = (1, 6)
    n_categorical: tuple = (0, 3)
    tree_depth: tuple = (1, 12)
    n_trees: tuple = (1, 50)
    max_internal: int = 40  # per tree, keeps tensor programs small
    zero_fraction: tuple = (0.1, 0.9)
    ohe_cardinality: tuple = (2, 20)
    model: str | None = None  # "tree", "linear" or None for either
    unused_fraction: float | None = None
    normalizer: bool = True
    predicates: bool = True
    partitions: bool = True
    passthrough: bool = True  # also select some raw input columns


@dataclass
class SynthCase:
    seed: int
    pipeline: pl.ModelPipeline
    catalog: Catalog
    query: str
    tables: dict
    stats: dict
    forced_unused: tuple = ()
    input_columns: dict = field(default_factory=dict)  # pipeline input -> "alias.column"

    def ast(self):
        return parse_query(self.query, self.catalog)

    def plan(self):
        from .ir import build_ir

        return build_ir(self.ast(), self.pipeline, self.catalog)

    def unused_inputs(self) -> set:
        """Pipeline inputs no model feature depends on."""
        p = self.pipeline
        deps = _provenance(p)
        m = p.model_node
        slots = [d for s in m.inputs for d in deps[s]]
        used = set()
        for j in _model_features(m.op):
            used |= slots[j]
        return {i.name for i in p.inputs} - used


def _rint(rng, lo_hi):
    lo, hi = lo_hi
    return int(rng.integers(lo, hi + 1))


def _model_features(op):
    if isinstance(op, pl.TreeEnsemble):
        out = set()
        for t in op.trees:
            out |= pl.tree_features(t)
        return out
    return {j for j, row in enumerate(op.weights) if row[0] != 0}


def _provenance(p: pl.ModelPipeline) -> dict:
    """Per node, one set of pipeline-input names per output slot."""
    deps = {i.name: [{i.name}] for i in p.inputs}
    for n in pl.topo_nodes(p):
        ins = [d for s in n.inputs for d in deps[s]]
        op = n.op
        if pl.is_model(op):
            continue
        if isinstance(op, pl.OneHotEncoder):
            out = []
            for d, cats in zip(ins, op.categories):
                out.extend([d] * len(cats))
        elif isinstance(op, pl.FeatureExtractor):
            out = [ins[i] for i in op.indices]
        elif isinstance(op, pl.Constant):
            out = [set() for _ in op.values]
        elif isinstance(op, pl.Normalizer):
            every = set().union(*ins) if ins else set()
            out = [every for _ in ins]
        else:
            out = list(ins)
        deps[n.id] = out
    return deps


def _features(nodes, inputs, cols, n):
    """Evaluate featurizers in order; returns slot arrays per node."""
    vals = {name: [c if c.dtype == object else c.astype(np.float64)] for name, c in cols.items()}
    for node in nodes:
        ins = [c for s in node.inputs for c in vals[s]]
        vals[node.id] = eval_featurizer(node.op, ins, n)
    return vals


def _numeric_column(rng, n):
    kind = rng.integers(3)
    if kind == 0:
        return rng.integers(0, 40, n) / 2.0  # half steps: plenty of ties
    if kind == 1:
        return np.round(rng.normal(50, 15, n), 1)
    return rng.integers(-5, 6, n).astype(np.float64)


def _categorical_column(rng, n, card, dtype):
    values = [f"v{k}" for k in range(card + 1)] if dtype == "string" else list(range(card + 1))
    idx = rng.integers(0, card + 1, n)  # one value beyond the encoded categories
    if dtype == "string":
        return np.array([values[i] for i in idx], dtype=object), values
    return np.asarray(idx, dtype=np.int64), values


def _tree(rng, feats, X, depth, budget, leaf):
    """Random tree reaching exactly ``depth`` along one forced path."""
    count = [0]

    def grow(d, forced):
        if d == 0 or (not forced and (count[0] >= budget or rng.random() < 0.45)):
            return pl.Leaf((leaf(),))
        count[0] += 1
        f = int(rng.choice(feats))
        col = X[f]
        thr = float(col[rng.integers(len(col))])
        cmp = str(rng.choice(CMPS))
        go_true = bool(rng.random() < 0.5)
        t = grow(d - 1, forced and go_true)
        e = grow(d - 1, forced and not go_true)
        return pl.Internal(f, cmp, thr, t, e)

    return grow(depth, True)


def _tree_model(rng, cfg, feats, X):
    aggregate = str(rng.choice(["sum", "average", "vote"]))
    task = "binary_classification"
    post = "none"
    if aggregate != "vote" and rng.random() < 0.25:
        task = "regression"
    elif aggregate != "vote" and rng.random() < 0.3:
        post = "logistic"
    if task == "regression":
        def leaf():
            return float(np.round(rng.uniform(-10, 10), 3))
    elif post == "logistic":
        def leaf():
            return float(np.round(rng.uniform(-2, 2), 3))
    else:
        def leaf():
            return float(rng.integers(0, 2)) if rng.random() < 0.5 else float(np.round(rng.uniform(0, 1), 2))
    n_trees = _rint(rng, cfg.n_trees)
    max_depth = _rint(rng, cfg.tree_depth)
    trees = []
    for k in range(n_trees):
        d = max_depth if k == 0 else _rint(rng, (cfg.tree_depth[0], max_depth))
        trees.append(_tree(rng, feats, X, d, cfg.max_internal, leaf))
    classes = None if task == "regression" else _classes(rng)
    return pl.TreeEnsemble(tuple(trees), aggregate, task, post, classes)


def _classes(rng):
    r = rng.random()
    if r < 0.4:
        return None
    if r < 0.7:
        return ("no", "yes")
    return (3, 7)


def _linear_model(rng, cfg, feats, width):
    # exactly round(z * width) zero weights, at least one and at most width - 1
    z = rng.uniform(*cfg.zero_fraction)
    k = min(max(int(round(z * width)), 1), width - 1) if width > 1 else 0
    zero = set(range(width)) - set(feats)
    free = [j for j in feats if j not in zero]
    if len(zero) < k and len(free) > 1:
        extra = min(k - len(zero), len(free) - 1)
        zero |= {int(j) for j in rng.choice(free, size=extra, replace=False)}
    weights = []
    for j in range(width):
        if j in zero:
            weights.append((0.0,))
        else:
            weights.append((float(np.round(rng.normal(0, 1), 4)) or 0.5,))
    if all(w[0] == 0 for w in weights) and feats:
        weights[int(rng.choice(feats))] = (1.0,)
    b = float(np.round(rng.normal(0, 1), 4))
    if rng.random() < 0.6:
        return pl.LinearModel(tuple(weights), (b,), "logistic", _classes(rng))
    return pl.LinearModel(tuple(weights), (b,), "none", None)


def make_case(seed: int, cfg: SynthConfig = SynthConfig()) -> SynthCase:
    rng = np.random.default_rng(seed)
    n = cfg.n_rows
    n_num = _rint(rng, cfg.n_numeric)
    n_cat = _rint(rng, cfg.n_categorical)

    # inputs and data ---------------------------------------------------------
    inputs, cols, cat_values = [], {}, {}
    for k in range(n_num):
        name = f"x{k}"
        inputs.append(pl.PipelineInput(name, "float64"))
        cols[name] = _numeric_column(rng, n)
    for k in range(n_cat):
        name = f"c{k}"
        dtype = "string" if rng.random() < 0.6 else "int64"
        inputs.append(pl.PipelineInput(name, dtype))
        card = _rint(rng, cfg.ohe_cardinality)
        cols[name], cat_values[name] = _categorical_column(rng, n, card, dtype)
    names = [i.name for i in inputs]

    forced = ()
    if cfg.unused_fraction is not None:
        k = min(int(round(cfg.unused_fraction * len(names))), len(names) - 1)
        forced = tuple(sorted(rng.choice(names, size=k, replace=False).tolist())) if k else ()

    # featurizers -------------------------------------------------------------
    nodes = []
    parts = []  # concat inputs, in order
    num_names = names[:n_num]
    if num_names:
        if rng.random() < 0.5:
            offs = tuple(float(np.round(rng.uniform(-5, 5), 2)) for _ in num_names)
            scales = tuple(float(np.round(rng.choice([-1, 1]) * rng.uniform(0.1, 3), 3)) for _ in num_names)
            nodes.append(pl.PipelineNode("scale", pl.Scaler(offs, scales), tuple(num_names)))
            scaled = ["scale"]
        else:
            scaled = []
            for nm in num_names:
                if rng.random() < 0.2:
                    scaled.append(nm)  # raw input straight into the concat
                    continue
                o = float(np.round(rng.uniform(-5, 5), 2))
                s = float(np.round(rng.choice([-1, 1]) * rng.uniform(0.1, 3), 3))
                nodes.append(pl.PipelineNode(f"scale_{nm}", pl.Scaler((o,), (s,)), (nm,)))
                scaled.append(f"scale_{nm}")
        use_norm = (cfg.normalizer and cfg.unused_fraction is None and len(num_names) >= 2
                    and rng.random() < 0.15 and all(s.startswith("scale") for s in scaled))
        if use_norm:
            norm = str(rng.choice(pl.NORMS))
            nodes.append(pl.PipelineNode("norm", pl.Normalizer(norm), tuple(scaled)))
            parts.append("norm")
        else:
            parts.extend(scaled)
    for nm in names[n_num:]:
        vals = cat_values[nm][:-1]  # the last value stays unseen by the encoder
        if rng.random() < 0.25:
            codes = rng.permutation(len(vals))
            mapping = tuple((v, int(c)) for v, c in zip(vals, codes))
            nodes.append(pl.PipelineNode(f"le_{nm}", pl.LabelEncoder(mapping), (nm,)))
            parts.append(f"le_{nm}")
        else:
            nodes.append(pl.PipelineNode(f"ohe_{nm}", pl.OneHotEncoder((tuple(vals),)), (nm,)))
            parts.append(f"ohe_{nm}")
    nodes.append(pl.PipelineNode("concat", pl.Concat(len(parts)), tuple(parts)))

    vals = _features(nodes, inputs, cols, n)
    X = vals["concat"]
    width = len(X)

    deps = _provenance(pl.ModelPipeline("draft", tuple(inputs), tuple(nodes), ()))["concat"]
    feats = [j for j in range(width) if not (deps[j] & set(forced))]

    kind = cfg.model or ("tree" if rng.random() < 0.65 else "linear")
    if kind == "tree":
        model = _tree_model(rng, cfg, feats, X)
    else:
        model = _linear_model(rng, cfg, feats, width)
    nodes.append(pl.PipelineNode("model", model, ("concat",)))
    outputs = (pl.PipelineOutput("label", "model", "label"), pl.PipelineOutput("score", "model", "score"))
    pipe = pl.check(pl.ModelPipeline(f"synth_{seed}", tuple(inputs), tuple(nodes), outputs))

    # tables ------------------------------------------------------------------
    n_tables = min(_rint(rng, cfg.n_tables), max(len(names), 1))
    owner = {nm: int(rng.integers(n_tables)) for nm in names}
    owner[names[0]] = 0
    aliases = ["a", "b", "c"][:n_tables]
    table_names = [f"t{i}" for i in range(n_tables)]
    ids = np.arange(1, n + 1, dtype=np.int64)
    schemas, tables, col_of = {}, {}, {}
    for i, t in enumerate(table_names):
        mine = [nm for nm in names if owner[nm] == i]
        keep = np.ones(n, dtype=bool) if i == 0 else rng.random(n) > 0.05
        order = rng.permutation(np.flatnonzero(keep))
        schema = [("id", "int64")] + [(nm, dict((x.name, x.dtype) for x in inputs)[nm]) for nm in mine]
        data = {"id": ids[order]}
        for nm in mine:
            data[nm] = cols[nm][order]
            col_of[nm] = f"{aliases[i]}.{nm}"
        part = None
        if i == 0 and cfg.partitions and num_names and owner[num_names[0]] == 0:
            part = num_names[0]
        schemas[t] = TableSchema(t, tuple(schema), part)
        tables[t] = make_table(schema, data)
    catalog = Catalog(schemas)

    # query -------------------------------------------------------------------
    label_type = "VARCHAR" if isinstance((pl.model_classes(model) or (0,))[0], str) else "FLOAT"
    src = f"{table_names[0]} AS a"
    for i in range(1, n_tables):
        left = "a" if i == 1 or rng.random() < 0.5 else aliases[i - 1]
        src += f" JOIN {table_names[i]} AS {aliases[i]} ON {left}.id = {aliases[i]}.id"
    preds = []
    if cfg.predicates:
        for _ in range(int(rng.integers(0, 4))):
            nm = str(rng.choice(names))
            col = cols[nm]
            v = col[rng.integers(n)]
            if col.dtype == object:
                op = str(rng.choice(["=", "<>"]))
                preds.append(f"{col_of[nm]} {op} '{v}'")
            else:
                op = str(rng.choice(PRED_OPS))
                preds.append(f"{col_of[nm]} {op} {_lit(v)}")
        if rng.random() < 0.3:
            if pl.model_classes(model) is not None and rng.random() < 0.5:
                c = pl.model_classes(model)[int(rng.integers(2))]
                preds.append(f"p.label = {_quote(c)}")
            else:
                preds.append(f"p.score {rng.choice(['>', '<=', '>='])} {_lit(float(np.round(rng.uniform(-1, 1), 2)))}")
    extra = [col_of[nm] for nm in names if rng.random() < 0.2]
    if not cfg.passthrough:
        extra = []
    select = ", ".join(["a.id"] + extra + ["p.label", "p.score"])
    if rng.random() < 0.08:
        select = "COUNT(*)"
    query = (f"SELECT {select} FROM PREDICT(MODEL = model.json, DATA = {src}) "
             f"WITH (label {label_type}, score FLOAT) AS p")
    if preds:
        query += " WHERE " + " AND ".join(preds)

    stats = table_stats(tables, catalog)
    return SynthCase(seed, pipe, catalog, query, tables, stats, forced, col_of)


def _lit(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def _quote(v):
    return f"'{v}'" if isinstance(v, str) else _lit(v)


def table_stats(tables: dict, catalog: Catalog, n_partitions=None, rng=None) -> dict:
    """Exact min/max statistics; partitions on each catalog partition column."""
    out = {}
    for t, table in tables.items():
        part_col = catalog.tables[t].partition_column
        for c, dtype in table.schema:
            if dtype == "string" or table.n_rows == 0:
                continue
            v = np.asarray(table[c], dtype=np.float64)
            parts = ()
            if c == part_col:
                parts = value_partitions(v, n_partitions or 3)
            out[(t, c)] = ColumnStats(t, c, float(v.min()), float(v.max()), 0, parts)
    return out


def value_partitions(values, k) -> tuple:
    """Split the distinct values into ``k`` contiguous, disjoint ranges."""
    distinct = np.unique(values)
    groups = [g for g in np.array_split(distinct, min(k, len(distinct))) if len(g)]
    parts = []
    for pid, g in enumerate(groups):
        lo, hi = float(g[0]), float(g[-1])
        rows = int(np.count_nonzero((values >= lo) & (values <= hi)))
        parts.append(PartitionStats(pid, lo, hi, rows))
    return tuple(parts)


# --------------------------------------------------------------------------
# a skewed six-valued partition column


RCOUNT_SHARES = (0.5459, 0.1546, 0.1002, 0.0808, 0.0699, 0.0486)


def rcount_case(seed: int = 0, n_rows: int = 2000) -> SynthCase:
    """One table partitioned on a 0..5 count column with a skewed histogram.

    The tree tests ``rcount`` near the root, so each partition specializes
    the model differently.
    """
    rng = np.random.default_rng(seed)
    rcount = rng.choice(6, size=n_rows, p=np.asarray(RCOUNT_SHARES) / sum(RCOUNT_SHARES)).astype(np.int64)
    price = np.round(rng.uniform(10, 500, n_rows), 1)
    stars = rng.integers(1, 6, n_rows).astype(np.float64)
    brand = np.array([f"b{k}" for k in rng.integers(0, 5, n_rows)], dtype=object)
    inputs = (
        pl.PipelineInput("rcount", "int64"),
        pl.PipelineInput("price", "float64"),
        pl.PipelineInput("stars", "float64"),
        pl.PipelineInput("brand", "string"),
    )
    L = pl.Leaf
    tree = pl.Internal(
        0, "<=", 1.0,
        pl.Internal(0, "==", 0.0,
                    pl.Internal(1, ">", 200.0, L((0.9,)), L((0.2,))),
                    pl.Internal(3, "==", 1.0, L((0.7,)), L((0.4,)))),
        pl.Internal(0, "<", 4.0,
                    pl.Internal(2, ">=", 4.0,
                                pl.Internal(0, "==", 2.0, L((0.8,)), L((0.6,))),
                                pl.Internal(1, "<=", 50.0, L((0.3,)), L((0.1,)))),
                    pl.Internal(4, "==", 1.0, L((0.55,)), pl.Internal(1, ">", 300.0, L((0.95,)), L((0.05,))))),
    )
    second = pl.Internal(2, ">", 2.0, pl.Internal(0, ">=", 3.0, L((0.2,)), L((-0.1,))), L((0.0,)))
    nodes = (
        pl.PipelineNode("scale", pl.Scaler((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), ("rcount", "price", "stars")),
        pl.PipelineNode("ohe", pl.OneHotEncoder((("b0", "b1"),)), ("brand",)),
        pl.PipelineNode("concat", pl.Concat(2), ("scale", "ohe")),
        pl.PipelineNode("model", pl.TreeEnsemble((tree, second), "sum"), ("concat",)),
    )
    outputs = (pl.PipelineOutput("label", "model", "label"), pl.PipelineOutput("score", "model", "score"))
    pipe = pl.check(pl.ModelPipeline("rcount", inputs, nodes, outputs))
    schema = [("id", "int64"), ("rcount", "int64"), ("price", "float64"), ("stars", "float64"), ("brand", "string")]
    order = rng.permutation(n_rows)
    data = {"id": np.arange(1, n_rows + 1, dtype=np.int64)[order], "rcount": rcount[order],
            "price": price[order], "stars": stars[order], "brand": brand[order]}
    tables = {"listings": make_table(schema, data)}
    catalog = Catalog({"listings": TableSchema("listings", tuple(schema), "rcount")})
    query = ("SELECT l.id, p.label, p.score FROM PREDICT(MODEL = model.json, DATA = listings AS l) "
             "WITH (label FLOAT, score FLOAT) AS p")
    stats = table_stats(tables, catalog, n_partitions=6)
    cols = {nm: f"l.{nm}" for nm in ("rcount", "price", "stars", "brand")}
    return SynthCase(seed, pipe, catalog, query, tables, stats, (), cols)


def corpus(n: int, cfg: SynthConfig = SynthConfig(), start: int = 0):
    for seed in range(start, start + n):
        yield make_case(seed, cfg)


def equal_tables(a: Table, b: Table) -> bool:
    return a.equals(b)

"""Prediction-query dialect: catalog, AST, recursive-descent parser.

Accepted shape (full grammar in ``docs/grammar.md``)::

    SELECT items FROM t [AS a] [INNER] JOIN u [AS b] ON a.x = b.y ...
    WHERE conjunct AND conjunct ...

with exactly one PREDICT, either in the select list (UDF form)::

    SELECT PREDICT(model.json, *) AS risk FROM ...

or as the table source (TVF form)::

    SELECT d.*, p.score FROM PREDICT(MODEL = m.json, DATA = t AS d) WITH (score FLOAT) AS p
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Union

from .errors import ParseError, ResolutionError, SchemaError, UnsupportedError
from .lexer import Token, TokenStream
from .pipeline import DTYPES

# --------------------------------------------------------------------------
# catalog


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: tuple[tuple[str, str], ...]
    partition_column: str | None = None

    def dtype(self, column):
        for c, t in self.columns:
            if c == column:
                return t
        return None

    @property
    def column_names(self):
        return [c for c, _ in self.columns]


@dataclass(frozen=True)
class Catalog:
    tables: dict[str, TableSchema]

    def __getitem__(self, name) -> TableSchema:
        return self.tables[name]

    def __contains__(self, name):
        return name in self.tables

    @classmethod
    def from_dict(cls, doc) -> "Catalog":
        if not isinstance(doc, dict):
            raise SchemaError("catalog must be a JSON object")
        tables = {}
        for name, spec in doc.items():
            part = None
            if isinstance(spec, dict):
                part = spec.get("partition_column")
                spec = spec.get("columns")
            if not isinstance(spec, list):
                raise SchemaError(f"table {name!r}: columns must be a list")
            cols = []
            for c in spec:
                if isinstance(c, dict):
                    c = (c.get("name"), c.get("dtype"))
                if len(c) != 2 or c[1] not in DTYPES:
                    raise SchemaError(f"table {name!r}: bad column spec {c!r}")
                cols.append((str(c[0]), str(c[1])))
            if part is not None and part not in [c for c, _ in cols]:
                raise SchemaError(f"table {name!r}: unknown partition column {part!r}")
            tables[name] = TableSchema(name, tuple(cols), part)
        return cls(tables)

    def to_dict(self):
        out = {}
        for t in self.tables.values():
            d = {"columns": [list(c) for c in t.columns]}
            if t.partition_column:
                d["partition_column"] = t.partition_column
            out[t.name] = d
        return out


def load_catalog(path) -> Catalog:
    with open(path, encoding="utf-8") as f:
        try:
            return Catalog.from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise SchemaError(f"catalog {path}: invalid JSON: {e}") from None


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class ColumnRef:
    table: str  # alias
    column: str

    @property
    def name(self):
        return f"{self.table}.{self.column}"

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class OutputRef:
    """Reference to a PREDICT output binding, e.g. ``p.score`` or ``risk``."""

    name: str

    def __str__(self):
        return self.name


Ref = Union[ColumnRef, OutputRef]


@dataclass(frozen=True)
class Source:
    table: str
    alias: str


@dataclass(frozen=True)
class JoinCond:
    left: ColumnRef
    right: ColumnRef
    kind: str = "INNER"


@dataclass(frozen=True)
class Predicate:
    target: Ref
    op: str  # one of = < <= > >= <>
    value: Union[float, int, str]
    pos: tuple[int, int] | None = field(default=None, compare=False)

    def __str__(self):
        v = f"'{self.value}'" if isinstance(self.value, str) else repr(self.value)
        return f"{self.target} {self.op} {v}"


@dataclass(frozen=True)
class OutputBinding:
    qualifier: str | None
    name: str
    key: str  # pipeline output port: "label" or "score"
    dtype: str | None = None

    @property
    def full_name(self):
        return f"{self.qualifier}.{self.name}" if self.qualifier else self.name


@dataclass(frozen=True)
class PredictCall:
    model_path: str
    inputs: Union[str, tuple[ColumnRef, ...]]  # "*" or explicit columns
    outputs: tuple[OutputBinding, ...]
    form: str  # "udf" or "tvf"
    pos: tuple[int, int] | None = field(default=None, compare=False)

    def binding(self, name) -> OutputBinding | None:
        for b in self.outputs:
            if b.full_name == name:
                return b
        return None


@dataclass(frozen=True)
class Projection:
    ref: Ref
    name: str


@dataclass(frozen=True)
class QueryAst:
    projections: tuple[Projection, ...]
    sources: tuple[Source, ...]
    joins: tuple[JoinCond, ...]
    predicates: tuple[Predicate, ...]
    predict: PredictCall
    count: bool = False

    def alias_table(self, alias) -> str:
        for s in self.sources:
            if s.alias == alias:
                return s.table
        raise KeyError(alias)


_TYPE_NAMES = {
    "FLOAT": "float64", "DOUBLE": "float64", "REAL": "float64", "FLOAT64": "float64",
    "DECIMAL": "float64", "NUMERIC": "float64",
    "INT": "int64", "INTEGER": "int64", "BIGINT": "int64", "INT64": "int64", "SMALLINT": "int64",
    "VARCHAR": "string", "NVARCHAR": "string", "STRING": "string", "TEXT": "string", "CHAR": "string",
}

_FLIP = {"=": "=", "<>": "<>", "<": ">", ">": "<", "<=": ">=", ">=": "<="}


# --------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text, catalog: Catalog):
        self.ts = TokenStream(text)
        self.catalog = catalog
        self.sources: list[Source] = []
        self.joins: list[JoinCond] = []
        self.predict: PredictCall | None = None
        self.tvf_alias = None

    # helpers -------------------------------------------------------------

    def pos(self, tok: Token):
        return (tok.line, tok.col)

    def unsupported(self, what, tok=None):
        tok = tok or self.ts.cur
        return UnsupportedError(f"{what} not supported (line {tok.line}, column {tok.col})")

    def alias_name(self):
        ts = self.ts
        if ts.cur.is_kw("PREDICT"):
            return ts.advance().value.lower()
        return ts.expect_ident("alias").value

    def set_predict(self, call, tok):
        if self.predict is not None:
            raise self.unsupported("more than one PREDICT", tok)
        self.predict = call

    # grammar -------------------------------------------------------------

    def parse(self):
        ts = self.ts
        ts.expect_kw("SELECT")
        if ts.cur.is_kw("DISTINCT"):
            raise self.unsupported("DISTINCT")
        raw_items, count = self.select_list()
        ts.expect_kw("FROM")
        self.from_clause()
        preds = []
        if ts.accept_kw("WHERE"):
            preds = self.condition()
        for kw in ("GROUP", "ORDER", "HAVING", "LIMIT", "UNION"):
            if ts.cur.is_kw(kw):
                raise self.unsupported(kw)
        ts.accept_punct(";")
        if ts.cur.kind != "EOF":
            raise ts.error(f"unexpected {ts.cur.value!r}")
        if self.predict is None:
            raise UnsupportedError("query must invoke PREDICT exactly once")
        projections = self.resolve_items(raw_items)
        predicates = tuple(self.resolve_predicate(p) for p in preds)
        return QueryAst(
            tuple(projections), tuple(self.sources), tuple(self.joins), predicates, self.predict, count
        )

    def select_list(self):
        ts = self.ts
        if ts.cur.kind == "IDENT" and ts.cur.value.upper() == "COUNT" and ts.peek().is_punct("("):
            ts.advance()
            ts.expect_punct("(")
            if not ts.cur.is_op("*"):
                raise self.unsupported("aggregates other than COUNT(*)")
            ts.advance()
            ts.expect_punct(")")
            if ts.accept_kw("AS"):
                ts.expect_ident()
            return [], True
        items = [self.select_item()]
        while ts.accept_punct(","):
            items.append(self.select_item())
        return items, False

    def select_item(self):
        ts = self.ts
        tok = ts.cur
        if tok.is_op("*"):
            ts.advance()
            return ("star", None, tok)
        if tok.is_kw("PREDICT"):
            call = self.predict_udf()
            alias = "predict"
            if ts.accept_kw("AS"):
                alias = self.alias_name()
            elif ts.cur.kind == "IDENT":
                alias = ts.advance().value
            call = replace(call, outputs=(OutputBinding(None, alias, "label"),))
            self.set_predict(call, tok)
            return ("output", alias, tok)
        if tok.is_punct("("):
            if ts.peek().is_kw("SELECT"):
                raise self.unsupported("subquery")
            raise ts.error("expressions are not allowed in the select list")
        if tok.kind == "IDENT" and ts.peek().is_punct(".") and ts.peek(2).is_op("*"):
            ts.advance()
            ts.advance()
            ts.advance()
            return ("star", tok.value, tok)
        if tok.kind == "IDENT" and ts.peek().is_punct("("):
            raise self.unsupported(f"function {tok.value}")
        ref = self.dotted_name()
        alias = None
        if ts.accept_kw("AS"):
            alias = self.alias_name()
        elif ts.cur.kind == "IDENT":
            alias = ts.advance().value
        return ("ref", (ref, alias), tok)

    def dotted_name(self):
        ts = self.ts
        first = ts.expect_ident("column")
        if ts.accept_punct("."):
            second = ts.expect_ident("column")
            return (first.value, second.value, first)
        return (None, first.value, first)

    def model_ref(self):
        ts = self.ts
        if ts.cur.kind == "STRING":
            return ts.advance().value
        parts = [ts.expect_ident("model path").value]
        while ts.cur.is_punct(".") and ts.peek().kind == "IDENT":
            ts.advance()
            parts.append(ts.advance().value)
        return ".".join(parts)

    def predict_udf(self):
        ts = self.ts
        tok = ts.expect_kw("PREDICT")
        ts.expect_punct("(")
        path = self.model_ref()
        ts.expect_punct(",")
        if ts.cur.is_op("*"):
            ts.advance()
            inputs = "*"
        else:
            cols = [self.dotted_name()]
            while ts.accept_punct(","):
                cols.append(self.dotted_name())
            inputs = cols
        ts.expect_punct(")")
        return PredictCall(path, inputs, (), "udf", self.pos(tok))

    def table_source(self):
        ts = self.ts
        if ts.cur.is_punct("("):
            if ts.peek().is_kw("SELECT"):
                raise self.unsupported("subquery")
            raise ts.error("expected table name")
        tok = ts.expect_ident("table name")
        if tok.value not in self.catalog:
            raise ResolutionError(f"unknown table {tok.value!r} (line {tok.line}, column {tok.col})")
        alias = tok.value
        if ts.accept_kw("AS"):
            alias = self.alias_name()
        elif ts.cur.kind == "IDENT":
            alias = ts.advance().value
        if any(s.alias == alias for s in self.sources):
            raise ResolutionError(f"duplicate table alias {alias!r}")
        self.sources.append(Source(tok.value, alias))

    def joins_clause(self, stop_at_paren=False):
        ts = self.ts
        while True:
            tok = ts.cur
            if tok.is_kw("LEFT", "RIGHT", "FULL", "OUTER"):
                raise self.unsupported("outer join")
            if tok.is_kw("CROSS") or tok.is_punct(","):
                raise self.unsupported("cross join")
            if tok.is_kw("INNER"):
                ts.advance()
                if not ts.cur.is_kw("JOIN"):
                    raise ts.error("expected JOIN")
            if not ts.accept_kw("JOIN"):
                return
            self.table_source()
            new_alias = self.sources[-1].alias
            ts.expect_kw("ON")
            a = self.dotted_name()
            if not ts.cur.is_op("="):
                raise self.unsupported("non-equi join")
            ts.advance()
            b = self.dotted_name()
            if ts.cur.is_kw("AND", "OR"):
                raise self.unsupported("multi-condition join")
            left, right = self.resolve_column(a), self.resolve_column(b)
            if left.table == new_alias:
                left, right = right, left
            if right.table != new_alias or left.table == new_alias:
                raise ResolutionError(
                    f"join condition must link {new_alias!r} to an earlier table (line {tok.line})"
                )
            self.joins.append(JoinCond(left, right))

    def from_clause(self):
        ts = self.ts
        if ts.cur.is_kw("PREDICT"):
            self.predict_tvf()
            if ts.cur.is_kw("JOIN", "INNER", "LEFT", "RIGHT", "FULL", "CROSS") or ts.cur.is_punct(","):
                raise self.unsupported("joining a PREDICT table-valued function")
            return
        self.table_source()
        self.joins_clause()

    def predict_tvf(self):
        ts = self.ts
        tok = ts.expect_kw("PREDICT")
        ts.expect_punct("(")
        self.named_arg("MODEL")
        path = self.model_ref()
        ts.expect_punct(",")
        self.named_arg("DATA")
        self.table_source()
        self.joins_clause()
        ts.expect_punct(")")
        cols = []
        if ts.accept_kw("WITH"):
            ts.expect_punct("(")
            while True:
                name = ts.expect_ident("output column").value
                cols.append((name, self.type_name()))
                if not ts.accept_punct(","):
                    break
            ts.expect_punct(")")
        alias = "predict"
        if ts.accept_kw("AS"):
            alias = self.alias_name()
        elif ts.cur.kind == "IDENT":
            alias = ts.advance().value
        self.tvf_alias = alias
        bindings = []
        keys = [n.lower() for n, _ in cols]
        positional = iter(k for k in ("label", "score") if k not in keys)
        for name, dtype in cols:
            key = name.lower() if name.lower() in ("label", "score") else next(positional, None)
            if key is None:
                raise ParseError("too many PREDICT output columns", tok.line, tok.col)
            bindings.append(OutputBinding(alias, name, key, dtype))
        self.set_predict(PredictCall(path, "*", tuple(bindings), "tvf", self.pos(tok)), tok)

    def named_arg(self, name):
        ts = self.ts
        tok = ts.cur
        if tok.kind != "IDENT" or tok.value.upper() != name:
            raise ts.error(f"expected {name} =")
        ts.advance()
        if not ts.cur.is_op("="):
            raise ts.error("expected '='")
        ts.advance()

    def type_name(self):
        ts = self.ts
        tok = ts.cur
        if tok.kind != "IDENT" or tok.value.upper() not in _TYPE_NAMES:
            raise ts.error("expected a type name")
        ts.advance()
        if ts.accept_punct("("):
            while not ts.cur.is_punct(")"):
                if ts.cur.kind == "EOF":
                    raise ts.error("unterminated type")
                ts.advance()
            ts.advance()
        return _TYPE_NAMES[tok.value.upper()]

    def condition(self):
        ts = self.ts
        preds = self.conjunct()
        while True:
            if ts.cur.is_kw("OR"):
                raise self.unsupported("disjunction (OR)")
            if not ts.accept_kw("AND"):
                return preds
            preds += self.conjunct()

    def conjunct(self):
        ts = self.ts
        tok = ts.cur
        if tok.is_kw("NOT"):
            raise self.unsupported("NOT")
        if tok.is_kw("EXISTS"):
            raise self.unsupported("subquery")
        if tok.is_punct("("):
            if ts.peek().is_kw("SELECT"):
                raise self.unsupported("subquery")
            ts.advance()
            inner = self.condition()
            ts.expect_punct(")")
            return inner
        left = self.operand()
        if ts.cur.is_kw("IN", "IS", "LIKE", "BETWEEN"):
            raise self.unsupported(ts.cur.value)
        if not ts.cur.is_op("=", "<>", "!=", "<", "<=", ">", ">="):
            raise ts.error("expected a comparison operator")
        op = ts.advance().value
        op = "<>" if op == "!=" else op
        right = self.operand()
        if left[0] == "col" and right[0] == "lit":
            return [(left[1], op, right[1], tok)]
        if left[0] == "lit" and right[0] == "col":
            return [(right[1], _FLIP[op], left[1], tok)]
        if left[0] == "col":
            raise self.unsupported("column-to-column predicate", tok)
        raise self.unsupported("constant predicate", tok)

    def operand(self):
        ts = self.ts
        tok = ts.cur
        neg = False
        if tok.is_op("-") and ts.peek().kind == "NUMBER":
            ts.advance()
            neg = True
            tok = ts.cur
        if tok.kind == "NUMBER":
            ts.advance()
            raw = tok.value
            v = float(raw) if any(c in raw for c in ".eE") else int(raw)
            return ("lit", -v if neg else v)
        if tok.kind == "STRING":
            ts.advance()
            return ("lit", tok.value)
        if tok.is_kw("NULL"):
            raise self.unsupported("NULL")
        if tok.is_kw("PREDICT"):
            raise self.unsupported("PREDICT inside WHERE")
        if tok.kind == "IDENT":
            if ts.peek().is_punct("("):
                raise self.unsupported(f"function {tok.value}")
            return ("col", self.dotted_name())
        raise ts.error(f"unexpected {tok.value or 'end of input'!r}")

    # resolution ----------------------------------------------------------

    def resolve_column(self, dotted) -> ColumnRef:
        qual, col, tok = dotted
        where = f"(line {tok.line}, column {tok.col})"
        if qual is not None:
            src = next((s for s in self.sources if s.alias == qual), None)
            if src is None:
                raise ResolutionError(f"unknown table alias {qual!r} {where}")
            if self.catalog[src.table].dtype(col) is None:
                raise ResolutionError(f"unknown column {qual}.{col} {where}")
            return ColumnRef(qual, col)
        hits = [s for s in self.sources if self.catalog[s.table].dtype(col) is not None]
        if not hits:
            raise ResolutionError(f"unknown column {col!r} {where}")
        if len(hits) > 1:
            raise ResolutionError(f"ambiguous column {col!r} {where}")
        return ColumnRef(hits[0].alias, col)

    def resolve_ref(self, dotted) -> Ref:
        qual, col, tok = dotted
        name = f"{qual}.{col}" if qual else col
        if self.predict.binding(name) is not None:
            return OutputRef(name)
        if qual is not None and qual == self.tvf_alias:
            raise ResolutionError(
                f"unknown PREDICT output {name!r} (line {tok.line}, column {tok.col})"
            )
        return self.resolve_column(dotted)

    def col_dtype(self, ref: ColumnRef):
        return self.catalog[self.alias_table(ref.table)].dtype(ref.column)

    def alias_table(self, alias):
        return next(s.table for s in self.sources if s.alias == alias)

    def resolve_items(self, items):
        out = []
        for kind, payload, tok in items:
            if kind == "star":
                srcs = [s for s in self.sources if payload in (None, s.alias)]
                if payload is not None and not srcs:
                    if payload == self.tvf_alias:
                        out.extend(Projection(OutputRef(b.full_name), b.full_name)
                                   for b in self.predict.outputs)
                        continue
                    raise ResolutionError(f"unknown table alias {payload!r}")
                for s in srcs:
                    for c in self.catalog[s.table].column_names:
                        ref = ColumnRef(s.alias, c)
                        out.append(Projection(ref, ref.name))
                if payload is None and self.predict.form == "tvf":
                    out.extend(Projection(OutputRef(b.full_name), b.full_name)
                               for b in self.predict.outputs)
            elif kind == "output":
                out.append(Projection(OutputRef(payload), payload))
            else:
                dotted, alias = payload
                ref = self.resolve_ref(dotted)
                out.append(Projection(ref, alias or ref.name))
        names = [p.name for p in out]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ResolutionError(f"duplicate output column(s) {sorted(dup)}")
        if self.predict.inputs != "*":
            cols = tuple(self.resolve_column(d) for d in self.predict.inputs)
            self.predict = replace(self.predict, inputs=cols)
        return out

    def resolve_predicate(self, raw):
        dotted, op, value, tok = raw
        ref = self.resolve_ref(dotted)
        where = f"(line {tok.line}, column {tok.col})"
        if isinstance(ref, ColumnRef):
            dtype = self.col_dtype(ref)
        else:
            dtype = self.predict.binding(ref.name).dtype
        if dtype is not None and (dtype == "string") != isinstance(value, str):
            raise ResolutionError(f"literal {value!r} does not match type {dtype} of {ref} {where}")
        return Predicate(ref, op, value, (tok.line, tok.col))


def parse_query(text: str, catalog: Catalog) -> QueryAst:
    """Parse and resolve a prediction query against ``catalog``."""
    return _Parser(text, catalog).parse()


def normalize_predict(ast: QueryAst) -> QueryAst:
    """Rewrite the table-valued PREDICT form into the scalar (UDF) form.

    The AST already carries explicit output bindings, so the rewrite only has
    to check the TVF was typed and flip the form tag; UDF input is returned
    unchanged.
    """
    call = ast.predict
    if call.form == "udf":
        return ast
    if not call.outputs:
        line, col = call.pos or (None, None)
        raise ParseError("PREDICT table-valued function needs a WITH (...) output clause", line, col)
    return replace(ast, predict=replace(call, form="udf"))


def extract_predicates(ast: QueryAst):
    """Split the WHERE conjuncts into (model-input side, model-output side)."""
    inputs = [p for p in ast.predicates if isinstance(p.target, ColumnRef)]
    outputs = [p for p in ast.predicates if isinstance(p.target, OutputRef)]
    return inputs, outputs


def read_query(path, catalog) -> QueryAst:
    with open(path, encoding="utf-8") as f:
        return parse_query(f.read(), catalog)

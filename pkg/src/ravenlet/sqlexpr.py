"""Dialect-neutral SQL expressions: AST, renderer, parser, evaluator.

The renderer and parser are exact inverses on the trees MLtoSQL produces:
``parse_expr(render(e)) == e``. Parenthesization follows the tree, so the
evaluation order of floating-point arithmetic survives a text round trip.

Compiled statements use one non-ANSI convenience: a select item may refer
to an alias defined earlier in the same select list (lateral column
aliases, as in DuckDB or Snowflake). ``render_statement(..., dialect="ansi")``
inlines those aliases instead.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import EvalError, ParseError
from .lexer import KEYWORDS, TokenStream

# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Col:
    table: str | None
    name: str


@dataclass(frozen=True)
class FeatureRef:
    """Positional feature placeholder, rendered ``F[i]``."""

    index: int


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    left: "SqlExpr"
    right: "SqlExpr"


@dataclass(frozen=True)
class Neg:
    operand: "SqlExpr"


@dataclass(frozen=True)
class Cmp:
    op: str  # = <> < <= > >=
    left: "SqlExpr"
    right: "SqlExpr"


@dataclass(frozen=True)
class And:
    terms: tuple["SqlExpr", ...]


@dataclass(frozen=True)
class Case:
    whens: tuple[tuple["SqlExpr", "SqlExpr"], ...]
    default: "SqlExpr"


@dataclass(frozen=True)
class Func:
    name: str  # EXP ABS SQRT GREATEST
    args: tuple["SqlExpr", ...]


SqlExpr = Union[Col, FeatureRef, Num, Str, BinOp, Neg, Cmp, And, Case, Func]

FUNCS = {"EXP": 1, "ABS": 1, "SQRT": 1, "GREATEST": None, "COUNT": 0}


@dataclass(frozen=True)
class TableFrom:
    tables: tuple[tuple[str, str], ...]  # (table, alias), first is the driving table
    joins: tuple[tuple[Col, Col], ...]  # join i links tables[i+1]


@dataclass(frozen=True)
class DerivedFrom:
    query: "Select"
    alias: str


@dataclass(frozen=True)
class Select:
    items: tuple[tuple[SqlExpr, str], ...]
    source: Union[TableFrom, DerivedFrom]
    where: SqlExpr | None = None


def num(v) -> Num:
    return Num(float(v))


def lit(v):
    return Str(v) if isinstance(v, str) else num(v)


# --------------------------------------------------------------------------
# rendering

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_SIMPLE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def fmt_number(v: float) -> str:
    """Shortest text that parses back to the same double."""
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"cannot render non-finite number {v}")
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def quote_ident(name: str) -> str:
    if _SIMPLE.match(name) and name.upper() not in KEYWORDS:
        return name
    return '"' + name.replace('"', '""') + '"'


def _prec(e):
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Num) and e.value < 0:
        return 3
    if isinstance(e, Case):
        return 0  # always wrapped when nested
    return 4


def render(e: SqlExpr) -> str:
    if isinstance(e, Col):
        if e.table is None:
            return quote_ident(e.name)
        return f"{quote_ident(e.table)}.{quote_ident(e.name)}"
    if isinstance(e, FeatureRef):
        return f"F[{e.index}]"
    if isinstance(e, Num):
        return fmt_number(e.value)
    if isinstance(e, Str):
        return "'" + e.value.replace("'", "''") + "'"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = render(e.left)
        if _prec(e.left) < p:
            left = f"({left})"
        right = render(e.right)
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Neg):
        inner = render(e.operand)
        if _prec(e.operand) < 4:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Cmp):
        left, right = render(e.left), render(e.right)
        if isinstance(e.left, Case):
            left = f"({left})"
        if isinstance(e.right, Case):
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, And):
        parts = []
        for t in e.terms:
            s = render(t)
            parts.append(f"({s})" if isinstance(t, And) else s)
        return " AND ".join(parts)
    if isinstance(e, Case):
        out = ["CASE"]
        for cond, val in e.whens:
            out.append(f"WHEN {render(cond)} THEN {_branch(val)}")
        out.append(f"ELSE {_branch(e.default)} END")
        return " ".join(out)
    if isinstance(e, Func):
        if e.name == "COUNT":
            return "COUNT(*)"
        return f"{e.name}({', '.join(render(a) for a in e.args)})"
    raise TypeError(f"not an expression: {e!r}")


def _branch(e):
    s = render(e)
    return f"({s})" if isinstance(e, Case) else s


def inline_aliases(e: SqlExpr, env: dict) -> SqlExpr:
    """Substitute unqualified column refs that name an earlier alias."""
    if isinstance(e, Col):
        if e.table is None and e.name in env:
            return env[e.name]
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, inline_aliases(e.left, env), inline_aliases(e.right, env))
    if isinstance(e, Neg):
        return Neg(inline_aliases(e.operand, env))
    if isinstance(e, Cmp):
        return Cmp(e.op, inline_aliases(e.left, env), inline_aliases(e.right, env))
    if isinstance(e, And):
        return And(tuple(inline_aliases(t, env) for t in e.terms))
    if isinstance(e, Case):
        return Case(
            tuple((inline_aliases(c, env), inline_aliases(v, env)) for c, v in e.whens),
            inline_aliases(e.default, env),
        )
    if isinstance(e, Func):
        return Func(e.name, tuple(inline_aliases(a, env) for a in e.args))
    return e


def render_statement(s: Select, dialect="neutral", indent=0) -> str:
    pad = " " * indent
    items = s.items
    where = s.where
    if dialect == "ansi":
        env = {}
        new_items = []
        for e, alias in items:
            e = inline_aliases(e, env)
            env[alias] = e
            new_items.append((e, alias))
        items = [(e, a) for e, a in new_items if not a.startswith("__")]
    elif dialect != "neutral":
        raise ValueError(f"unknown dialect {dialect!r}")
    lines = [pad + "SELECT"]
    for i, (e, alias) in enumerate(items):
        comma = "," if i < len(items) - 1 else ""
        text = render(e)
        if isinstance(e, Col) and e.table is None and e.name == alias:
            lines.append(f"{pad}  {text}{comma}")
        else:
            lines.append(f"{pad}  {text} AS {quote_ident(alias)}{comma}")
    src = s.source
    if isinstance(src, DerivedFrom):
        lines.append(pad + "FROM (")
        lines.append(render_statement(src.query, dialect, indent + 2))
        lines.append(f"{pad}) AS {quote_ident(src.alias)}")
    else:
        t, a = src.tables[0]
        lines.append(f"{pad}FROM {_table_ref(t, a)}")
        for (t, a), (l, r) in zip(src.tables[1:], src.joins):
            lines.append(f"{pad}  JOIN {_table_ref(t, a)} ON {render(l)} = {render(r)}")
    if where is not None:
        lines.append(f"{pad}WHERE {render(where)}")
    return "\n".join(lines)


def _table_ref(t, a):
    return quote_ident(t) if t == a else f"{quote_ident(t)} AS {quote_ident(a)}"


# --------------------------------------------------------------------------
# parsing


class _ExprParser:
    def __init__(self, text):
        self.ts = TokenStream(text)

    def done(self):
        ts = self.ts
        ts.accept_punct(";")
        if ts.cur.kind != "EOF":
            raise ts.error(f"unexpected {ts.cur.value!r}")

    def condition(self):
        terms = [self.comparison()]
        while self.ts.accept_kw("AND"):
            terms.append(self.comparison())
        return terms[0] if len(terms) == 1 else And(tuple(terms))

    def comparison(self):
        ts = self.ts
        left = self.additive()
        if ts.cur.is_op("=", "<>", "!=", "<", "<=", ">", ">="):
            op = ts.advance().value
            op = "<>" if op == "!=" else op
            return Cmp(op, left, self.additive())
        return left

    def additive(self):
        ts = self.ts
        e = self.multiplicative()
        while ts.cur.is_op("+", "-"):
            op = ts.advance().value
            e = BinOp(op, e, self.multiplicative())
        return e

    def multiplicative(self):
        ts = self.ts
        e = self.unary()
        while ts.cur.is_op("*", "/"):
            op = ts.advance().value
            e = BinOp(op, e, self.unary())
        return e

    def unary(self):
        ts = self.ts
        if ts.cur.is_op("-"):
            ts.advance()
            if ts.cur.kind == "NUMBER":
                return Num(-float(ts.advance().value))
            return Neg(self.unary())
        return self.primary()

    def primary(self):
        ts = self.ts
        tok = ts.cur
        if tok.kind == "NUMBER":
            ts.advance()
            return Num(float(tok.value))
        if tok.kind == "STRING":
            ts.advance()
            return Str(tok.value)
        if tok.is_punct("("):
            ts.advance()
            e = self.condition()
            ts.expect_punct(")")
            return e
        if tok.is_kw("CASE"):
            return self.case()
        if tok.kind == "IDENT":
            ts.advance()
            up = tok.value.upper()
            if up in FUNCS and ts.cur.is_punct("("):
                ts.advance()
                if up == "COUNT":
                    if not ts.cur.is_op("*"):
                        raise ts.error("only COUNT(*) is supported")
                    ts.advance()
                    ts.expect_punct(")")
                    return Func("COUNT", ())
                args = [self.additive()]
                while ts.accept_punct(","):
                    args.append(self.additive())
                ts.expect_punct(")")
                arity = FUNCS[up]
                if arity is not None and len(args) != arity:
                    raise ParseError(f"{up} takes {arity} argument(s)", tok.line, tok.col)
                return Func(up, tuple(args))
            if tok.value == "F" and ts.cur.is_punct("["):
                ts.advance()
                idx = ts.cur
                if idx.kind != "NUMBER" or not idx.value.isdigit():
                    raise ts.error("expected feature index")
                ts.advance()
                ts.expect_punct("]")
                return FeatureRef(int(idx.value))
            if ts.accept_punct("."):
                col = ts.expect_ident("column")
                return Col(tok.value, col.value)
            return Col(None, tok.value)
        raise ts.error(f"unexpected {tok.value or 'end of input'!r}")

    def case(self):
        ts = self.ts
        ts.expect_kw("CASE")
        whens = []
        while ts.accept_kw("WHEN"):
            cond = self.condition()
            ts.expect_kw("THEN")
            whens.append((cond, self.condition()))
        if not whens:
            raise ts.error("CASE needs at least one WHEN")
        ts.expect_kw("ELSE")
        default = self.condition()
        ts.expect_kw("END")
        return Case(tuple(whens), default)

    # statements ----------------------------------------------------------

    def select(self):
        ts = self.ts
        ts.expect_kw("SELECT")
        items = []
        while True:
            e = self.condition()
            if ts.accept_kw("AS"):
                alias = ts.expect_ident("alias").value
            elif isinstance(e, Col):
                alias = e.name
            else:
                raise ts.error("select expression needs an alias")
            items.append((e, alias))
            if not ts.accept_punct(","):
                break
        ts.expect_kw("FROM")
        if ts.accept_punct("("):
            inner = self.select()
            ts.expect_punct(")")
            ts.accept_kw("AS")
            source = DerivedFrom(inner, ts.expect_ident("alias").value)
        else:
            tables = [self.table_ref()]
            joins = []
            while ts.accept_kw("JOIN"):
                tables.append(self.table_ref())
                ts.expect_kw("ON")
                left = self.primary()
                if not ts.cur.is_op("="):
                    raise ts.error("expected '='")
                ts.advance()
                right = self.primary()
                joins.append((left, right))
            source = TableFrom(tuple(tables), tuple(joins))
        where = None
        if ts.accept_kw("WHERE"):
            where = self.condition()
        return Select(tuple(items), source, where)

    def table_ref(self):
        ts = self.ts
        t = ts.expect_ident("table").value
        alias = t
        if ts.accept_kw("AS"):
            alias = ts.expect_ident("alias").value
        return (t, alias)


def parse_expr(text: str) -> SqlExpr:
    p = _ExprParser(text)
    e = p.condition()
    p.done()
    return e


def parse_statement(text: str) -> Select:
    p = _ExprParser(text)
    s = p.select()
    p.done()
    return s


# --------------------------------------------------------------------------
# evaluation


def columns_used(e: SqlExpr, acc=None) -> set:
    acc = set() if acc is None else acc
    if isinstance(e, Col):
        acc.add(e)
    elif isinstance(e, (BinOp, Cmp)):
        columns_used(e.left, acc)
        columns_used(e.right, acc)
    elif isinstance(e, Neg):
        columns_used(e.operand, acc)
    elif isinstance(e, And):
        for t in e.terms:
            columns_used(t, acc)
    elif isinstance(e, Case):
        for c, v in e.whens:
            columns_used(c, acc)
            columns_used(v, acc)
        columns_used(e.default, acc)
    elif isinstance(e, Func):
        for a in e.args:
            columns_used(a, acc)
    return acc


def case_depth(e: SqlExpr) -> int:
    """Nesting depth of CASE expressions."""
    if isinstance(e, Case):
        inner = [case_depth(v) for _, v in e.whens] + [case_depth(e.default)]
        inner += [case_depth(c) for c, _ in e.whens]
        return 1 + max(inner)
    if isinstance(e, (BinOp, Cmp)):
        return max(case_depth(e.left), case_depth(e.right))
    if isinstance(e, Neg):
        return case_depth(e.operand)
    if isinstance(e, (And, Func)):
        items = e.terms if isinstance(e, And) else e.args
        return max((case_depth(t) for t in items), default=0)
    return 0


def expr_size(e: SqlExpr) -> int:
    if isinstance(e, (BinOp, Cmp)):
        return 1 + expr_size(e.left) + expr_size(e.right)
    if isinstance(e, Neg):
        return 1 + expr_size(e.operand)
    if isinstance(e, (And, Func)):
        items = e.terms if isinstance(e, And) else e.args
        return 1 + sum(expr_size(t) for t in items)
    if isinstance(e, Case):
        return 1 + sum(expr_size(c) + expr_size(v) for c, v in e.whens) + expr_size(e.default)
    return 1


class Env:
    """Column lookup for evaluation: qualified names, bare names, features."""

    def __init__(self, columns: dict, n_rows: int, features=None):
        self.columns = columns
        self.n = n_rows
        self.features = features

    def lookup(self, e):
        if isinstance(e, FeatureRef):
            if self.features is None or e.index >= len(self.features):
                raise EvalError(f"feature F[{e.index}] not bound")
            return self.features[e.index]
        key = e.name if e.table is None else f"{e.table}.{e.name}"
        try:
            return self.columns[key]
        except KeyError:
            raise EvalError(f"unknown column {key!r}") from None


def evaluate(e: SqlExpr, env: Env, rows=None):
    """Evaluate ``e`` on the rows ``rows`` (index array, or all rows)."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _eval(e, env, rows)


def _take(a, rows):
    return a if rows is None else a[rows]


def _nrows(env, rows):
    return env.n if rows is None else len(rows)


def _eval(e, env, rows):
    if isinstance(e, (Col, FeatureRef)):
        return _take(env.lookup(e), rows)
    if isinstance(e, Num):
        return np.full(_nrows(env, rows), e.value, dtype=np.float64)
    if isinstance(e, Str):
        out = np.empty(_nrows(env, rows), dtype=object)
        out[:] = e.value
        return out
    if isinstance(e, BinOp):
        a = _as_float(_eval(e.left, env, rows))
        b = _as_float(_eval(e.right, env, rows))
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return a / b
    if isinstance(e, Neg):
        return -_as_float(_eval(e.operand, env, rows))
    if isinstance(e, Cmp):
        a = _eval(e.left, env, rows)
        b = _eval(e.right, env, rows)
        return _compare(e.op, a, b)
    if isinstance(e, And):
        out = np.ones(_nrows(env, rows), dtype=bool)
        for t in e.terms:
            out &= _eval(t, env, rows).astype(bool)
        return out
    if isinstance(e, Case):
        return _eval_case(e, env, rows)
    if isinstance(e, Func):
        args = [_as_float(_eval(a, env, rows)) for a in e.args]
        if e.name == "EXP":
            return np.exp(args[0])
        if e.name == "ABS":
            return np.abs(args[0])
        if e.name == "SQRT":
            return np.sqrt(args[0])
        if e.name == "COUNT":
            raise EvalError("COUNT(*) is only allowed as a select item")
        if e.name == "GREATEST":
            out = args[0]
            for a in args[1:]:
                out = np.maximum(out, a)
            return out
        raise EvalError(f"unknown function {e.name}")
    raise EvalError(f"cannot evaluate {e!r}")


def _as_float(a):
    if a.dtype == object:
        raise EvalError("arithmetic on a string value")
    if a.dtype == bool:
        return a.astype(np.float64)
    return a.astype(np.float64, copy=False)


def _compare(op, a, b):
    if len(a) == 0:
        return np.zeros(0, dtype=bool)  # an empty CASE has no dtype to check
    if (a.dtype == object) != (b.dtype == object):
        raise EvalError("comparison between string and number")
    if op == "=":
        r = a == b
    elif op == "<>":
        r = a != b
    elif op == "<":
        r = a < b
    elif op == "<=":
        r = a <= b
    elif op == ">":
        r = a > b
    else:
        r = a >= b
    return np.asarray(r, dtype=bool)


def _eval_case(e: Case, env, rows):
    n = _nrows(env, rows)
    positions = np.arange(n)
    idx = rows if rows is not None else positions
    pieces = []  # (positions, values)
    remaining_pos = positions
    remaining_idx = idx
    for cond, val in e.whens:
        if len(remaining_pos) == 0:
            break
        c = _eval(cond, env, remaining_idx).astype(bool)
        if c.any():
            pieces.append((remaining_pos[c], _eval(val, env, remaining_idx[c])))
        remaining_pos = remaining_pos[~c]
        remaining_idx = remaining_idx[~c]
    if len(remaining_pos):
        pieces.append((remaining_pos, _eval(e.default, env, remaining_idx)))
    is_obj = any(v.dtype == object for _, v in pieces)
    out = np.empty(n, dtype=object if is_obj else np.float64)
    for pos, vals in pieces:
        out[pos] = vals
    return out

"""Value constraints on model inputs and their propagation through featurizers.

A constraint describes the set of values a slot can hold on the rows that
reach the model. Propagation is sound: each output constraint contains every
value the operator can produce from inputs satisfying the input constraints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .. import pipeline as pl

INF = math.inf


@dataclass(frozen=True)
class Unknown:
    pass


@dataclass(frozen=True)
class Const:
    value: object  # float or str


@dataclass(frozen=True)
class Interval:
    lo: float = -INF
    hi: float = INF
    lo_open: bool = False
    hi_open: bool = False

    def contains(self, v) -> bool:
        if v < self.lo or (v == self.lo and self.lo_open):
            return False
        if v > self.hi or (v == self.hi and self.hi_open):
            return False
        return True


@dataclass(frozen=True)
class NotIn:
    """Any value except the listed ones (from ``<>`` predicates)."""

    values: frozenset


UNKNOWN = Unknown()
EMPTY = None  # meet of contradictory constraints


def norm_value(v):
    return v if isinstance(v, str) else float(v)


def from_predicate(op: str, value):
    """Constraint implied by ``column <op> value``."""
    v = norm_value(value)
    if op == "=":
        return Const(v)
    if op == "<>":
        return NotIn(frozenset([v]))
    if isinstance(v, str):
        return UNKNOWN
    if op == "<":
        return Interval(hi=v, hi_open=True)
    if op == "<=":
        return Interval(hi=v)
    if op == ">":
        return Interval(lo=v, lo_open=True)
    if op == ">=":
        return Interval(lo=v)
    return UNKNOWN


def _interval_empty(iv: Interval) -> bool:
    if iv.lo > iv.hi:
        return True
    return iv.lo == iv.hi and (iv.lo_open or iv.hi_open)


def meet(a, b):
    """Intersection of two constraints; ``EMPTY`` when they contradict."""
    if a is EMPTY or b is EMPTY:
        return EMPTY
    if isinstance(a, Unknown):
        return b
    if isinstance(b, Unknown):
        return a
    if isinstance(b, Const) and not isinstance(a, Const):
        a, b = b, a
    if isinstance(a, Const):
        if isinstance(b, Const):
            return a if a.value == b.value and type(a.value) is type(b.value) else EMPTY
        if isinstance(b, NotIn):
            return EMPTY if a.value in b.values else a
        if isinstance(a.value, str):
            return EMPTY
        return a if b.contains(a.value) else EMPTY
    if isinstance(a, NotIn) and isinstance(b, NotIn):
        return NotIn(a.values | b.values)
    if isinstance(a, NotIn):
        a, b = b, a
    if isinstance(b, NotIn):
        # keeping only the interval over-approximates the set, which is sound
        return a
    lo, lo_open = max((a.lo, a.lo_open), (b.lo, b.lo_open), key=lambda t: (t[0], t[1]))
    hi, hi_open = min((a.hi, not a.hi_open), (b.hi, not b.hi_open), key=lambda t: (t[0], t[1]))
    hi_open = not hi_open
    iv = Interval(lo, hi, lo_open, hi_open)
    if _interval_empty(iv):
        return EMPTY
    if iv.lo == iv.hi:
        return Const(iv.lo)
    return iv


def meet_all(cs):
    out = UNKNOWN
    for c in cs:
        out = meet(out, c)
    return out


# --------------------------------------------------------------------------
# propagation


def _scale(x, o, s):
    # the exact float expression the executor evaluates
    return (x - o) * s


def _push_scaler_one(c, o, s):
    if isinstance(c, Const):
        if isinstance(c.value, str):
            return UNKNOWN
        return Const(_scale(c.value, o, s))
    if isinstance(c, Interval):
        if s == 0 or not math.isfinite(s):
            return UNKNOWN
        identity = o == 0 and s == 1
        lo, hi = _scale(c.lo, o, s), _scale(c.hi, o, s)
        if identity:
            return c
        # rounding keeps the map monotone but not strictly so: close the bounds
        if s > 0:
            return Interval(lo, hi)
        return Interval(hi, lo)
    return UNKNOWN


def _matches(v, cat) -> bool:
    """OneHotEncoder equality, identical to the executor's."""
    if isinstance(v, str) != isinstance(cat, str):
        return False
    if isinstance(v, str):
        return v == cat
    return float(v) == float(cat)


_BIT = Interval(0.0, 1.0)


def _push_ohe_one(c, cats):
    out = []
    for cat in cats:
        if isinstance(c, Const):
            out.append(Const(1.0 if _matches(c.value, cat) else 0.0))
        elif isinstance(c, NotIn) and any(_matches(v, cat) for v in c.values):
            out.append(Const(0.0))
        elif isinstance(c, Interval) and not isinstance(cat, str) and not c.contains(float(cat)):
            out.append(Const(0.0))
        else:
            out.append(_BIT)
    return out


def push_constraint(op, cs: list) -> list:
    """Map per-input-slot constraints to per-output-slot constraints."""
    if isinstance(op, pl.Constant):
        return [Const(norm_value(v)) for v in op.values]
    if isinstance(op, pl.Concat):
        return list(cs)
    if isinstance(op, pl.FeatureExtractor):
        return [cs[i] for i in op.indices]
    if isinstance(op, pl.Scaler):
        return [_push_scaler_one(c, o, s) for c, o, s in zip(cs, op.offsets, op.scales)]
    if isinstance(op, pl.OneHotEncoder):
        out = []
        for c, cats in zip(cs, op.categories):
            out.extend(_push_ohe_one(c, cats))
        return out
    if isinstance(op, pl.LabelEncoder):
        out = []
        for c in cs:
            if isinstance(c, Const):
                code = -1.0
                for k, v in op.mapping:
                    if _matches(c.value, k):
                        code = float(v)
                        break
                out.append(Const(code))
            else:
                out.append(UNKNOWN)
        return out
    width = len(cs)
    try:
        width = pl.output_width(op, len(cs))
    except TypeError:
        pass
    return [UNKNOWN] * width


def decide(cmp: str, threshold: float, c):
    """Outcome of ``x <cmp> threshold`` for every x allowed by ``c``, or None."""
    if isinstance(c, Const):
        if isinstance(c.value, str):
            return None
        return bool(pl.compare(cmp, c.value, threshold))
    if not isinstance(c, Interval):
        return None
    t = threshold
    lo_above = c.lo > t or (c.lo == t and c.lo_open)  # every x > t
    hi_below = c.hi < t or (c.hi == t and c.hi_open)  # every x < t
    if cmp == ">":
        if lo_above:
            return True
        if c.hi <= t:
            return False
    elif cmp == ">=":
        if c.lo >= t:
            return True
        if hi_below:
            return False
    elif cmp == "<":
        if hi_below:
            return True
        if c.lo >= t:
            return False
    elif cmp == "<=":
        if c.hi <= t:
            return True
        if lo_above:
            return False
    elif cmp == "==":
        if not c.contains(t):
            return False
    return None


def prune_tree(tree, cs: list):
    """Replace every node whose test ``cs`` decides by its surviving child."""
    if isinstance(tree, pl.Leaf):
        return tree
    d = decide(tree.cmp, tree.threshold, cs[tree.feature]) if tree.feature < len(cs) else None
    if d is True:
        return prune_tree(tree.true, cs)
    if d is False:
        return prune_tree(tree.false, cs)
    t, f = prune_tree(tree.true, cs), prune_tree(tree.false, cs)
    if t is tree.true and f is tree.false:
        return tree
    return pl.Internal(tree.feature, tree.cmp, tree.threshold, t, f)


def prune_ensemble(op: pl.TreeEnsemble, cs: list) -> pl.TreeEnsemble:
    trees = tuple(prune_tree(t, cs) for t in op.trees)
    if trees == op.trees:
        return op
    return pl.TreeEnsemble(trees, op.aggregate, op.task, op.post, op.classes)

"""Data-induced pruning: min/max statistics used as if they were predicates.

Every scanned column with statistics gets the interval ``[min, max]``; the
constraints are pushed through the featurizers and prune the trees exactly
like query predicates do. With per-partition statistics one specialized plan
is compiled per partition, paired with the selector that routes rows to it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .. import ir
from .. import pipeline as pl
from ..errors import StatsError
from ..executor import Selector
from .common import model_input_constraints, replace_ops
from .constraints import UNKNOWN, Const, Interval, meet, prune_ensemble
from .pushdown import model_projection_pushdown


@dataclass(frozen=True)
class PartitionStats:
    partition_id: object
    min: float
    max: float
    rows: int = 0


@dataclass(frozen=True)
class ColumnStats:
    table: str
    column: str
    min: float
    max: float
    null_count: int = 0
    partitions: tuple = field(default=())

    def __post_init__(self):
        where = f"{self.table}.{self.column}"
        if not self.min <= self.max:
            raise StatsError(f"{where}: min {self.min} exceeds max {self.max}")
        if self.null_count < 0:
            raise StatsError(f"{where}: negative null_count")
        ids = set()
        for p in self.partitions:
            if not self.min <= p.min <= p.max <= self.max:
                raise StatsError(f"{where}: partition {p.partition_id!r} lies outside [{self.min}, {self.max}]")
            if p.partition_id in ids:
                raise StatsError(f"{where}: duplicate partition id {p.partition_id!r}")
            ids.add(p.partition_id)


def stats_from_dict(doc) -> dict:
    """Parse ``{table: {column: {min, max, null_count, partitions}}}``."""
    if not isinstance(doc, dict):
        raise StatsError("stats document must be an object keyed by table")
    out = {}
    for table, cols in doc.items():
        if not isinstance(cols, dict):
            raise StatsError(f"stats for {table!r} must be an object keyed by column")
        for col, d in cols.items():
            try:
                parts = tuple(
                    PartitionStats(p["id"], float(p["min"]), float(p["max"]), int(p.get("rows", 0)))
                    for p in d.get("partitions", ())
                )
                cs = ColumnStats(table, col, float(d["min"]), float(d["max"]), int(d.get("null_count", 0)), parts)
            except (KeyError, TypeError, ValueError) as e:
                raise StatsError(f"bad stats entry for {table}.{col}: {e}") from None
            out[(table, col)] = cs
    return out


def stats_to_dict(stats: dict) -> dict:
    doc: dict = {}
    for (table, col), s in stats.items():
        d = {"min": s.min, "max": s.max, "null_count": s.null_count}
        if s.partitions:
            d["partitions"] = [{"id": p.partition_id, "min": p.min, "max": p.max, "rows": p.rows} for p in s.partitions]
        doc.setdefault(table, {})[col] = d
    return doc


def load_stats(path) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise StatsError(f"{path}: invalid JSON ({e})") from None
    return stats_from_dict(doc)


def _range(lo, hi):
    return Const(lo) if lo == hi else Interval(lo, hi)


def _check_catalog(stats, catalog):
    for table, col in stats:
        schema = catalog.tables.get(table)
        if schema is None or col not in schema.column_names:
            raise StatsError(f"stats refer to unknown column {table}.{col}")


def _column_constraints(plan: ir.Plan, stats: dict, extra=None) -> dict:
    cs: dict = {}
    for n in plan.find(ir.Scan):
        for c, _ in n.op.columns:
            s = stats.get((n.op.table, c))
            if s is not None:
                cs[f"{n.op.alias}.{c}"] = _range(s.min, s.max)
    for name, c in (extra or {}).items():
        cs[name] = meet(cs.get(name, UNKNOWN), c)
    return cs


def _specialize(plan: ir.Plan, cs: dict, pushdown: bool) -> ir.Plan:
    m = plan.model_node
    if m is not None and isinstance(m.op, pl.TreeEnsemble):
        _, slots = model_input_constraints(plan, cs)
        pruned = prune_ensemble(m.op, slots)
        if pruned != m.op:
            plan = replace_ops(plan, {m.id: pruned})
    if pushdown:
        plan = model_projection_pushdown(plan)
    return plan


def _partition_source(plan, stats, catalog, partition_column):
    """(alias, ColumnStats) of the column partitions are keyed on, or None."""
    scans = plan.find(ir.Scan)
    candidates = []
    for n in scans:
        cols = {c for c, _ in n.op.columns}
        for (table, col), s in stats.items():
            if table == n.op.table and col in cols and s.partitions:
                candidates.append((n.op.alias, s))
    if not candidates:
        return None
    if partition_column is not None:
        for alias, s in candidates:
            if partition_column in (s.column, f"{alias}.{s.column}", f"{s.table}.{s.column}"):
                return alias, s
        raise StatsError(f"no partition statistics for column {partition_column!r}")
    if catalog is not None:
        for alias, s in candidates:
            if catalog.tables[s.table].partition_column == s.column:
                return alias, s
    return candidates[0]


def data_induced_pruning(plan: ir.Plan, stats: dict, catalog=None, pushdown=True, partition_column=None):
    """Specialize ``plan`` under its data statistics.

    Returns a list of ``(Selector | None, Plan)``: a single ``(None, plan)``
    without partition statistics, else one entry per partition ordered by
    partition id. The result feeds :func:`ravenlet.executor.run_partitioned`.
    """
    if catalog is not None:
        _check_catalog(stats, catalog)
    if not stats or plan.model_node is None:
        return [(None, plan)]
    base = _column_constraints(plan, stats)
    src = _partition_source(plan, stats, catalog, partition_column)
    if src is None:
        if not base:
            return [(None, plan)]
        return [(None, _specialize(plan, base, pushdown))]
    alias, s = src
    name = f"{alias}.{s.column}"
    out = []
    for p in sorted(s.partitions, key=lambda p: (str(type(p.partition_id)), p.partition_id)):
        cs = _column_constraints(plan, stats, {name: _range(p.min, p.max)})
        sel = Selector(alias, s.column, p.min, p.max, p.partition_id)
        out.append((sel, _specialize(plan, cs, pushdown)))
    return out

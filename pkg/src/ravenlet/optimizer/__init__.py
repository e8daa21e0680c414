"""Logical optimizer passes over the unified IR."""
from .constraints import Const, Interval, NotIn, UNKNOWN, Unknown, decide, meet, prune_tree, push_constraint
from .pruning import predicate_based_model_pruning
from .pushdown import model_projection_pushdown
from .data_induced import ColumnStats, PartitionStats, data_induced_pruning, load_stats, stats_from_dict

__all__ = [
    "Const", "Interval", "NotIn", "UNKNOWN", "Unknown", "decide", "meet", "prune_tree", "push_constraint",
    "predicate_based_model_pruning", "model_projection_pushdown",
    "ColumnStats", "PartitionStats", "data_induced_pruning", "load_stats", "stats_from_dict",
]

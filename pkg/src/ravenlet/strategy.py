"""Pipeline statistics and the choice of physical transformation.

The default rule::

    if n_model_features > 100:                              MLtoDNN
    elif n_pipeline_inputs > 12 and mean_tree_depth <= 10:  MLtoSQL
    else:                                                   NoTransform

An external decision table (JSON) can replace the rule. Nodes are either
``{"choice": "MLtoSQL"}`` or ``{"field": name, "threshold": t, "true": node,
"false": node}`` with an optional ``"cmp"`` (default ``">"``); the true branch
is taken when ``stats[field] <cmp> threshold``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

from . import pipeline as pl
from .errors import PredictorFormatError

ML_TO_SQL = "MLtoSQL"
ML_TO_DNN = "MLtoDNN"
NO_TRANSFORM = "NoTransform"
CHOICES = (ML_TO_SQL, ML_TO_DNN, NO_TRANSFORM)

FEATURE_LIMIT = 100
INPUT_LIMIT = 12
DEPTH_LIMIT = 10


@dataclass(frozen=True)
class PipelineStats:
    n_pipeline_inputs: float = 0.0
    n_model_features: float = 0.0
    n_operators_total: float = 0.0
    n_scaler: float = 0.0
    n_normalizer: float = 0.0
    n_one_hot_encoder: float = 0.0
    n_label_encoder: float = 0.0
    n_concat: float = 0.0
    n_feature_extractor: float = 0.0
    n_linear_model: float = 0.0
    n_tree_ensemble: float = 0.0
    mean_ohe_outputs: float = 0.0
    max_ohe_outputs: float = 0.0
    n_trees: float = 0.0
    mean_tree_depth: float = 0.0
    max_tree_depth: float = 0.0
    stddev_tree_depth: float = 0.0
    n_tree_nodes_total: float = 0.0
    n_leaves_total: float = 0.0
    linear_weight_count: float = 0.0
    linear_zero_weight_fraction: float = 0.0
    max_operator_fan_in: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


STAT_FIELDS = tuple(f.name for f in fields(PipelineStats))

_KIND_FIELDS = {
    pl.Scaler: "n_scaler",
    pl.Normalizer: "n_normalizer",
    pl.OneHotEncoder: "n_one_hot_encoder",
    pl.LabelEncoder: "n_label_encoder",
    pl.Concat: "n_concat",
    pl.FeatureExtractor: "n_feature_extractor",
    pl.LinearModel: "n_linear_model",
    pl.TreeEnsemble: "n_tree_ensemble",
}


def extract_stats(p: pl.ModelPipeline) -> PipelineStats:
    counts = {name: 0 for name in _KIND_FIELDS.values()}
    for n in p.nodes:
        kind = _KIND_FIELDS.get(type(n.op))
        if kind:
            counts[kind] += 1
    widths = p.widths()
    model = p.model_node
    n_features = sum(widths[s] for s in model.inputs) if model is not None else 0

    ohe = [sum(len(c) for c in n.op.categories) for n in p.nodes if isinstance(n.op, pl.OneHotEncoder)]
    depths, nodes, leaves = [], 0, 0
    weights = zeros = 0
    for n in p.nodes:
        if isinstance(n.op, pl.TreeEnsemble):
            for t in n.op.trees:
                depths.append(pl.tree_depth(t))
                nodes += pl.tree_size(t)
                leaves += len(pl.tree_leaves(t))
        elif isinstance(n.op, pl.LinearModel):
            for row in n.op.weights:
                weights += len(row)
                zeros += sum(1 for w in row if w == 0)
    mean_depth = sum(depths) / len(depths) if depths else 0.0
    std_depth = math.sqrt(sum((d - mean_depth) ** 2 for d in depths) / len(depths)) if depths else 0.0
    fan_in = max((len(n.inputs) for n in p.nodes), default=0)
    return PipelineStats(
        n_pipeline_inputs=float(len(p.inputs)),
        n_model_features=float(n_features),
        n_operators_total=float(len(p.nodes)),
        **{k: float(v) for k, v in counts.items()},
        mean_ohe_outputs=float(sum(ohe) / len(ohe)) if ohe else 0.0,
        max_ohe_outputs=float(max(ohe, default=0)),
        n_trees=float(len(depths)),
        mean_tree_depth=float(mean_depth),
        max_tree_depth=float(max(depths, default=0)),
        stddev_tree_depth=float(std_depth),
        n_tree_nodes_total=float(nodes),
        n_leaves_total=float(leaves),
        linear_weight_count=float(weights),
        linear_zero_weight_fraction=float(zeros / weights) if weights else 0.0,
        max_operator_fan_in=float(fan_in),
    )


@dataclass(frozen=True)
class TransformChoice:
    choice: str
    rationale: str = ""


def choose_transform(stats: PipelineStats, has_gpu: bool = False) -> TransformChoice:
    """The default rule-based strategy."""
    if stats.n_model_features > FEATURE_LIMIT:
        why = f"n_model_features={stats.n_model_features:g} > {FEATURE_LIMIT}"
        if not has_gpu:
            why += "; no GPU, the tensor program runs on the CPU interpreter"
        return TransformChoice(ML_TO_DNN, why)
    if stats.n_pipeline_inputs > INPUT_LIMIT and stats.mean_tree_depth <= DEPTH_LIMIT:
        return TransformChoice(
            ML_TO_SQL,
            f"n_pipeline_inputs={stats.n_pipeline_inputs:g} > {INPUT_LIMIT} and "
            f"mean_tree_depth={stats.mean_tree_depth:g} <= {DEPTH_LIMIT}",
        )
    return TransformChoice(
        NO_TRANSFORM,
        f"n_model_features={stats.n_model_features:g} <= {FEATURE_LIMIT}, "
        f"n_pipeline_inputs={stats.n_pipeline_inputs:g}, mean_tree_depth={stats.mean_tree_depth:g}",
    )


# --------------------------------------------------------------------------
# external decision tables

_TABLE_CMPS = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
}


class _Missing(Exception):
    pass


def check_table(node, path="$"):
    """Raise PredictorFormatError unless ``node`` is a well-formed table."""
    if not isinstance(node, dict):
        raise PredictorFormatError(f"{path}: expected an object")
    if "choice" in node:
        if node["choice"] not in CHOICES:
            raise PredictorFormatError(f"{path}: unknown choice {node['choice']!r}")
        if set(node) != {"choice"}:
            raise PredictorFormatError(f"{path}: a leaf holds only 'choice'")
        return
    for key in ("field", "threshold", "true", "false"):
        if key not in node:
            raise PredictorFormatError(f"{path}: missing {key!r}")
    extra = set(node) - {"field", "threshold", "true", "false", "cmp"}
    if extra:
        raise PredictorFormatError(f"{path}: unexpected keys {sorted(extra)}")
    if not isinstance(node["field"], str):
        raise PredictorFormatError(f"{path}: 'field' must be a string")
    t = node["threshold"]
    if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
        raise PredictorFormatError(f"{path}: 'threshold' must be a finite number")
    if node.get("cmp", ">") not in _TABLE_CMPS:
        raise PredictorFormatError(f"{path}: unknown cmp {node.get('cmp')!r}")
    check_table(node["true"], path + ".true")
    check_table(node["false"], path + ".false")


def load_table(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise PredictorFormatError(f"{path}: invalid JSON ({e})") from None
    check_table(doc)
    return doc


def _walk(node, values: dict):
    while "choice" not in node:
        v = values.get(node["field"])
        if v is None:
            raise _Missing(node["field"])
        node = node["true"] if _TABLE_CMPS[node.get("cmp", ">")](v, node["threshold"]) else node["false"]
    return node["choice"]


def choose_transform_external(stats, predictor_table, has_gpu: bool = False) -> TransformChoice:
    """Evaluate a decision table (path or parsed document) over ``stats``.

    A table that tests a field the stats do not carry falls back to the
    default rule.
    """
    table = load_table(predictor_table) if isinstance(predictor_table, (str, bytes)) or hasattr(
        predictor_table, "__fspath__") else predictor_table
    check_table(table)
    values = stats.to_dict() if isinstance(stats, PipelineStats) else dict(stats)
    try:
        return TransformChoice(_walk(table, values), "decision table")
    except _Missing as e:
        fallback = choose_transform(
            stats if isinstance(stats, PipelineStats) else PipelineStats(
                **{k: float(v) for k, v in values.items() if k in STAT_FIELDS}),
            has_gpu,
        )
        return TransformChoice(fallback.choice, f"table field {e.args[0]!r} missing; rule: {fallback.rationale}")


def choose(stats: PipelineStats, spec: str = "rule", has_gpu: bool = False) -> TransformChoice:
    """Dispatch on a CLI strategy spec: ``rule``, ``none`` or ``table:<path>``."""
    if spec == "rule":
        return choose_transform(stats, has_gpu)
    if spec == "none":
        return TransformChoice(NO_TRANSFORM, "strategy disabled")
    if spec.startswith("table:"):
        return choose_transform_external(stats, spec[len("table:"):], has_gpu)
    raise ValueError(f"unknown strategy {spec!r}")

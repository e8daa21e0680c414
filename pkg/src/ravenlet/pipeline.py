"""Trained-pipeline graph format.

A pipeline is a small DAG of featurizers feeding exactly one model
(linear or tree ensemble). Pipelines are stored as JSON documents tagged
``"format": "ravenlet/1"``; see ``docs/formats.md`` for the schema.

Operators take an ordered list of input ports. The values arriving on the
ports are concatenated into one feature vector, so ``Scaler`` over the
ports ``[age, bpm]`` sees a width-2 vector. ``Concat`` is the identity over
that implicit concatenation and exists so graphs exported from other
frameworks keep their shape.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

from .errors import SchemaError, ValidationError

FORMAT_TAG = "ravenlet/1"

DTYPES = ("float64", "int64", "string")
CMP_OPS = ("<", "<=", ">", ">=", "==")
NORMS = ("L1", "L2", "MAX")
AGGREGATES = ("sum", "average", "vote")
TASKS = ("binary_classification", "regression")
POSTS = ("none", "logistic")

Literal = Union[float, int, str]


# --------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class Leaf:
    value: tuple[float, ...]


@dataclass(frozen=True)
class Internal:
    feature: int
    cmp: str
    threshold: float
    true: "TreeNode"
    false: "TreeNode"


TreeNode = Union[Leaf, Internal]


def compare(cmp, x, threshold):
    """Evaluate a node test. Works on scalars and numpy arrays alike."""
    if cmp == "<":
        return x < threshold
    if cmp == "<=":
        return x <= threshold
    if cmp == ">":
        return x > threshold
    if cmp == ">=":
        return x >= threshold
    if cmp == "==":
        return x == threshold
    raise ValueError(f"unknown comparison {cmp!r}")


def tree_depth(node: TreeNode) -> int:
    """Longest root-to-leaf edge count; a bare leaf has depth 0."""
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.true), tree_depth(node.false))


def tree_size(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 1
    return 1 + tree_size(node.true) + tree_size(node.false)


def tree_leaves(node: TreeNode) -> list[Leaf]:
    out = []
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Leaf):
            out.append(n)
        else:
            stack.append(n.false)
            stack.append(n.true)
    return out


def tree_features(node: TreeNode) -> set[int]:
    feats = set()
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Internal):
            feats.add(n.feature)
            stack.append(n.true)
            stack.append(n.false)
    return feats


def remap_tree(node: TreeNode, mapping: dict[int, int]) -> TreeNode:
    if isinstance(node, Leaf):
        return node
    return Internal(
        mapping[node.feature],
        node.cmp,
        node.threshold,
        remap_tree(node.true, mapping),
        remap_tree(node.false, mapping),
    )


# --------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class Scaler:
    offsets: tuple[float, ...]
    scales: tuple[float, ...]


@dataclass(frozen=True)
class Normalizer:
    norm: str


@dataclass(frozen=True)
class OneHotEncoder:
    categories: tuple[tuple[Literal, ...], ...]


@dataclass(frozen=True)
class LabelEncoder:
    """Maps each input column through ``mapping``; unseen values become -1."""

    mapping: tuple[tuple[Literal, int], ...]


@dataclass(frozen=True)
class Concat:
    arity: int


@dataclass(frozen=True)
class FeatureExtractor:
    indices: tuple[int, ...]


@dataclass(frozen=True)
class Constant:
    values: tuple[Literal, ...]


@dataclass(frozen=True)
class LinearModel:
    weights: tuple[tuple[float, ...], ...]
    intercepts: tuple[float, ...]
    post: str = "none"
    classes: tuple[Literal, ...] | None = None

    @property
    def task(self):
        return "binary_classification" if self.post == "logistic" else "regression"


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple[TreeNode, ...]
    aggregate: str = "sum"
    task: str = "binary_classification"
    post: str = "none"
    classes: tuple[Literal, ...] | None = None


FEATURIZERS = (Scaler, Normalizer, OneHotEncoder, LabelEncoder, Concat, FeatureExtractor, Constant)
MODELS = (LinearModel, TreeEnsemble)
MLOperator = Union[
    Scaler, Normalizer, OneHotEncoder, LabelEncoder, Concat, FeatureExtractor, Constant,
    LinearModel, TreeEnsemble,
]
OP_NAMES = {cls.__name__: cls for cls in FEATURIZERS + MODELS}


def is_model(op) -> bool:
    return isinstance(op, MODELS)


def output_width(op, in_width: int) -> int:
    """Width of a featurizer's output vector given its input width."""
    if isinstance(op, (Scaler, Normalizer, LabelEncoder, Concat)):
        return in_width
    if isinstance(op, OneHotEncoder):
        return sum(len(c) for c in op.categories)
    if isinstance(op, FeatureExtractor):
        return len(op.indices)
    if isinstance(op, Constant):
        return len(op.values)
    raise TypeError(f"{type(op).__name__} has no vector output")


def model_classes(op):
    """Class labels of a binary classifier, or None for regression."""
    if op.task != "binary_classification":
        return None
    return op.classes if op.classes is not None else (0, 1)


# --------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class PipelineInput:
    name: str
    dtype: str


@dataclass(frozen=True)
class PipelineNode:
    id: str
    op: MLOperator
    inputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineOutput:
    name: str
    node: str
    port: str  # "label" or "score"


@dataclass(frozen=True)
class ModelPipeline:
    name: str
    inputs: tuple[PipelineInput, ...]
    nodes: tuple[PipelineNode, ...]
    outputs: tuple[PipelineOutput, ...]

    def node(self, node_id) -> PipelineNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def input_names(self):
        return [i.name for i in self.inputs]

    @property
    def model_node(self) -> PipelineNode:
        for n in self.nodes:
            if is_model(n.op):
                return n
        raise ValidationError("pipeline has no model node")

    @property
    def edges(self):
        return [(src, n.id, port) for n in self.nodes for port, src in enumerate(n.inputs)]

    def output(self, port):
        for o in self.outputs:
            if o.port == port:
                return o
        return None

    def widths(self) -> dict[str, int]:
        """Output width of every pipeline input and featurizer node."""
        return _widths(self)


@dataclass
class ValidationIssue:
    node_id: str | None
    reason: str

    def __str__(self):
        return f"{self.node_id}: {self.reason}" if self.node_id else self.reason


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    def add(self, node_id, reason):
        self.issues.append(ValidationIssue(node_id, reason))

    def __bool__(self):
        return bool(self.issues)

    def __len__(self):
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)

    def reasons(self):
        return [i.reason for i in self.issues]


def _order(p: ModelPipeline):
    """Topological order of node ids, or None if the node graph has a cycle."""
    ids = {n.id for n in p.nodes}
    deps = {n.id: [s for s in n.inputs if s in ids] for n in p.nodes}
    order, state = [], {}

    for start in sorted(deps):
        if state.get(start):
            continue
        stack = [(start, iter(deps[start]))]
        state[start] = 1
        while stack:
            nid, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                state[nid] = 2
                order.append(nid)
            elif state.get(nxt) == 1:
                return None
            elif not state.get(nxt):
                state[nxt] = 1
                stack.append((nxt, iter(deps[nxt])))
    return order


def topo_nodes(p: ModelPipeline) -> list[PipelineNode]:
    order = _order(p)
    if order is None:
        raise ValidationError("cycle in node graph")
    by_id = {n.id: n for n in p.nodes}
    return [by_id[i] for i in order]


def _widths(p):
    widths = {i.name: 1 for i in p.inputs}
    for n in topo_nodes(p):
        if is_model(n.op):
            continue
        in_w = sum(widths[s] for s in n.inputs)
        widths[n.id] = output_width(n.op, in_w)
    return widths


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate(p: ModelPipeline) -> ValidationReport:
    """Check every structural invariant; violations are returned, not raised."""
    rep = ValidationReport()
    input_names = [i.name for i in p.inputs]
    node_ids = [n.id for n in p.nodes]
    if len(set(input_names)) != len(input_names):
        rep.add(None, "duplicate input name")
    if len(set(node_ids)) != len(node_ids):
        rep.add(None, "duplicate node id")
    for i in p.inputs:
        if i.dtype not in DTYPES:
            rep.add(i.name, f"unknown dtype {i.dtype!r}")
    for nid in set(node_ids) & set(input_names):
        rep.add(nid, "node id collides with input name")

    known = set(input_names) | set(node_ids)
    models = [n for n in p.nodes if is_model(n.op)]
    model_ids = {n.id for n in models}
    if len(models) != 1:
        rep.add(None, f"expected exactly one model node, found {len(models)}")
    for n in p.nodes:
        for src in n.inputs:
            if src not in known:
                rep.add(n.id, f"dangling edge from {src!r}")
            elif src in model_ids:
                rep.add(n.id, f"model output {src!r} cannot feed another operator")
    if rep:
        return rep
    if _order(p) is None:
        rep.add(None, "cycle in node graph")
        return rep

    # width and slot-kind propagation; kinds are "num" or "str"
    kinds = {i.name: ["str" if i.dtype == "string" else "num"] for i in p.inputs}
    for n in topo_nodes(p):
        in_kinds = [k for s in n.inputs for k in kinds[s]]
        width = len(in_kinds)
        op = n.op
        if isinstance(op, Constant):
            if n.inputs:
                rep.add(n.id, "Constant takes no inputs")
            kinds[n.id] = ["str" if isinstance(v, str) else "num" for v in op.values]
            continue
        if not n.inputs and not isinstance(op, MODELS):
            rep.add(n.id, "operator has no inputs")
        if isinstance(op, (Scaler, Normalizer)) or is_model(op):
            if "str" in in_kinds:
                rep.add(n.id, "string input to numeric operator")
        if isinstance(op, Scaler):
            if len(op.offsets) != width or len(op.scales) != width:
                rep.add(n.id, f"Scaler parameters do not match input width {width}")
            if not all(math.isfinite(v) for v in op.scales):
                rep.add(n.id, "non-finite scale")
            if not all(math.isfinite(v) for v in op.offsets):
                rep.add(n.id, "non-finite offset")
            kinds[n.id] = ["num"] * width
        elif isinstance(op, Normalizer):
            if op.norm not in NORMS:
                rep.add(n.id, f"unknown norm {op.norm!r}")
            kinds[n.id] = ["num"] * width
        elif isinstance(op, OneHotEncoder):
            if len(op.categories) != width:
                rep.add(n.id, f"{len(op.categories)} category lists for input width {width}")
            for col, cats in enumerate(op.categories):
                if not cats:
                    rep.add(n.id, "empty category list")
                if len(set(cats)) != len(cats):
                    rep.add(n.id, "duplicate category")
                if col < width:
                    want_str = in_kinds[col] == "str"
                    if any(isinstance(c, str) != want_str for c in cats):
                        rep.add(n.id, "category type does not match input dtype")
            kinds[n.id] = ["num"] * sum(len(c) for c in op.categories)
        elif isinstance(op, LabelEncoder):
            keys = [k for k, _ in op.mapping]
            if len(set(keys)) != len(keys):
                rep.add(n.id, "duplicate label key")
            if not all(isinstance(v, int) and not isinstance(v, bool) for _, v in op.mapping):
                rep.add(n.id, "label codes must be integers")
            kinds[n.id] = ["num"] * width
        elif isinstance(op, Concat):
            if op.arity < 1 or op.arity != len(n.inputs):
                rep.add(n.id, f"Concat arity {op.arity} but {len(n.inputs)} inputs wired")
            kinds[n.id] = in_kinds
        elif isinstance(op, FeatureExtractor):
            if len(set(op.indices)) != len(op.indices):
                rep.add(n.id, "duplicate feature index")
            if any(not 0 <= i < width for i in op.indices):
                rep.add(n.id, f"feature index out of range for width {width}")
                kinds[n.id] = ["num"] * len(op.indices)
            else:
                kinds[n.id] = [in_kinds[i] for i in op.indices]
        elif isinstance(op, LinearModel):
            if len(op.weights) != width:
                rep.add(n.id, f"LinearModel has {len(op.weights)} weight rows for width {width}")
            if len(op.intercepts) != 1 or any(len(r) != 1 for r in op.weights):
                rep.add(n.id, "only single-output linear models are supported")
            if op.post not in POSTS:
                rep.add(n.id, f"unknown post {op.post!r}")
            _check_classes(rep, n.id, op)
        elif isinstance(op, TreeEnsemble):
            _check_ensemble(rep, n.id, op, width)

    names = [o.name for o in p.outputs]
    if len(set(names)) != len(names):
        rep.add(None, "duplicate output name")
    if not any(o.port == "label" for o in p.outputs):
        rep.add(None, "pipeline must expose a label output")
    for o in p.outputs:
        if o.node not in model_ids:
            rep.add(o.node, "output does not reference the model node")
        if o.port not in ("label", "score"):
            rep.add(o.node, f"unknown output port {o.port!r}")
    return rep


def _check_classes(rep, nid, op):
    if op.classes is None:
        return
    if op.task != "binary_classification":
        rep.add(nid, "classes given for a regression model")
    elif len(op.classes) != 2 or len(set(op.classes)) != 2:
        rep.add(nid, "binary classifier needs two distinct classes")
    elif len({isinstance(c, str) for c in op.classes}) != 1:
        rep.add(nid, "classes must share one type")


def _check_ensemble(rep, nid, op, width):
    if op.aggregate not in AGGREGATES:
        rep.add(nid, f"unknown aggregate {op.aggregate!r}")
    if op.task not in TASKS:
        rep.add(nid, f"unknown task {op.task!r}")
    if op.post not in POSTS:
        rep.add(nid, f"unknown post {op.post!r}")
    if op.aggregate == "vote" and op.task != "binary_classification":
        rep.add(nid, "vote aggregation needs a classification task")
    if not op.trees:
        rep.add(nid, "ensemble has no trees")
    _check_classes(rep, nid, op)
    for t in op.trees:
        stack = [t]
        while stack:
            n = stack.pop()
            if isinstance(n, Leaf):
                if len(n.value) != 1 or not all(math.isfinite(v) for v in n.value):
                    rep.add(nid, "leaf must hold one finite value")
                continue
            if not 0 <= n.feature < width:
                rep.add(nid, f"tree feature {n.feature} out of range for width {width}")
            if n.cmp not in CMP_OPS:
                rep.add(nid, f"unknown comparison {n.cmp!r}")
            if not math.isfinite(n.threshold):
                rep.add(nid, "non-finite threshold")
            stack.append(n.true)
            stack.append(n.false)


def check(p: ModelPipeline) -> ModelPipeline:
    rep = validate(p)
    if rep:
        first = rep.issues[0]
        raise ValidationError(first.reason, node_id=first.node_id, report=rep.issues)
    return p


# --------------------------------------------------------------------------
# JSON


def _tree_from_json(d):
    if not isinstance(d, dict):
        raise SchemaError("tree node must be an object")
    if "leaf" in d:
        v = d["leaf"]
        vals = v if isinstance(v, list) else [v]
        if not all(_is_num(x) for x in vals):
            raise SchemaError("leaf values must be numbers")
        return Leaf(tuple(float(x) for x in vals))
    try:
        return Internal(
            int(d["feature"]),
            str(d["cmp"]),
            float(d["threshold"]),
            _tree_from_json(d["true"]),
            _tree_from_json(d["false"]),
        )
    except KeyError as e:
        raise SchemaError(f"tree node missing key {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise SchemaError(f"bad tree node: {e}") from None


def _tree_to_json(t):
    if isinstance(t, Leaf):
        return {"leaf": list(t.value)}
    return {
        "feature": t.feature,
        "cmp": t.cmp,
        "threshold": t.threshold,
        "true": _tree_to_json(t.true),
        "false": _tree_to_json(t.false),
    }


def _floats(v, what):
    if not isinstance(v, list) or not all(_is_num(x) for x in v):
        raise SchemaError(f"{what} must be a list of numbers")
    return tuple(float(x) for x in v)


def _literal(v):
    if isinstance(v, str) or _is_num(v):
        return v
    raise SchemaError(f"literal must be a number or string, got {v!r}")


def _classes(d):
    c = d.get("classes")
    return None if c is None else tuple(_literal(x) for x in c)


def op_from_json(d) -> MLOperator:
    kind = d.get("op")
    if kind not in OP_NAMES:
        raise SchemaError(f"unknown op {kind!r}")
    try:
        if kind == "Scaler":
            return Scaler(_floats(d["offsets"], "offsets"), _floats(d["scales"], "scales"))
        if kind == "Normalizer":
            return Normalizer(str(d["norm"]))
        if kind == "OneHotEncoder":
            return OneHotEncoder(tuple(tuple(_literal(c) for c in col) for col in d["categories"]))
        if kind == "LabelEncoder":
            m = d["mapping"]
            pairs = m.items() if isinstance(m, dict) else [tuple(x) for x in m]
            return LabelEncoder(tuple((_literal(k), v) for k, v in pairs))
        if kind == "Concat":
            return Concat(int(d["arity"]))
        if kind == "FeatureExtractor":
            return FeatureExtractor(tuple(int(i) for i in d["indices"]))
        if kind == "Constant":
            return Constant(tuple(_literal(v) for v in d["values"]))
        if kind == "LinearModel":
            return LinearModel(
                tuple(_floats(r, "weights row") for r in d["weights"]),
                _floats(d["intercepts"], "intercepts"),
                d.get("post", "none"),
                _classes(d),
            )
        return TreeEnsemble(
            tuple(_tree_from_json(t) for t in d["trees"]),
            d.get("aggregate", "sum"),
            d.get("task", "binary_classification"),
            d.get("post", "none"),
            _classes(d),
        )
    except KeyError as e:
        raise SchemaError(f"{kind} missing field {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise SchemaError(f"bad {kind}: {e}") from None


def op_to_json(op) -> dict:
    kind = type(op).__name__
    d = {"op": kind}
    if isinstance(op, Scaler):
        d.update(offsets=list(op.offsets), scales=list(op.scales))
    elif isinstance(op, Normalizer):
        d["norm"] = op.norm
    elif isinstance(op, OneHotEncoder):
        d["categories"] = [list(c) for c in op.categories]
    elif isinstance(op, LabelEncoder):
        d["mapping"] = [[k, v] for k, v in op.mapping]
    elif isinstance(op, Concat):
        d["arity"] = op.arity
    elif isinstance(op, FeatureExtractor):
        d["indices"] = list(op.indices)
    elif isinstance(op, Constant):
        d["values"] = list(op.values)
    elif isinstance(op, LinearModel):
        d.update(weights=[list(r) for r in op.weights], intercepts=list(op.intercepts), post=op.post)
        if op.classes is not None:
            d["classes"] = list(op.classes)
    elif isinstance(op, TreeEnsemble):
        d.update(
            aggregate=op.aggregate,
            task=op.task,
            post=op.post,
            trees=[_tree_to_json(t) for t in op.trees],
        )
        if op.classes is not None:
            d["classes"] = list(op.classes)
    return d


def from_dict(doc) -> ModelPipeline:
    if not isinstance(doc, dict):
        raise SchemaError("pipeline document must be a JSON object")
    fmt = doc.get("format", FORMAT_TAG)
    if fmt != FORMAT_TAG:
        raise SchemaError(f"unsupported format {fmt!r}")
    for key in ("name", "inputs", "nodes", "edges", "outputs"):
        if key not in doc:
            raise SchemaError(f"missing top-level key {key!r}")
    try:
        inputs = tuple(PipelineInput(str(i["name"]), str(i["dtype"])) for i in doc["inputs"])
    except (KeyError, TypeError):
        raise SchemaError("inputs must be objects with name and dtype") from None

    raw_nodes = doc["nodes"]
    if not isinstance(raw_nodes, list) or not all(isinstance(n, dict) and "id" in n for n in raw_nodes):
        raise SchemaError("nodes must be a list of objects with an id")

    wiring: dict[str, dict[int, str]] = {n["id"]: {} for n in raw_nodes}
    for e in doc["edges"]:
        try:
            src, dst, port = str(e["from"]), str(e["to"]), int(e.get("port", 0))
        except (KeyError, TypeError, ValueError):
            raise SchemaError("edges need from/to/port") from None
        if dst not in wiring:
            raise ValidationError(f"dangling edge into unknown node {dst!r}", node_id=dst)
        if port in wiring[dst]:
            raise ValidationError(f"port {port} wired twice", node_id=dst)
        wiring[dst][port] = src

    nodes = []
    for n in raw_nodes:
        ports = wiring[n["id"]]
        if sorted(ports) != list(range(len(ports))):
            raise ValidationError("input ports must be numbered 0..k-1", node_id=n["id"])
        nodes.append(PipelineNode(str(n["id"]), op_from_json(n), tuple(ports[i] for i in range(len(ports)))))

    outs = doc["outputs"]
    if isinstance(outs, dict):
        outs = [dict(name=k, **v) if isinstance(v, dict) else _out_ref(k, v) for k, v in outs.items()]
    try:
        outputs = tuple(PipelineOutput(str(o["name"]), str(o["node"]), str(o["port"])) for o in outs)
    except (KeyError, TypeError):
        raise SchemaError("outputs must be objects with name, node and port") from None
    return ModelPipeline(str(doc["name"]), inputs, tuple(nodes), outputs)


def _out_ref(name, ref):
    node, _, port = str(ref).partition(".")
    return {"name": name, "node": node, "port": port or name}


def to_dict(p: ModelPipeline) -> dict:
    nodes = []
    for n in p.nodes:
        d = {"id": n.id}
        d.update(op_to_json(n.op))
        nodes.append(d)
    return {
        "format": FORMAT_TAG,
        "name": p.name,
        "inputs": [{"name": i.name, "dtype": i.dtype} for i in p.inputs],
        "nodes": nodes,
        "edges": [{"from": s, "to": d, "port": k} for s, d, k in p.edges],
        "outputs": [{"name": o.name, "node": o.node, "port": o.port} for o in p.outputs],
    }


def load_pipeline(data) -> ModelPipeline:
    """Parse and validate a pipeline document (bytes or str)."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}") from None
    return check(from_dict(doc))


def save_pipeline(p: ModelPipeline) -> bytes:
    check(p)
    return json.dumps(to_dict(p), indent=2, allow_nan=False).encode("utf-8")


def read_pipeline(path) -> ModelPipeline:
    with open(path, "rb") as f:
        return load_pipeline(f.read())

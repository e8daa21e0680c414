"""Compile linear models and tree ensembles into straight-line tensor programs.

Trees use the GEMM encoding. For one tree with internal nodes ``I`` and leaves
``L``:

1. ``GATHER`` the tested feature of every internal node (N x I);
2. ``COMPARE`` against the threshold vector with each node's own comparison;
3. ``MATMUL`` the 0/1 outcome matrix with the path matrix ``C`` (I x L), where
   ``C[i, l]`` is +1 if leaf ``l`` lies under the true child of ``i``, -1 under
   the false child, 0 otherwise;
4. ``COMPARE`` the result with ``D[l]``, the number of true edges on the path
   to ``l``: exactly one leaf matches per row;
5. ``MATMUL`` the leaf indicator with the leaf values.

Every product in steps 3 and 5 is exact (small integers, or one non-zero term
per row), so a compiled tree returns the traversal's leaf value bit for bit.
Linear models gather the non-zero-weight features and use an ordered
``MATMUL`` that accumulates left to right, matching the reference evaluator.

The interpreter in :func:`run_program` is a correctness reference, not a
fast runtime.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ir
from . import pipeline as pl
from .errors import ShapeError, UnsupportedModel

OPS = ("GATHER", "MATMUL", "ADD", "COMPARE", "CAST", "REDUCE_SUM", "DIV", "SIGMOID", "ARGMAX")
_CMPS = ("<", "<=", ">", ">=", "==")


@dataclass(frozen=True)
class Tensor:
    shape: tuple
    data: tuple  # float64, row-major

    def __post_init__(self):
        if int(np.prod(self.shape, dtype=np.int64)) != len(self.data):
            raise ShapeError(f"tensor data has {len(self.data)} values for shape {self.shape}")

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=np.float64)
        return cls(tuple(a.shape), tuple(a.ravel().tolist()))

    def array(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64).reshape(self.shape)


@dataclass(frozen=True)
class TensorOp:
    op: str
    inputs: tuple  # tensor names
    output: str
    attrs: dict = field(default_factory=dict, compare=False, hash=False)


@dataclass(frozen=True)
class TensorProgram:
    n_features: int
    constants: dict = field(compare=False, hash=False)  # name -> np.ndarray
    ops: tuple = ()
    outputs: tuple = (("label", ""), ("score", ""))  # (binding, tensor name)

    def output(self, name):
        return dict(self.outputs)[name]

    def __eq__(self, other):
        if not isinstance(other, TensorProgram):
            return NotImplemented
        return program_to_dict(self) == program_to_dict(other)

    def __hash__(self):
        return hash((self.n_features, len(self.ops)))


# --------------------------------------------------------------------------
# building


class _Builder:
    def __init__(self, n_features):
        self.n_features = n_features
        self.constants: dict = {}
        self.ops: list = []
        self.shapes = {"X": ("N", n_features)}

    def const(self, base, value):
        name = f"{base}{len(self.constants)}"
        a = np.asarray(value, dtype=np.float64)
        self.constants[name] = a
        self.shapes[name] = tuple(a.shape)
        return name

    def emit(self, op, inputs, base, **attrs):
        name = f"{base}{len(self.ops)}"
        self.ops.append(TensorOp(op, tuple(inputs), name, attrs))
        self.shapes[name] = _infer(op, [self.shapes[i] for i in inputs], attrs)
        return name

    def program(self, label, score):
        return TensorProgram(self.n_features, dict(self.constants), tuple(self.ops),
                             (("label", label), ("score", score)))


def _tree_tables(tree):
    """(features, cmps, thresholds, C, D, leaf values) for one tree."""
    internal, leaves = [], []

    def walk(node, path):
        if isinstance(node, pl.Leaf):
            leaves.append((float(node.value[0]), path))
            return
        i = len(internal)
        internal.append(node)
        walk(node.true, path + ((i, 1),))
        walk(node.false, path + ((i, -1),))

    walk(tree, ())
    n_i, n_l = len(internal), len(leaves)
    C = np.zeros((n_i, n_l))
    D = np.zeros(n_l)
    for l, (_, path) in enumerate(leaves):
        for i, sign in path:
            C[i, l] = sign
        D[l] = sum(1 for _, s in path if s > 0)
    feats = [n.feature for n in internal]
    cmps = [n.cmp for n in internal]
    thr = np.array([float(n.threshold) for n in internal])
    values = np.array([[v] for v, _ in leaves])
    return feats, cmps, thr, C, D, values


def _compile_tree(b: _Builder, tree) -> str:
    """Emit ops computing the leaf value of ``tree``; returns an (N, 1) name."""
    feats, cmps, thr, C, D, values = _tree_tables(tree)
    if not feats:
        # a bare leaf: gather nothing and add the value to a zero column
        empty = b.emit("GATHER", ["X"], "g", indices=[])
        zero = b.emit("MATMUL", [empty, b.const("w", np.zeros((0, 1)))], "m", ordered=True)
        return b.emit("ADD", [zero, b.const("v", values[0])], "a")
    g = b.emit("GATHER", ["X"], "g", indices=list(feats))
    t = b.emit("COMPARE", [g, b.const("thr", thr)], "c", cmps=list(cmps))
    t = b.emit("CAST", [t], "f")
    paths = b.emit("MATMUL", [t, b.const("C", C)], "m", ordered=False)
    hit = b.emit("COMPARE", [paths, b.const("D", D)], "c", cmps=["=="] * len(D))
    hit = b.emit("CAST", [hit], "f")
    return b.emit("MATMUL", [hit, b.const("E", values)], "m", ordered=True)


def _classify(b: _Builder, score):
    hit = b.emit("COMPARE", [score, b.const("half", [0.5])], "c", cmps=[">="])
    return b.emit("CAST", [hit], "f")


def compile_tree_to_tensors(t: pl.TreeEnsemble, n_features=None) -> TensorProgram:
    """Tensor program returning ``(label in {0, 1}, score)`` per row."""
    width = max((max(pl.tree_features(tr), default=-1) for tr in t.trees), default=-1) + 1
    n_features = width if n_features is None else n_features
    if n_features < width:
        raise ShapeError(f"trees read feature {width - 1} but the input has {n_features}")
    b = _Builder(n_features)
    cols = [_compile_tree(b, tr) for tr in t.trees]
    if t.aggregate == "vote":
        if pl.model_classes(t) is None:
            raise UnsupportedModel("TreeEnsemble", "vote aggregation needs a binary classifier")
        # one 0/1 vote column per tree, counted left to right
        votes = [b.emit("CAST", [b.emit("COMPARE", [c, b.const("half", [0.5])], "c", cmps=[">="])], "f")
                 for c in cols]
        stacked = b.emit("REDUCE_SUM", votes, "s")
        k = float(len(cols))
        score = b.emit("DIV", [stacked, b.const("n", [k])], "d")
        lab = b.emit("CAST", [b.emit("COMPARE", [stacked, b.const("half_n", [k / 2.0])], "c", cmps=[">"])], "f")
        return b.program(lab, score)
    score = b.emit("REDUCE_SUM", cols, "s")
    if t.aggregate == "average":
        score = b.emit("DIV", [score, b.const("n", [float(len(cols))])], "d")
    if t.post == "logistic":
        score = b.emit("SIGMOID", [score], "p")
    if pl.model_classes(t) is None:
        return b.program(score, score)
    return b.program(_classify(b, score), score)


def compile_linear_to_tensors(m: pl.LinearModel) -> TensorProgram:
    b = _Builder(len(m.weights))
    used = [j for j, row in enumerate(m.weights) if row[0] != 0]
    g = b.emit("GATHER", ["X"], "g", indices=used)
    W = np.array([[float(m.weights[j][0])] for j in used]).reshape(len(used), 1)
    raw = b.emit("MATMUL", [g, b.const("W", W)], "m", ordered=True)
    score = b.emit("ADD", [raw, b.const("b", [float(m.intercepts[0])])], "a")
    if m.post == "logistic":
        score = b.emit("SIGMOID", [score], "p")
    if pl.model_classes(m) is None:
        return b.program(score, score)
    return b.program(_classify(b, score), score)


def compile_model_to_tensors(op, n_features=None) -> TensorProgram:
    if isinstance(op, pl.TreeEnsemble):
        return compile_tree_to_tensors(op, n_features)
    if isinstance(op, pl.LinearModel):
        return compile_linear_to_tensors(op)
    raise UnsupportedModel(type(op).__name__)


# --------------------------------------------------------------------------
# shapes


def _infer(op, shapes, attrs):
    if op not in OPS:
        raise ShapeError(f"unknown tensor op {op!r}")
    if op == "GATHER":
        (s,) = shapes
        for i in attrs["indices"]:
            if not 0 <= i < s[1]:
                raise ShapeError(f"GATHER index {i} out of range for width {s[1]}")
        return (s[0], len(attrs["indices"]))
    if op == "MATMUL":
        a, w = shapes
        if len(w) != 2 or a[1] != w[0]:
            raise ShapeError(f"MATMUL shapes {a} and {w} do not align")
        return (a[0], w[1])
    if op in ("ADD", "COMPARE", "DIV"):
        a, c = shapes
        if len(c) != 1 or c[0] not in (a[1], 1):
            raise ShapeError(f"{op} operand {c} does not broadcast over {a}")
        if op == "COMPARE":
            cmps = attrs["cmps"]
            if len(cmps) not in (a[1], 1) or any(x not in _CMPS for x in cmps):
                raise ShapeError("COMPARE needs one known comparison per column")
        return a
    if op in ("CAST", "SIGMOID"):
        return shapes[0]
    if op == "REDUCE_SUM":
        if not shapes or any(s[1] != 1 for s in shapes):
            raise ShapeError("REDUCE_SUM takes one or more (N, 1) tensors")
        return (shapes[0][0], 1)
    if op == "ARGMAX":
        return (shapes[0][0], 1)
    raise ShapeError(op)


def check_program(p: TensorProgram):
    """Re-run static shape inference; raises ShapeError."""
    shapes = {"X": ("N", p.n_features)}
    shapes.update({k: tuple(v.shape) for k, v in p.constants.items()})
    for o in p.ops:
        for i in o.inputs:
            if i not in shapes:
                raise ShapeError(f"op {o.output} reads undefined tensor {i!r}")
        shapes[o.output] = _infer(o.op, [shapes[i] for i in o.inputs], o.attrs)
    for _, name in p.outputs:
        if name not in shapes or shapes[name][1] != 1:
            raise ShapeError(f"output {name!r} is not an (N, 1) tensor")
    return shapes


# --------------------------------------------------------------------------
# interpreter


def _compare(cmps, a, c):
    if len(cmps) == 1:
        return pl.compare(cmps[0], a, c)
    out = np.empty(a.shape, dtype=bool)
    c = np.broadcast_to(c, (a.shape[1],))
    kinds = np.asarray(cmps)
    for cmp in sorted(set(cmps)):
        cols = np.flatnonzero(kinds == cmp)
        out[:, cols] = pl.compare(cmp, a[:, cols], c[cols])
    return out


def _matmul(a, w, ordered):
    if not ordered:
        return a @ w
    n = a.shape[0]
    if w.shape[0] == 0:
        return np.zeros((n, w.shape[1]))
    acc = a[:, 0:1] * w[0]
    for k in range(1, w.shape[0]):
        acc = acc + a[:, k:k + 1] * w[k]
    return acc


def _run(p: TensorProgram, X):
    env = {"X": X}
    env.update(p.constants)
    with np.errstate(over="ignore", invalid="ignore"):
        for o in p.ops:
            ins = [env[i] for i in o.inputs]
            if o.op == "GATHER":
                v = ins[0][:, list(o.attrs["indices"])]
            elif o.op == "MATMUL":
                v = _matmul(ins[0], ins[1], o.attrs.get("ordered", True))
            elif o.op == "ADD":
                v = ins[0] + ins[1]
            elif o.op == "COMPARE":
                v = _compare(o.attrs["cmps"], ins[0], ins[1])
            elif o.op == "CAST":
                v = ins[0].astype(np.float64)
            elif o.op == "REDUCE_SUM":
                v = ins[0]
                for x in ins[1:]:
                    v = v + x
            elif o.op == "DIV":
                v = ins[0] / ins[1]
            elif o.op == "SIGMOID":
                v = 1.0 / (1.0 + np.exp(-ins[0]))
            elif o.op == "ARGMAX":
                v = np.argmax(ins[0], axis=1).astype(np.float64).reshape(-1, 1)
            else:
                raise ShapeError(f"unknown tensor op {o.op!r}")
            env[o.output] = v
    return env


def run_program(p: TensorProgram, batch, chunk_rows=10_000):
    """Evaluate ``p`` on an (N, n_features) batch; returns ``(labels, scores)``."""
    X = batch.array() if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.n_features:
        raise ShapeError(f"batch shape {X.shape} does not match (N, {p.n_features})")
    label, score = p.output("label"), p.output("score")
    labs, scores = [], []
    for start in range(0, max(len(X), 1), chunk_rows):
        env = _run(p, X[start:start + chunk_rows])
        labs.append(env[label][:, 0])
        scores.append(env[score][:, 0])
    return np.concatenate(labs), np.concatenate(scores)


# --------------------------------------------------------------------------
# serialization


def program_to_dict(p: TensorProgram) -> dict:
    return {
        "n_features": p.n_features,
        "constants": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(p.constants.items())},
        "ops": [{"op": o.op, "inputs": list(o.inputs), "output": o.output, **o.attrs} for o in p.ops],
        "outputs": {k: v for k, v in p.outputs},
    }


def program_from_dict(d) -> TensorProgram:
    try:
        consts = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["constants"].items()}
        ops = []
        for o in d["ops"]:
            attrs = {k: v for k, v in o.items() if k not in ("op", "inputs", "output")}
            ops.append(TensorOp(o["op"], tuple(o["inputs"]), o["output"], attrs))
        p = TensorProgram(int(d["n_features"]), consts, tuple(ops),
                          (("label", d["outputs"]["label"]), ("score", d["outputs"]["score"])))
    except (KeyError, TypeError, ValueError) as e:
        raise ShapeError(f"malformed tensor program: {e}") from None
    check_program(p)
    return p


# --------------------------------------------------------------------------
# plan transform


def to_tensor_model(plan: ir.Plan) -> ir.Plan:
    """Swap the plan's model for a TensorModel; featurizers stay as they are."""
    m = plan.model_node
    if m is None:
        raise UnsupportedModel("PredictBoundary", "plan has no model")
    if isinstance(m.op, ir.TensorModel):
        return plan
    width = sum(plan.schema(s) for s in m.inputs)
    prog = compile_model_to_tensors(m.op, width)
    if prog.n_features != width:
        raise ShapeError(f"program expects {prog.n_features} features, model reads {width}")
    nodes = [ir.PlanNode(n.id, ir.TensorModel(prog, m.op) if n.id == m.id else n.op, n.inputs) for n in plan.nodes]
    return ir.make_plan(nodes, plan.root)

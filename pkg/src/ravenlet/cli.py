"""The ``raven`` command.

Exit codes: 0 success, 1 ``compare`` found too little agreement, 2 bad input
(missing file, parse or binding error, malformed model or stats), 3 internal
error. Diagnostics go to stderr, prefixed ``raven: error:``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from dataclasses import dataclass, field

from . import __version__
from . import ir, ml2dnn, ml2sql, passes, strategy
from . import pipeline as pl
from .errors import RavenletError, UserError
from .executor import load_csv, load_tables
from .frontend import load_catalog, read_query
from .optimizer import load_stats

EXIT_OK = 0
EXIT_DISAGREE = 1
EXIT_USER = 2
EXIT_INTERNAL = 3

EMITS = ("plan", "sql", "tensor", "dot")


class CliError(UserError):
    pass


@dataclass
class RunConfig:
    query: str | None = None
    model: str | None = None
    catalog: str | None = None
    data: str | None = None
    stats: str | None = None
    passes: frozenset = field(default_factory=lambda: frozenset(passes.ALL_PASSES))
    strategy: str = "rule"
    gpu: bool = False
    emit: str = "plan"
    out: str | None = None
    expected: str | None = None
    threshold: float = 0.995
    dialect: str = "neutral"

    def check(self, need_data=False):
        for what in ("query", "catalog"):
            if getattr(self, what) is None:
                raise CliError(f"--{what} is required")
        for what in ("query", "catalog", "model", "stats", "expected"):
            path = getattr(self, what)
            if path is not None and not os.path.isfile(path):
                raise CliError(f"--{what}: no such file: {path}")
        if need_data and not os.path.isdir(self.data_dir):
            raise CliError(f"--data: no such directory: {self.data_dir}")
        if not set(self.passes) <= set(passes.ALL_PASSES):
            raise CliError("unknown pass names")

    @property
    def data_dir(self):
        return self.data or os.path.dirname(os.path.abspath(self.query))


@dataclass
class Loaded:
    catalog: object
    ast: object
    pipeline: pl.ModelPipeline
    plan: ir.Plan
    stats: dict | None


def load_inputs(cfg: RunConfig) -> Loaded:
    catalog = load_catalog(cfg.catalog)
    ast = read_query(cfg.query, catalog)
    model = cfg.model
    if model is None:
        # the PREDICT call names the model relative to the query file
        model = os.path.join(os.path.dirname(os.path.abspath(cfg.query)), ast.predict.model_path)
        if not os.path.isfile(model):
            raise CliError(f"model file not found: {model} (pass --model)")
    pipeline = pl.read_pipeline(model)
    plan = ir.build_ir(ast, pipeline, catalog)
    stats = load_stats(cfg.stats) if cfg.stats else None
    return Loaded(catalog, ast, pipeline, plan, stats)


def optimize(cfg: RunConfig, ld: Loaded) -> passes.Optimized:
    return passes.optimize(ld.plan, cfg.passes, ld.stats, ld.catalog, cfg.strategy, cfg.gpu)


def _logical(cfg, ld):
    # the SQL and tensor emitters compile from the plan before any transform
    return passes.optimize(ld.plan, cfg.passes & set(passes.LOGICAL), ld.stats, ld.catalog)


def _selector_json(sel):
    if sel is None:
        return None
    return {"alias": sel.alias, "column": sel.column, "lo": sel.lo, "hi": sel.hi, "partition": sel.partition_id}


def _selector_text(sel):
    return f"{sel.alias}.{sel.column} in [{sel.lo:g}, {sel.hi:g}] (partition {sel.partition_id})"


def render_plan(opt: passes.Optimized) -> str:
    if len(opt.parts) == 1:
        return ir.save_plan(opt.plan) + "\n"
    doc = {
        "format": pl.FORMAT_TAG + "/partitioned",
        "parts": [{"selector": _selector_json(s), "plan": ir.plan_to_dict(p)} for s, p in opt.parts],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def render_explain(opt: passes.Optimized) -> str:
    lines = [f"-- {entry}" for entry in opt.log]
    for sel, plan in opt.parts:
        if sel is not None:
            lines.append(f"-- partition: {_selector_text(sel)}")
        lines.append(ir.explain(plan))
    return "\n".join(lines) + "\n"


def _emit(cfg, ld, opt) -> str:
    if cfg.emit == "plan":
        return render_plan(opt)
    if cfg.emit == "dot":
        return "".join(ir.to_dot(p) + "\n" for _, p in opt.parts)
    logical = _logical(cfg, ld)
    chunks = []
    for sel, plan in logical.parts:
        head = f"-- partition: {_selector_text(sel)}\n" if sel is not None else ""
        if plan.model_node is None:
            chunks.append(head + "-- no model left in the plan\n")
            continue
        if cfg.emit == "sql":
            chunks.append(head + ml2sql.compile_pipeline_to_sql(None, plan, cfg.dialect, selector=sel))
        else:
            tm = ml2dnn.to_tensor_model(plan).model_node.op
            chunks.append(json.dumps(ml2dnn.program_to_dict(tm.program), indent=2, sort_keys=True) + "\n")
    if cfg.emit == "tensor" and len(chunks) > 1:
        return "[\n" + ",\n".join(c.rstrip("\n") for c in chunks) + "\n]\n"
    return "".join(chunks)


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def cmd_optimize(cfg: RunConfig) -> int:
    cfg.check()
    ld = load_inputs(cfg)
    opt = optimize(cfg, ld)
    _write(cfg.out, _emit(cfg, ld, opt))
    # explain text goes wherever the artifact does not
    (sys.stdout if cfg.out not in (None, "-") else sys.stderr).write(render_explain(opt))
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    cfg.check(need_data=True)
    ld = load_inputs(cfg)
    tables = load_tables(ld.catalog, cfg.data_dir)
    opt = optimize(cfg, ld)
    _write(cfg.out, opt.execute(tables).to_csv())
    return EXIT_OK


def plan_counts(plans) -> dict:
    """Node, tree-node and scanned-column totals over one or more plans."""
    nodes = tree_nodes = columns = 0
    for plan in plans:
        nodes += len(plan.nodes)
        for n in plan.nodes:
            op = n.op.source if isinstance(n.op, ir.TensorModel) else n.op
            if isinstance(op, pl.TreeEnsemble):
                tree_nodes += sum(pl.tree_size(t) for t in op.trees)
            elif isinstance(op, ir.Scan):
                columns += len(op.columns)
    return {"plan_nodes": nodes, "tree_nodes": tree_nodes, "scanned_columns": columns}


def cmd_compare(cfg: RunConfig) -> int:
    cfg.check(need_data=True)
    ld = load_inputs(cfg)
    tables = load_tables(ld.catalog, cfg.data_dir)
    opt = optimize(cfg, ld)
    got = opt.execute(tables)
    if cfg.expected:
        ref = load_csv(cfg.expected, got.schema)
        against = cfg.expected
    else:
        ref = passes.baseline(ld.plan, tables)
        against = "unoptimized plan"
    scores = passes.score_columns(ld.plan)
    agr = passes.compare_tables(ref, got, scores)
    before = plan_counts([ld.plan])
    per_part = [plan_counts([p]) for _, p in opt.parts]
    after = {k: max(c[k] for c in per_part) for k in before}  # worst partition
    ok = agr.ok(cfg.threshold)
    report = {
        "against": against,
        "rows": agr.rows,
        "label_agreement": agr.label_agreement,
        "max_score_delta": agr.max_score_delta,
        "same_shape": agr.same_shape,
        "threshold": cfg.threshold,
        "strategy": opt.choice.choice if opt.choice else None,
        "partitions": len(opt.parts),
        "before": before,
        "after": after,
        "after_per_partition": per_part if len(per_part) > 1 else None,
        "ok": ok,
    }
    text = json.dumps(report, indent=2) + "\n"
    _write(cfg.out, text)
    if cfg.out not in (None, "-"):
        sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_DISAGREE


def cmd_stats(cfg: RunConfig) -> int:
    if cfg.model is None:
        raise CliError("--model is required")
    if not os.path.isfile(cfg.model):
        raise CliError(f"--model: no such file: {cfg.model}")
    st = strategy.extract_stats(pl.read_pipeline(cfg.model))
    _write(cfg.out, json.dumps(st.to_dict(), indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"optimize": cmd_optimize, "run": cmd_run, "compare": cmd_compare, "stats": cmd_stats}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="raven", description="Optimize and run prediction queries.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--model", help="pipeline JSON (default: the path named in PREDICT, next to the query)")
        p.add_argument("--out", help="output file (default: stdout)")
        if name == "stats":
            continue
        p.add_argument("--query", help="SQL file with one prediction query")
        p.add_argument("--catalog", help="catalog JSON")
        p.add_argument("--data", help="directory of <table>.csv files (default: the query's directory)")
        p.add_argument("--stats", help="column statistics JSON; enables data-induced pruning")
        p.add_argument("--passes", default="all",
                       help="all, none, logical or a comma list of "
                            + ",".join(passes.ALL_PASSES))
        p.add_argument("--strategy", default="rule", help="rule, none or table:<path>")
        p.add_argument("--gpu", action="store_true", help="a GPU is available (affects the rationale only)")
        if name == "optimize":
            p.add_argument("--emit", choices=EMITS, default="plan")
            p.add_argument("--dialect", choices=("neutral", "ansi"), default="neutral")
        if name == "compare":
            p.add_argument("--expected", help="compare against this CSV instead of the unoptimized plan")
            p.add_argument("--threshold", type=float, default=0.995)
    return ap


def config_from_args(ns) -> RunConfig:
    cfg = RunConfig(model=ns.model, out=ns.out)
    if ns.command == "stats":
        return cfg
    cfg.query, cfg.catalog, cfg.data, cfg.stats = ns.query, ns.catalog, ns.data, ns.stats
    cfg.passes = passes.parse_passes(ns.passes)
    cfg.strategy, cfg.gpu = ns.strategy, ns.gpu
    if not (cfg.strategy in ("rule", "none") or cfg.strategy.startswith("table:")):
        raise CliError(f"--strategy: expected rule, none or table:<path>, got {cfg.strategy!r}")
    cfg.emit = getattr(ns, "emit", "plan")
    cfg.dialect = getattr(ns, "dialect", "neutral")
    cfg.expected = getattr(ns, "expected", None)
    cfg.threshold = getattr(ns, "threshold", 0.995)
    return cfg


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
        return COMMANDS[ns.command](cfg)
    except (UserError, ValueError, OSError) as e:
        # ValueError covers bad --passes lists; OSError unreadable files
        print(f"raven: error: {e}", file=sys.stderr)
        return EXIT_USER
    except RavenletError as e:
        print(f"raven: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as e:  # noqa: BLE001
        print(f"raven: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        if os.environ.get("RAVEN_TRACEBACK"):
            traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

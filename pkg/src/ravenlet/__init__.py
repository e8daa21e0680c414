"""Cross-optimization of SQL prediction queries and trained ML pipelines.

Typical use::

    from ravenlet import load_catalog, load_tables, read_query, read_pipeline, build_ir, optimize

    cat = load_catalog("catalog.json")
    plan = build_ir(read_query("query.sql", cat), read_pipeline("model.json"), cat)
    opt = optimize(plan)
    result = opt.execute(load_tables(cat, "data/"))
"""

__version__ = "0.1.0"

from .errors import CompilationFailed, RavenletError, UserError  # noqa: E402
from .executor import Table, execute_plan, load_csv, load_tables, run_partitioned  # noqa: E402
from .frontend import load_catalog, parse_query, read_query  # noqa: E402
from .ir import Plan, build_ir, explain  # noqa: E402
from .passes import optimize  # noqa: E402
from .pipeline import load_pipeline, read_pipeline  # noqa: E402

__all__ = [
    "CompilationFailed", "Plan", "RavenletError", "Table", "UserError",
    "build_ir", "execute_plan", "explain", "load_catalog", "load_csv", "load_pipeline",
    "load_tables", "optimize", "parse_query", "read_pipeline", "read_query", "run_partitioned",
]

import os
from importlib import resources

import pytest
from hypothesis import HealthCheck, settings

from ravenlet import build_ir, load_catalog, load_tables, read_pipeline, read_query

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

EXAMPLE = str(resources.files("ravenlet") / "data" / "running_example")
GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def example_path(name):
    return os.path.join(EXAMPLE, name)


@pytest.fixture(scope="session")
def example():
    """Catalog, AST, pipeline, plan and tables of the running example."""
    cat = load_catalog(example_path("catalog.json"))
    ast = read_query(example_path("query.sql"), cat)
    pipe = read_pipeline(example_path("model.json"))
    plan = build_ir(ast, pipe, cat)
    tables = load_tables(cat, EXAMPLE)
    return {"catalog": cat, "ast": ast, "pipeline": pipe, "plan": plan, "tables": tables}

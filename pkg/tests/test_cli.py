import json
import shutil
import subprocess
import sys

import pytest

from conftest import EXAMPLE
from ravenlet import ir
from ravenlet.cli import main
from ravenlet.strategy import STAT_FIELDS


@pytest.fixture
def work(tmp_path):
    d = tmp_path / "ex"
    shutil.copytree(EXAMPLE, d)
    return d


def _args(d, *extra):
    return ["--query", str(d / "query.sql"), "--catalog", str(d / "catalog.json"), *extra]


def test_run_writes_expected_rows(work, capsys):
    assert main(["run", *_args(work)]) == 0
    assert capsys.readouterr().out == (work / "expected.csv").read_text()


def test_run_with_and_without_passes_identical(work):
    a, b = work / "a.csv", work / "b.csv"
    assert main(["run", *_args(work, "--passes", "none", "--out", str(a))]) == 0
    assert main(["run", *_args(work, "--stats", str(work / "stats.json"), "--out", str(b))]) == 0
    assert a.read_text() == b.read_text()


def test_passes_none_is_build_ir(work, example, capsys):
    assert main(["optimize", *_args(work, "--passes", "none")]) == 0
    out = capsys.readouterr().out
    assert ir.load_plan(out) == example["plan"]


def test_optimize_partitioned_plan(work, capsys):
    out = work / "plan.json"
    assert main(["optimize", *_args(work, "--stats", str(work / "stats.json"), "--out", str(out))]) == 0
    doc = json.loads(out.read_text())
    assert doc["format"] == "ravenlet/1/partitioned" and len(doc["parts"]) == 2
    assert "pred_prune" in capsys.readouterr().out


@pytest.mark.parametrize("emit,marker", [("sql", "CASE WHEN"), ("tensor", "GATHER"), ("dot", "digraph")])
def test_emit_formats(work, capsys, emit, marker):
    assert main(["optimize", *_args(work, "--emit", emit)]) == 0
    assert marker in capsys.readouterr().out


def test_emit_ansi_sql(work, capsys):
    assert main(["optimize", *_args(work, "--emit", "sql", "--dialect", "ansi")]) == 0
    assert "__" not in capsys.readouterr().out.split("FROM")[0]


def test_empty_tables_give_header_only(work, capsys):
    for name in ("patient_info", "blood_test", "pulmonary_test"):
        p = work / f"{name}.csv"
        p.write_text(p.read_text().splitlines()[0] + "\n")
    assert main(["run", *_args(work)]) == 0
    assert capsys.readouterr().out == "pi.id,risk\n"


def test_compare_ok(work, capsys):
    assert main(["compare", *_args(work, "--stats", str(work / "stats.json"))]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["ok"] and rep["label_agreement"] == 1.0 and rep["partitions"] == 2
    assert rep["after"]["tree_nodes"] < rep["before"]["tree_nodes"]
    assert rep["after"]["scanned_columns"] < rep["before"]["scanned_columns"]


def test_compare_swapped_classes_fails(work, capsys):
    # negative control: flip the class order, compare against the true answer
    doc = json.loads((work / "model.json").read_text())
    doc["nodes"][-1]["classes"] = ["high", "low"]
    (work / "model.json").write_text(json.dumps(doc))
    code = main(["compare", *_args(work, "--expected", str(work / "expected.csv"))])
    rep = json.loads(capsys.readouterr().out)
    assert code == 1 and not rep["ok"]


def test_stats_prints_all_fields(work, capsys):
    assert main(["stats", "--model", str(work / "model.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert list(doc) == list(STAT_FIELDS) and len(doc) == 22
    assert doc["n_pipeline_inputs"] == 4 and doc["n_model_features"] == 6


@pytest.mark.parametrize("argv", [
    ["run", "--query", "nope.sql", "--catalog", "nope.json"],
    ["stats", "--model", "missing.json"],
])
def test_missing_files_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "raven: error:" in capsys.readouterr().err


def test_bad_inputs_exit_2(work, capsys):
    assert main(["run", *_args(work, "--model", str(work / "nope.json"))]) == 2
    assert main(["run", *_args(work, "--passes", "warp")]) == 2
    (work / "query.sql").write_text("SELECT FROM WHERE")
    assert main(["run", *_args(work)]) == 2
    capsys.readouterr()


def test_bad_csv_exit_2(work, capsys):
    (work / "blood_test.csv").write_text("id,bpm\n1,fast\n")
    assert main(["run", *_args(work)]) == 2
    assert "row 2" in capsys.readouterr().err


def test_console_entry_point(work):
    r = subprocess.run([sys.executable, "-m", "ravenlet.cli", "run", *_args(work)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout == (work / "expected.csv").read_text()

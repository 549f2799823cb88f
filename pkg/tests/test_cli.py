import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from artifact.cli import load_suite, main

ROOT = Path(__file__).resolve().parent.parent
TEMPLATE = ROOT / "samples" / "cs_amp_template.cir"


@pytest.fixture
def runner():
    return CliRunner()


def test_design_replay_task1(runner, tmp_path):
    r = runner.invoke(main, ["design", "--task", "1", "--mode", "replay", "--workdir", str(tmp_path)])
    assert r.exit_code == 0, r.output
    assert "task 1: pass after 1 attempt(s)" in r.output


def test_design_replay_oscillator(runner, tmp_path):
    r = runner.invoke(main, ["design", "--task", "23", "--mode", "replay", "--workdir", str(tmp_path)])
    assert r.exit_code == 0, r.output
    lines = r.output.splitlines()
    assert lines[0] == "attempt 1: fail (The oscillation amplitude is too small.)"
    assert lines[1] == "attempt 2: pass"


def test_design_replay_miss_exits_2(runner, tmp_path):
    r = runner.invoke(main, ["design", "--task", "2", "--mode", "replay", "--workdir", str(tmp_path)])
    assert r.exit_code == 2
    assert "no recorded response" in r.output


def test_bench_replay(runner, tmp_path):
    r = runner.invoke(main, ["bench", "--suite", "1,23", "--n", "1", "--k", "1", "--mode", "replay",
                             "--workdir", str(tmp_path)])
    assert r.exit_code == 0, r.output
    doc = json.loads((tmp_path / "results.json").read_text())
    assert doc["solved"] == 2
    assert doc["average"]["1"] == 1.0


def test_size_template(runner, tmp_path):
    r = runner.invoke(main, ["size", "--netlist", str(TEMPLATE), "--objective", "gain", "--trials", "4",
                             "--out", str(tmp_path)])
    assert r.exit_code == 0, r.output
    assert "best gain:" in r.output
    assert {p.name for p in tmp_path.iterdir()} == {"history.jsonl", "convergence.png", "best.cir"}


def test_size_rejects_wide_width(runner, tmp_path):
    bad = tmp_path / "bad.cir"
    bad.write_text(TEMPLATE.read_text().replace("22.5e-6", "45e-6"))
    r = runner.invoke(main, ["size", "--netlist", str(bad), "--trials", "2", "--out", str(tmp_path / "o")])
    assert r.exit_code == 2
    assert "1-500x" in r.output


def test_library_commands(runner, tmp_path):
    root = str(tmp_path / "lib")
    r = runner.invoke(main, ["library", "--root", root, "list"])
    assert "Opamp" in r.output
    r = runner.invoke(main, ["library", "--root", root, "query", "op-amp"])
    assert "Subcircuit Opamp" in r.output
    amp = str(ROOT / "tests" / "fixtures" / "netlists" / "amp_good.cir")
    r = runner.invoke(main, ["library", "--root", root, "add", amp, "--description", "cs amp", "--task", "1"])
    assert r.exit_code == 0 and r.output.startswith("stored"), r.output
    r = runner.invoke(main, ["library", "--root", root, "add", amp, "--description", "cs amp", "--task", "1"])
    assert r.output.startswith("kept existing")
    bad = str(ROOT / "tests" / "fixtures" / "netlists" / "amp_cutoff.cir")
    r = runner.invoke(main, ["library", "--root", root, "add", bad, "--description", "broken", "--task", "1"])
    assert r.exit_code == 1


def test_config_file_unknown_key(runner, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"llm_modle": "x"}))
    r = runner.invoke(main, ["--config", str(cfg), "design", "--task", "1", "--mode", "replay"])
    assert r.exit_code != 0


def test_load_suite(tmp_path):
    assert len(load_suite("all")) == 28
    assert [t.task_id for t in load_suite("1,23")] == [1, 23]
    f = tmp_path / "s.json"
    f.write_text("[3, 4]")
    assert [t.task_id for t in load_suite(str(f))] == [3, 4]

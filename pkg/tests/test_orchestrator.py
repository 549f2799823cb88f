import math
from fractions import Fraction
from pathlib import Path

import pytest

from artifact.cli import make_gateway
from artifact.config import RunConfig, shipped_transcripts
from artifact.library import open_library
from artifact.llm_gateway import Gateway, ProviderConfig, ScriptedTransport
from artifact.orchestrator import (
    DomainError,
    benchmark_from_outcomes,
    extract_param_space,
    library_query,
    parse_response,
    pass_at_k,
    run_design_task,
    run_unified,
)
from artifact.prompts import embed
from artifact.sizing import ExtractionFailed
from artifact.tasks import get_task

from conftest import netlist_text


def rational_pass_at_k(n, c, k):
    if n - c < k:
        return Fraction(1)
    return 1 - Fraction(math.comb(n - c, k), math.comb(n, k))


def test_pass_at_k_matches_rational_oracle():
    for n in range(1, 31):
        for c in range(n + 1):
            for k in range(1, min(5, n) + 1):
                assert abs(pass_at_k(n, c, k) - float(rational_pass_at_k(n, c, k))) <= 1e-12


def test_pass_at_k_spot_values():
    assert pass_at_k(30, 16, 5) == pytest.approx(0.986, abs=5e-4)
    assert pass_at_k(30, 16, 1) == pytest.approx(16 / 30)
    assert pass_at_k(10, 0, 3) == 0.0
    assert pass_at_k(5, 5, 5) == 1.0


def test_pass_at_k_monotone():
    for c in range(31):
        vals = [pass_at_k(30, c, k) for k in range(1, 6)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
    for k in range(1, 6):
        vals = [pass_at_k(30, c, k) for c in range(31)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("args", [(0, 0, 1), (5, 6, 1), (5, -1, 1), (5, 2, 0), (5, 2, 6)])
def test_pass_at_k_domain(args):
    with pytest.raises(DomainError):
        pass_at_k(*args)


def test_benchmark_table():
    outcomes = {1: [True] * 3 + [False] * 2, 2: [False] * 5, 3: [True] * 5}
    res = benchmark_from_outcomes(outcomes, (1, 5))
    assert res.solved == 2
    assert res.average(1) == pytest.approx((0.6 + 0 + 1) / 3)
    rows = res.rows()
    assert rows[0][:4] == ["task", "description", "n", "c"]
    assert rows[1][4] == "60.00"
    assert rows[-1][:2] == ["solved", "2"]


def test_benchmark_write(tmp_path):
    res = benchmark_from_outcomes({1: [True, False]}, (1,))
    res.write(tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"results.tsv", "results.csv", "results.json"}
    assert (tmp_path / "results.csv").read_text().splitlines()[1].startswith("1,")


def _replay_config(tmp_path, **kw):
    return RunConfig(mode="replay", transcripts=str(shipped_transcripts()), workdir=str(tmp_path), **kw)


def test_replay_task1(tmp_path, engine):
    cfg = _replay_config(tmp_path)
    res = run_design_task(get_task(1), cfg, make_gateway(cfg), open_library(tmp_path / "lib"), engine)
    assert res.passed
    assert len(res.attempts) == 1
    assert (tmp_path / "1" / "s0" / "result.json").exists()
    assert (tmp_path / "1" / "s0" / "attempt_1" / "netlist.cir").exists()


def test_replay_oscillator_two_rounds(tmp_path, engine):
    cfg = _replay_config(tmp_path)
    res = run_design_task(get_task(23), cfg, make_gateway(cfg), open_library(tmp_path / "lib"), engine)
    assert [a.report.verdict for a in res.attempts] == ["fail", "pass"]
    first = res.attempts[0]
    assert "The oscillation amplitude is too small." in first.report.messages()
    assert first.analysis and "damped" in first.analysis
    repair = res.attempts[1].prompt
    assert "Waveform Analysis:" in repair
    assert res.tools == ["Opamp"]


def _scripted(replies):
    return Gateway(ProviderConfig(), "live", transport=ScriptedTransport(replies))


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("ARTIFACT_API_KEY", "test")


def test_attempt_cap(tmp_path, engine, api_key):
    bad = "plan\n" + embed(netlist_text("amp_missing_vout"))
    cfg = RunConfig(workdir=str(tmp_path))
    res = run_design_task(get_task(1), cfg, _scripted([bad] * 10), None, engine)
    assert [a.report.verdict for a in res.attempts] == ["fail"] * 3
    assert not res.passed


def test_no_feedback_single_attempt(tmp_path, engine, api_key):
    bad = embed(netlist_text("amp_missing_vout"))
    cfg = RunConfig(workdir=str(tmp_path), no_feedback=True)
    res = run_design_task(get_task(1), cfg, _scripted([bad] * 10), None, engine)
    assert len(res.attempts) == 1


def test_unparseable_response_is_a_failure(tmp_path, engine, api_key):
    cfg = RunConfig(workdir=str(tmp_path), attempts_max=2)
    good = embed(netlist_text("amp_good"))
    res = run_design_task(get_task(1), cfg, _scripted(["I refuse to write code.", good]), None, engine)
    assert [a.report.verdict for a in res.attempts] == ["fail", "pass"]
    assert res.attempts[0].report.template_ids() == ["unparseable"]


def test_pyspice_response_classified():
    code = "from PySpice.Spice.Netlist import Circuit\ncircuit = Circuit('amp')\n"
    circuit, text, report = parse_response(embed(code, "python"))
    assert circuit is None
    assert "PySpice" in report.messages()[0]


def test_library_query_includes_tools():
    assert "opamp" in library_query(get_task(23))


def test_extraction_gives_up(tmp_path, api_key):
    empty = "```python\n" + netlist_text("amp_good") + "param_ranges_definition = {}\ninitial_params = {}\n```\n"
    t = ScriptedTransport([empty] * 5)
    gw = Gateway(ProviderConfig(), "live", transport=t)
    with pytest.raises(ExtractionFailed):
        extract_param_space(netlist_text("amp_good"), RunConfig(), gw)
    assert len(t.requests) == 3
    assert all(r["temperature"] == 0.0 for r in t.requests)
    assert "invalid" in t.requests[-1]["messages"][-1]["content"]


def test_unified_replay(tmp_path, engine):
    cfg = _replay_config(tmp_path)
    res = run_unified(get_task(1), cfg, make_gateway(cfg), "fom", 15, open_library(tmp_path / "lib"), engine,
                      stages=(20, 200, 200), window=(0.0, 1.0))
    assert res.design.passed
    assert res.optimized["fom"] >= res.initial["fom"]
    root = Path(tmp_path) / "1" / "s0"
    assert (root / "sizing.jsonl").exists() and (root / "convergence.png").exists()

import json
import threading

import pytest

from artifact.circuit_ir import emit_netlist, parse_netlist, validate_connectivity
from artifact.library import (
    SCORE_FLOOR,
    UnverifiedTool,
    inject_tools,
    open_library,
    render_context,
    tokens,
    tool_from_circuit,
)
from artifact.verification import CheckReport

from conftest import load_netlist


def _amp_tool(gain_db, description="common-source amplifier with resistive load"):
    return tool_from_circuit(load_netlist("amp_good"), description, {"gain_db": gain_db}, task_id=1,
                             run_id="r", timestamp="T")


def test_seeded_library_has_opamp(tmp_path):
    lib = open_library(tmp_path)
    assert [e.name for e in lib.entries()] == ["Opamp"]
    assert json.loads((tmp_path / "index.json").read_text())


def test_better_tool_replaces_worse(tmp_path):
    lib = open_library(tmp_path, seed=False)
    assert lib.add_tool(_amp_tool(40.0)).stored
    res = lib.add_tool(_amp_tool(55.0))
    assert res.stored and res.replaced.primary_spec() == 40.0
    assert not lib.add_tool(_amp_tool(30.0)).stored
    assert not lib.add_tool(_amp_tool(55.0)).stored  # ties keep the incumbent
    assert len(lib) == 1
    assert lib.entries()[0].primary_spec() == 55.0
    assert len(list((tmp_path / "archive").iterdir())) == 1


def test_reordered_description_is_same_class():
    a = _amp_tool(40.0, "common-source amplifier with resistive load")
    b = _amp_tool(40.0, "resistive load, common source amplifier")
    assert a.slug == b.slug


def test_failed_report_refused(tmp_path):
    lib = open_library(tmp_path, seed=False)
    with pytest.raises(UnverifiedTool):
        lib.add_tool(_amp_tool(40.0), CheckReport(verdict="fail"))
    assert len(lib) == 0


def test_durable_across_reopen(tmp_path):
    lib = open_library(tmp_path)
    lib.add_tool(_amp_tool(42.0))
    again = open_library(tmp_path)
    assert sorted(e.name for e in again.entries()) == sorted(e.name for e in lib.entries())
    assert again.entries() == lib.entries()


def test_concurrent_adds(tmp_path):
    lib = open_library(tmp_path, seed=False)
    gains = [float(g) for g in range(30, 50)]
    threads = [threading.Thread(target=lib.add_tool, args=(_amp_tool(g),)) for g in gains]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(lib) == 1
    assert lib.entries()[0].primary_spec() == max(gains)


def test_query(tmp_path):
    lib = open_library(tmp_path)
    lib.add_tool(_amp_tool(40.0))
    assert [e.name for e in lib.query("an op-amp comparator opamp")][0] == "Opamp"
    assert lib.query("common source amplifier")[0].key.circuit_type.value == "amplifier"
    assert lib.query("quantum teleporter") == []
    assert lib.query("") == []
    assert 0 < SCORE_FLOOR < 1


def test_tokens_normalise():
    assert "opamp" in tokens("Op-Amp")
    assert "the" not in tokens("the amplifier")


def test_render_context(tmp_path):
    lib = open_library(tmp_path)
    text = render_context(lib.entries())
    assert "Subcircuit Opamp" in text
    assert "Ports in order" in text
    assert "X1 " in text
    assert render_context([]) == ""


def test_tool_wraps_circuit():
    tool = _amp_tool(40.0)
    sub = tool.value.subcircuit
    assert sub.ports == ("Vin", "Vout")
    assert any("vdd_int" in c.terminals for c in sub.body)
    assert ".subckt" in tool.value.netlist_text.lower()


def test_inject_tools_adds_missing_definition(tmp_path):
    lib = open_library(tmp_path)
    deck = ("t\n* META output=Vout\n* META reference=Vref:2.5\nVref Vref 0 DC 2.5\n"
            "Xop Vref fb Vout Opamp\nR1 fb Vout 10k\nR2 fb Vref 10k\n.end\n")
    ir = parse_netlist(deck)
    assert [i.code for i in validate_connectivity(ir)] == ["unknown_subcircuit"]
    full = inject_tools(ir, lib.entries())
    assert "Opamp" in full.subcircuits
    assert validate_connectivity(full) == []
    assert ".subckt opamp" in emit_netlist(full).lower()
    assert inject_tools(full, lib.entries()) is full

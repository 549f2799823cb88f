import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.circuit_ir import (
    AnalysisRequest,
    CircuitIR,
    CircuitType,
    Component,
    InvalidCircuit,
    MissingMeta,
    NodeRoles,
    UnknownSubcircuit,
    emit_netlist,
    flatten,
    format_value,
    parse_netlist,
    parse_value,
    structurally_equal,
    validate_connectivity,
)

from conftest import NETLISTS, load_netlist, netlist_text


@pytest.mark.parametrize("text,value", [
    ("10k", 10e3), ("4.7u", 4.7e-6), ("1Meg", 1e6), ("1meg", 1e6), ("2.5V", 2.5),
    ("100p", 100e-12), ("3m", 3e-3), ("1e-9", 1e-9), ("-5", -5.0), (".5n", 0.5e-9),
    ("10kOhm", 10e3), ("2mil", 50.8e-6),
])
def test_parse_value_suffixes(text, value):
    assert parse_value(text) == pytest.approx(value, rel=1e-15)


def test_parse_value_rejects_garbage():
    with pytest.raises(ValueError):
        parse_value("abc")


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_value_roundtrips(x):
    assert parse_value(format_value(x)) == x


@pytest.mark.parametrize("path", sorted(NETLISTS.glob("*.cir")), ids=lambda p: p.stem)
def test_fixture_roundtrip(path):
    ir = parse_netlist(path.read_text())
    again = parse_netlist(emit_netlist(ir))
    assert structurally_equal(ir, again)
    # emission is a fixed point after one pass
    assert emit_netlist(again) == emit_netlist(ir)


def test_meta_roles_parsed(cs_amp):
    roles = cs_amp.meta
    assert roles.output == "Vout"
    assert roles.inputs == ["Vin"]
    assert roles.supply == ("Vdd", 5.0)
    assert roles.circuit_type is CircuitType.AMPLIFIER
    m1 = cs_amp.component("M1")
    assert m1.kind == "mosfet"
    assert m1.params["w"] == pytest.approx(5e-6)
    assert m1.params["l"] == pytest.approx(0.045e-6)


def test_missing_meta_is_reported():
    deck = "t\nR1 a 0 1k\nV1 a 0 DC 1\n.end\n"
    with pytest.raises(MissingMeta):
        parse_netlist(deck)
    ir = parse_netlist(deck, require_meta=False)
    assert len(ir.components) == 2


def test_unparseable_lines_become_diagnostics():
    deck = "t\n* META output=a\nR1 a 0 1k\nQwhat\nV1 a 0 DC 1\n.end\n"
    ir = parse_netlist(deck)
    assert len(ir.components) == 2
    assert "Qwhat" in ir.diagnostics[0]


def test_circuit_type_aliases():
    assert CircuitType.parse("Op-Amp") is CircuitType.OPAMP
    assert CircuitType.parse("operational amplifier") is CircuitType.OPAMP
    assert CircuitType.parse("Schmitt") is CircuitType.SCHMITT_TRIGGER
    assert CircuitType.parse("OSCILLATOR") is CircuitType.OSCILLATOR
    with pytest.raises(ValueError):
        CircuitType.parse("flux capacitor")


def _divider():
    comps = (
        Component("V1", "vsource", ("in", "0"), params={"dc": 5.0}),
        Component("R1", "resistor", ("in", "mid"), params={"value": 1e3}),
        Component("R2", "resistor", ("mid", "0"), params={"value": 1e3}),
    )
    return CircuitIR("divider", comps, NodeRoles(output="mid", supply=("in", 5.0)))


def test_invariants_enforced_on_emit():
    good = _divider()
    emit_netlist(good)
    with pytest.raises(InvalidCircuit):
        emit_netlist(good.with_components(()))
    dup = good.with_components((*good.components, good.components[1]))
    with pytest.raises(InvalidCircuit):
        emit_netlist(dup)
    floating = good.with_components([Component("R1", "resistor", ("a", "b"), params={"value": 1.0})])
    with pytest.raises(InvalidCircuit):
        emit_netlist(floating)  # no ground anywhere
    bad_terms = good.with_components((*good.components, Component("R3", "resistor", ("mid",), params={"value": 1.0})))
    with pytest.raises(InvalidCircuit):
        emit_netlist(bad_terms)


def test_analysis_directives():
    assert AnalysisRequest.op().directive() == ".op"
    assert AnalysisRequest.tran(1e-6, 1e-3, use_ic=True).directive().endswith("uic")
    assert AnalysisRequest.ac_dec(1.0, 1e9).directive().startswith(".ac dec 20")
    down = AnalysisRequest.transfer("V1", 5.0, 0.0, 0.1)
    assert down.directive().split()[-1].startswith("-")
    with pytest.raises(ValueError):
        AnalysisRequest.dc("V1", 1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        AnalysisRequest.ac_dec(0.0, 1e3)


def test_emit_includes_analyses_and_saves():
    deck = emit_netlist(_divider(), [AnalysisRequest.op()], ["v(mid)"])
    lines = deck.lower().splitlines()
    assert ".op" in lines
    assert any(ln.startswith(".save") and "v(mid)" in ln for ln in lines)
    assert lines[-1] == ".end"


def test_flatten_oscillator_opamp():
    osc = load_netlist("osc_decaying")
    flat = flatten(osc)
    top = [c for c in osc.components if c.kind != "subckt_instance"]
    body = osc.subcircuits["Opamp"].body
    assert len(flat.components) == len(top) + len(body)
    assert not any(c.kind == "subckt_instance" for c in flat.components)
    names = {c.refdes for c in flat.components}
    assert "M.Xop.M1" in names
    nets = flat.nets()
    assert "Xop.tail" in nets
    assert "0" in nets and "Vref" in nets


def test_flatten_unknown_subcircuit():
    deck = "t\n* META output=out\nV1 in 0 DC 1\nX1 in out Missing\nR1 out 0 1k\n.end\n"
    ir = parse_netlist(deck)
    with pytest.raises(UnknownSubcircuit):
        flatten(ir)
    codes = [i.code for i in validate_connectivity(ir)]
    assert codes == ["unknown_subcircuit"]


def test_connectivity_clean_for_good_amp(cs_amp):
    assert validate_connectivity(cs_amp) == []


def test_connectivity_finds_problems():
    issues = validate_connectivity(load_netlist("amp_missing_vout"))
    assert "missing_node" in [i.code for i in issues]
    issues = validate_connectivity(load_netlist("amp_floating"))
    assert "floating_net" in [i.code for i in issues]


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(4)))
def test_connectivity_order_independent(order):
    ir = parse_netlist(netlist_text("amp_floating"))
    comps = list(ir.components)
    perm = [comps[i] for i in order if i < len(comps)] + comps[4:]
    assert validate_connectivity(ir.with_components(perm)) == validate_connectivity(ir)


def test_structural_equality_tolerance():
    a = _divider()
    r1 = a.component("R1")
    b = a.with_components([a.components[0], Component("R1", "resistor", r1.terminals, params={"value": 1e3 * (1 + 1e-14)}),
                           a.components[2]])
    c = a.with_components([a.components[0], Component("R1", "resistor", r1.terminals, params={"value": 1.1e3}),
                           a.components[2]])
    assert structurally_equal(a, b)
    assert not structurally_equal(a, c)
    assert math.isclose(parse_value("1k"), 1e3)

import warnings

import pytest

from artifact.library import open_library
from artifact.prompts import (
    FRAMING,
    REPAIR_INSTRUCTION,
    NoCodeBlock,
    PromptWarning,
    Toggles,
    build_design_prompt,
    build_extraction_prompt,
    build_repair_prompt,
    build_waveform_analysis_prompt,
    classify_payload,
    design_sections,
    embed,
    extract_payload,
    tips,
)
from artifact.tasks import get_task
from artifact.verification import CheckReport, Stage, diag

from conftest import netlist_text


@pytest.fixture(scope="module")
def opamp_tools(tmp_path_factory):
    lib = open_library(tmp_path_factory.mktemp("lib"))
    return lib.query("op-amp opamp")


def _names(task, tools=(), toggles=Toggles()):
    return [n for n, _ in design_sections(task, tools, toggles)]


def test_section_order(opamp_tools):
    assert _names(get_task(1)) == ["framing", "example", "tips", "plan", "question"]
    assert _names(get_task(23), opamp_tools) == ["framing", "tools", "example", "tips", "plan", "question"]


@pytest.mark.parametrize("flag,section", [("in_context_example", "example"), ("chain_of_thought", "plan"),
                                          ("tips", "tips")])
def test_toggle_removes_only_its_section(flag, section):
    full = dict(design_sections(get_task(1)))
    off = dict(design_sections(get_task(1), toggles=Toggles(**{flag: False})))
    assert set(full) - set(off) == {section}
    for name in off:
        assert off[name] == full[name]


def test_representation_marker():
    net = build_design_prompt(get_task(1))
    py = build_design_prompt(get_task(1), toggles=Toggles(representation="pyspice"))
    assert "Representation: SPICE netlist." in net
    assert "Representation: PySpice code." in py
    with pytest.raises(ValueError):
        Toggles(representation="verilog")


def test_question_block():
    text = build_design_prompt(get_task(1))
    assert text.startswith(FRAMING)
    assert "Design a common-source amplifier with a resistive load." in text
    assert "Input node name: Vin." in text
    assert "Output node name: Vout." in text
    assert text.rstrip().endswith("Answer")


def test_objective_phrase():
    text = build_design_prompt(get_task(1), objective="fom")
    assert "topology that optimizes" in text
    with pytest.raises(ValueError):
        build_design_prompt(get_task(1), objective="speed")


def test_composite_without_tools_warns():
    with pytest.warns(PromptWarning):
        build_design_prompt(get_task(23))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_design_prompt(get_task(1))


def test_tools_section_names_subcircuit(opamp_tools):
    tools = dict(design_sections(get_task(23), opamp_tools))["tools"]
    assert "opamp subcircuits from the circuit tool library" in tools
    assert "Ports in order" in tools


def test_tips_loaded():
    assert len(tips()) >= 3
    assert all(t and not t.startswith("#") for t in tips())


def _failing_report():
    return CheckReport(
        verdict="fail",
        diagnostics=[diag(Stage.FUNCTION, "osc_period", period=1e-3), diag(Stage.FUNCTION, "osc_too_small"),
                     diag(Stage.WAVEFORM, "waveform_rendered", analysis="tran")],
        failed_stage=Stage.FUNCTION,
    )


def test_repair_prompt():
    text = build_repair_prompt(_failing_report(), "It decays.")
    assert "The oscillation amplitude is too small." in text
    assert "Average oscillation period: 0.001000 s" in text
    assert "Rendered tran waveform" not in text
    assert text.index("Waveform Analysis:") < text.index("It decays.") < text.index(REPAIR_INSTRUCTION)
    assert "Waveform Analysis:" not in build_repair_prompt(_failing_report())
    with pytest.raises(ValueError):
        build_repair_prompt(CheckReport())


def test_waveform_prompt():
    text = build_waveform_analysis_prompt(get_task(23))
    assert text.startswith("Analyze the attached waveform output image from an RC phase-shift oscillator circuit.")
    assert "The actual output waveform differs." in text
    with pytest.raises(ValueError):
        build_waveform_analysis_prompt(get_task(23), expectation="  ")


def test_extraction_prompt():
    deck = netlist_text("amp_good")
    text = build_extraction_prompt(deck)
    assert deck.rstrip() in text
    assert "1-500x" in text
    assert "param_ranges_definition" in text and "initial_params" in text
    with pytest.raises(ValueError):
        build_extraction_prompt("")


def test_extract_last_block():
    deck = netlist_text("amp_good").rstrip()
    response = "plan\n```python\nprint(1)\n```\nthen\n```spice\n" + deck + "\n```\nbye"
    p = extract_payload(response)
    assert p.text == deck
    assert p.kind == "netlist"
    with pytest.raises(NoCodeBlock):
        extract_payload("no code here")


@pytest.mark.parametrize("name", ["amp_good", "osc_decaying", "filter_bandstop"])
def test_embed_extract_identity(name):
    code = netlist_text(name).rstrip("\n")
    assert extract_payload("Here:\n" + embed(code)).text == code


def test_classify_payload():
    assert classify_payload("param_ranges_definition = {}") == "params"
    assert classify_payload("from PySpice.Spice.Netlist import Circuit\ncircuit = Circuit('x')") == "pyspice"
    assert classify_payload("R1 a b 1k\nC1 b 0 1n") == "netlist"
    assert classify_payload("hello world") == "unknown"

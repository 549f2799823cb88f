import re

import numpy as np
import pytest

from artifact.circuit_ir import parse_netlist
from artifact.sim_driver import WaveformSeries
from artifact.tasks import get_task
from artifact.verification import (
    STAGES,
    TEMPLATES,
    CheckReport,
    Stage,
    diag,
    measure_oscillation,
    render_message,
    render_waveform,
    run_pipeline,
)

from conftest import load_netlist
from corpus import CORPUS

_reports = {}


def _report(name, engine):
    if name not in _reports:
        tid = CORPUS[name][0]
        _reports[name] = run_pipeline(load_netlist(name), get_task(tid) if tid else None, engine)
    return _reports[name]


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_corpus_outcome(name, engine):
    _, verdict, stage, templates = CORPUS[name]
    rep = _report(name, engine)
    assert rep.verdict == verdict, rep.messages()
    assert (rep.failed_stage.value if rep.failed_stage else None) == stage
    assert templates <= set(rep.template_ids())


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_stages_run_in_order(name, engine):
    rep = _report(name, engine)
    # a prefix of the fixed stage order, ending at the failure if there is one
    order = [s for s in rep.stages_run if s is not Stage.WAVEFORM]
    assert order == list(STAGES[:len(order)])
    if rep.failed_stage is not None and rep.failed_stage is not Stage.WAVEFORM:
        assert order[-1] is rep.failed_stage
    for d in rep.diagnostics:
        if d.stage is not Stage.WAVEFORM:
            assert d.stage in order


def test_decaying_oscillator_message(engine):
    rep = _report("osc_decaying", engine)
    assert "The oscillation amplitude is too small." in rep.messages(("fail",))


def test_messages_regenerate_from_templates(engine):
    for name in ("amp_good", "osc_decaying", "filter_lowpass"):
        for d in _report(name, engine).diagnostics:
            assert d.message == TEMPLATES[d.template_id][0].format(**d.data)


def test_report_json_roundtrip(engine, tmp_path):
    rep = _report("osc_decaying", engine)
    rep.write(tmp_path)
    import json
    doc = json.loads((tmp_path / "report.json").read_text())
    back = CheckReport.from_dict(doc)
    assert back.verdict == rep.verdict
    assert back.template_ids() == rep.template_ids()
    assert back.messages() == rep.messages()
    pngs = sorted(tmp_path.glob("*.png"))
    assert len(pngs) == len(rep.waveform_images) >= 1


def test_images_are_png_and_small(engine):
    for name in ("amp_good", "osc_decaying", "filter_bandpass"):
        for _, data in _report(name, engine).waveform_images:
            assert data[:8] == b"\x89PNG\r\n\x1a\n"
            assert len(data) < 1 << 20


def test_pipeline_is_deterministic(engine):
    first = _report("amp_good", engine)
    again = run_pipeline(load_netlist("amp_good"), get_task(1), engine)
    assert again.to_dict() == first.to_dict()
    assert [d for _, d in again.waveform_images] == [d for _, d in first.waveform_images]


def test_unknown_template_rejected():
    with pytest.raises(KeyError):
        diag(Stage.FUNCTION, "no_such_template")
    with pytest.raises(KeyError):
        diag(Stage.REQUIREMENT, "missing_node")  # slot not filled


def test_template_slots_are_named():
    for tid, (text, severity) in TEMPLATES.items():
        assert severity in ("fail", "warning", "info"), tid
        slots = re.findall(r"\{(\w+)", text)
        data = {s: 1.0 for s in slots}
        assert render_message(tid, data)


def _wave(fn, n=20000, t_end=10e-3):
    t = np.linspace(0.0, t_end, n)
    return WaveformSeries(t, {"v(out)": fn(t)}, "time")


def test_oscillation_sustained_sine():
    s = _wave(lambda t: 2.5 + 0.5 * np.sin(2 * np.pi * 1e3 * t))
    osc = measure_oscillation(s, "out")
    assert osc.sustained
    assert osc.period == pytest.approx(1e-3, rel=1e-3)
    assert osc.amplitude == pytest.approx(0.5, rel=1e-3)


def test_oscillation_decaying():
    s = _wave(lambda t: 2.5 + 0.5 * np.exp(-t / 1e-3) * np.sin(2 * np.pi * 1e3 * t))
    assert not measure_oscillation(s, "out").sustained


def test_oscillation_flat():
    osc = measure_oscillation(_wave(lambda t: np.full_like(t, 2.5)), "out")
    assert (osc.period, osc.amplitude, osc.sustained) == (0.0, 0.0, False)


def test_render_is_byte_stable():
    s = _wave(lambda t: np.sin(2 * np.pi * 1e3 * t))
    a = render_waveform(s, ["out"], "sine")
    b = render_waveform(s, ["out"], "sine")
    assert a == b
    assert a[:4] == b"\x89PNG"


def test_requirement_failure_skips_simulation():
    deck = "t\n* META output=Vout\n* META input=Vin\n* META type=amplifier\nR1 a 0 1k\nV1 a 0 DC 1\n.end\n"
    rep = run_pipeline(parse_netlist(deck))
    assert rep.failed_stage is Stage.REQUIREMENT
    assert rep.stages_run[0] is Stage.REQUIREMENT
    assert Stage.OP_POINT not in rep.stages_run

import math

import numpy as np
import pytest

from artifact.circuit_ir import AnalysisRequest, parse_netlist
from artifact.sim_driver import (
    TooFewSamples,
    WaveformSeries,
    compute_fft,
    dc_sweep,
    fft_energy,
    parse_raw,
    run,
    simulate,
)

DIVIDER = """divider
* META output=mid
* META supply=in:5
V1 in 0 DC 5
R1 in mid 1k
R2 mid 0 1k
.end
"""

RC = """rc low-pass
* META input=in
* META output=out
V1 in 0 DC 0 AC 1
R1 in out 1k
C1 out 0 159.155n
.end
"""


def test_divider_mid_node(engine):
    res = simulate(parse_netlist(DIVIDER), [AnalysisRequest.op()], engine=engine)
    assert res.converged
    assert abs(res.node("mid") - 2.5) <= 1e-6


def test_rc_corner(engine):
    r, c = 1e3, 159.155e-9
    res = simulate(parse_netlist(RC), [AnalysisRequest.ac_dec(1.0, 1e6, 200)], engine=engine)
    ac = res.series["ac1"]
    f = ac.axis
    mag = np.abs(ac.get("out"))
    db = 20 * np.log10(mag / mag[0])
    i = int(np.argmax(db <= -3.0103))
    # interpolate in log frequency between the bracketing points
    f3 = 10 ** np.interp(-3.0103, [db[i], db[i - 1]], [np.log10(f[i]), np.log10(f[i - 1])])
    assert f3 == pytest.approx(1 / (2 * math.pi * r * c), rel=0.02)


def test_dc_sweep_exact_steps(engine):
    ir = parse_netlist(DIVIDER)
    s = dc_sweep(ir, "V1", 0.0, 5.0, 11, engine=engine)
    assert len(s.axis) == 11
    np.testing.assert_allclose(s.get("mid"), s.axis / 2, atol=1e-9)
    with pytest.raises(ValueError):
        dc_sweep(ir, "V1", 0.0, 5.0, 1, engine=engine)


def test_run_raw_deck(engine, tmp_path):
    deck = DIVIDER.replace(".end", ".op\n.end")
    res = run(deck, tmp_path, engine)
    assert res.node("mid") == pytest.approx(2.5, abs=1e-6)


def test_mosfet_telemetry(engine, cs_amp):
    from artifact.testbench import attach_inputs
    tb = attach_inputs(cs_amp, {"Vin": 0.8}, ac=False)
    res = simulate(tb, [AnalysisRequest.op()], engine=engine)
    m1 = res.devices["m1"]
    assert m1.vgs == pytest.approx(0.8, abs=1e-6)
    assert m1.region in ("saturation", "triode")
    assert m1.id > 0


def _tone(freqs, amps, n=4096, fs=64e3, offset=0.0):
    t = np.arange(n) / fs
    x = offset + np.zeros(n) + sum(a * np.sin(2 * np.pi * f * t) for f, a in zip(freqs, amps))
    return WaveformSeries(t, {"v(out)": x}, "time")


def test_fft_single_tone_peak():
    s = _tone([1e3], [1.0])
    spec = compute_fft(s, "out")
    f, mag = spec.axis, spec.get("out")
    bin_width = f[1] - f[0]
    peak = f[1 + int(np.argmax(mag[1:]))]
    assert abs(peak - 1e3) <= bin_width


def test_fft_two_tones():
    spec = compute_fft(_tone([1e3, 5e3], [1.0, 0.5]), "out")
    f, mag = spec.axis, spec.get("out")
    top = sorted(f[np.argsort(mag)[-8:]])
    assert any(abs(x - 1e3) < 2 * (f[1] - f[0]) for x in top)
    assert any(abs(x - 5e3) < 2 * (f[1] - f[0]) for x in top)


def test_fft_constant_is_dc_only():
    spec = compute_fft(_tone([], [], offset=2.0), "out")
    mag = spec.get("out")
    assert mag[0] > 0
    assert np.max(mag[1:]) < 1e-9 * mag[0]


@pytest.mark.parametrize("n", [1000, 1024, 3000])
def test_fft_parseval(n):
    rng = np.random.default_rng(n)
    t = np.arange(n) / 1e4
    s = WaveformSeries(t, {"v(out)": 1.5 + rng.standard_normal(n)}, "time")
    mag = compute_fft(s, "out").get("out")
    assert np.sum(mag ** 2) == pytest.approx(fft_energy(s, "out"), rel=1e-9)


def test_fft_needs_samples():
    with pytest.raises(TooFewSamples):
        compute_fft(_tone([1e3], [1.0], n=8), "out")


def test_series_length_mismatch():
    with pytest.raises(ValueError):
        WaveformSeries(np.arange(3.0), {"v(a)": np.zeros(4)}, "time")


def test_parse_raw_ascii():
    raw = """Title: t
Date: Thu Jan  1 00:00:00 2026
Plotname: Operating Point
Flags: real
No. Variables: 2
No. Points: 1
Variables:
\t0\tv(a)\tvoltage
\t1\tv(b)\tvoltage
Values:
 0\t1.5
\t2.5
"""
    plots = parse_raw(raw)
    assert plots[0].name.lower() == "operating point"
    assert plots[0].data.shape == (1, 2)
    assert plots[0].data[0, 1] == pytest.approx(2.5)

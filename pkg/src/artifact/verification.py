"""Five-stage, simulation-backed check pipeline.

Stages run in a fixed order (requirement, op_point, dc_sweep, function,
waveform) and the first failing stage stops the rest. Every message comes
from a registered template so the feedback prompt can be regenerated from
(template_id, data) alone.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .circuit_ir import AnalysisRequest, CircuitIR, CircuitType, NodeRoles, validate_connectivity
from .sim_driver import (
    NonConvergence,
    SimError,
    SimulationResult,
    SpiceEngine,
    WaveformSeries,
    compute_fft,
    dc_sweep,
    simulate,
)
from .tasks import DesignTask
from .testbench import add_load, attach_inputs, default_bias, find_source, input_source_name, set_transient, sine, sine_params, square, triangle

log = logging.getLogger(__name__)


class Stage(str, Enum):
    REQUIREMENT = "requirement"
    OP_POINT = "op_point"
    DC_SWEEP = "dc_sweep"
    FUNCTION = "function"
    WAVEFORM = "waveform"


STAGES = tuple(Stage)


class MissingAnalysis(Exception):
    pass


class EmptySeries(ValueError):
    pass


# ---------------------------------------------------------------- templates

# template id -> (format string, severity)
TEMPLATES: dict[str, tuple[str, str]] = {
    "unparseable": ("The netlist could not be parsed: {reason}", "fail"),
    "missing_node": ("Missing {node} node", "fail"),
    "missing_supply": ("Missing supply source for {node}", "fail"),
    "missing_component": ("No {kind} found; {circuit} needs at least one", "fail"),
    "missing_ground": ("Missing ground node (0)", "fail"),
    "floating_node": ("Floating node {node}: only one connection", "fail"),
    "unknown_subcircuit": ("Unknown subcircuit {name}", "fail"),
    "singular_matrix": ("Simulator reports a singular matrix at node {node}; it is probably floating", "fail"),
    "non_convergence": ("Simulation did not converge. Simulator log: {excerpt}", "fail"),
    "sim_error": ("Simulation failed: {reason}", "fail"),
    "cutoff": ("{device}: Vgs <= Vth (cutoff)", "fail"),
    "cutoff_warning": ("{device}: Vgs <= Vth (cutoff)", "warning"),
    "gain_too_small": ("Gain is less than 1e-5", "fail"),
    "best_bias": ("Best input bias: {bias:.6f} V (output {vout:.6f} V)", "info"),
    "gain_report": ("Gain: {gain_db:.2f} dB, bandwidth: {bandwidth_hz:.6g} Hz", "info"),
    "gain_low": ("Gain is {gain:.4f}, below the required {minimum:g}", "fail"),
    "osc_period": ("Average oscillation period: {period:.6f} s", "info"),
    "osc_amplitude": ("Maximum amplitude: {amplitude:.6f} V", "info"),
    "osc_too_small": ("The oscillation amplitude is too small.", "fail"),
    "osc_not_sustained": ("The oscillation is not sustained: late amplitude {late:.6f} V against early {early:.6f} V.", "fail"),
    "filter_cutoff": ("Cutoff frequency: {cutoff_hz:.6g} Hz", "info"),
    "filter_mismatch": ("The AC response does not behave like a {kind} filter: {detail}", "fail"),
    "filter_attenuation": ("Stopband attenuation is {attenuation_db:.2f} dB, needs at least {minimum:g} dB", "fail"),
    "inverter_levels": ("Output levels are wrong for an inverter: {high:.4f} V at low input, {low:.4f} V at high input", "fail"),
    "comparator_swing": ("Output does not switch across the threshold: swing is {swing:.4f} V, needs {minimum:.4f} V", "fail"),
    "hysteresis": ("Hysteresis width: {width:.6f} V (rising threshold {rising:.6f} V, falling threshold {falling:.6f} V)", "info"),
    "no_hysteresis": ("No hysteresis: rising threshold {rising:.6f} V, falling threshold {falling:.6f} V", "fail"),
    "no_switching": ("The output never crosses mid-level during the up and down sweeps", "fail"),
    "shape_report": ("Correlation with the ideal {operation}: {corr:.4f}", "info"),
    "shape_mismatch": ("The output is not the {operation} of the input (correlation {corr:.4f}, needs {minimum:g})", "fail"),
    "mirror_output": ("Output node sits at {vout:.4f} V, pinned to a rail; the current source is not regulating", "fail"),
    "input_slope": ("Output responds to {node} with slope {slope:.4f}, expected a {expected} slope", "fail"),
    "mixer_tone": ("The {label} tone at {freq:.6g} Hz is missing from the output spectrum", "fail"),
    "mixer_report": ("Output spectrum: {label} tone at {freq:.6g} Hz, {ratio:.2f}x above the noise floor", "info"),
    "no_stimulus": ("No sinusoidal input sources found for the mixer test", "fail"),
    "waveform_rendered": ("Rendered {analysis} waveform", "info"),
    "waveform_failed": ("Could not render the {analysis} waveform: {reason}", "warning"),
}


def render_message(template_id: str, data: dict) -> str:
    return TEMPLATES[template_id][0].format(**data)


@dataclass(frozen=True)
class Diagnostic:
    stage: Stage
    template_id: str
    data: dict = field(default_factory=dict)

    @property
    def message(self) -> str:
        return render_message(self.template_id, self.data)

    @property
    def severity(self) -> str:
        return TEMPLATES[self.template_id][1]

    def to_dict(self) -> dict:
        return {"stage": self.stage.value, "template_id": self.template_id, "severity": self.severity,
                "message": self.message, "data": _jsonable(self.data)}

    @classmethod
    def from_dict(cls, d: dict) -> "Diagnostic":
        return cls(Stage(d["stage"]), d["template_id"], dict(d.get("data", {})))


def diag(stage: Stage, template_id: str, **data) -> Diagnostic:
    if template_id not in TEMPLATES:
        raise KeyError(f"unregistered template {template_id!r}")
    render_message(template_id, data)  # fail fast on missing slots
    return Diagnostic(stage, template_id, data)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Enum):
        return obj.value
    return obj


def has_failure(diags: Sequence[Diagnostic]) -> bool:
    return any(d.severity == "fail" for d in diags)


# ----------------------------------------------------------------- profiles


@dataclass(frozen=True)
class CircuitTypeProfile:
    circuit_type: CircuitType
    required_analyses: frozenset[str]
    function_thresholds: dict = field(default_factory=dict)
    dc_sweep: bool = False  # stage 3 applies (DC path from input to output)
    linear: bool = True  # cutoff devices are failures rather than warnings
    needs_supply: bool = True
    essential: tuple[str, ...] = ("mosfet",)  # any of these component kinds
    options: dict = field(default_factory=dict)


def _p(kind, analyses, thresholds=None, **kw) -> CircuitTypeProfile:
    return CircuitTypeProfile(kind, frozenset(analyses), thresholds or {}, **kw)


_ACTIVE = ("mosfet", "subckt_instance")
_REACTIVE = ("capacitor", "inductor")

PROFILES: dict[CircuitType, CircuitTypeProfile] = {
    CircuitType.AMPLIFIER: _p(CircuitType.AMPLIFIER, {"dc_sweep", "ac"}, {"min_gain": 0.5}, dc_sweep=True, essential=_ACTIVE),
    CircuitType.OPAMP: _p(CircuitType.OPAMP, {"dc_sweep", "ac"}, {"min_gain": 10.0}, dc_sweep=True, essential=_ACTIVE),
    CircuitType.INVERTER: _p(CircuitType.INVERTER, {"dc_sweep"}, {"high_frac": 0.7, "low_frac": 0.3}, dc_sweep=True, linear=False, essential=_ACTIVE),
    CircuitType.CURRENT_MIRROR: _p(CircuitType.CURRENT_MIRROR, set(), {"rail_margin": 0.02}, essential=_ACTIVE),
    CircuitType.COMPARATOR: _p(CircuitType.COMPARATOR, {"dc_sweep"}, {"min_swing_frac": 0.4}, dc_sweep=True, linear=False, essential=_ACTIVE),
    CircuitType.FILTER: _p(CircuitType.FILTER, {"ac"}, {"min_attenuation_db": 20.0}, needs_supply=False, essential=_REACTIVE),
    CircuitType.MIXER: _p(CircuitType.MIXER, {"transient", "fft"}, {"min_tone_ratio": 10.0}, essential=_ACTIVE),
    CircuitType.OSCILLATOR: _p(CircuitType.OSCILLATOR, {"transient"}, {"min_amplitude": 0.05, "sustain_ratio": 0.8, "discard": 0.2, "stop": 20e-3, "step": 5e-6}, essential=_REACTIVE),
    CircuitType.INTEGRATOR: _p(CircuitType.INTEGRATOR, {"transient"}, {"min_corr": 0.9, "periods": 6}, essential=_REACTIVE),
    CircuitType.DIFFERENTIATOR: _p(CircuitType.DIFFERENTIATOR, {"transient"}, {"min_corr": 0.9, "periods": 6}, essential=_REACTIVE),
    CircuitType.ADDER: _p(CircuitType.ADDER, {"dc_sweep"}, {"min_slope": 0.1, "span": 0.1}, dc_sweep=True, essential=_ACTIVE),
    CircuitType.SUBTRACTOR: _p(CircuitType.SUBTRACTOR, {"dc_sweep"}, {"min_slope": 0.1, "span": 0.1}, dc_sweep=True, essential=_ACTIVE),
    CircuitType.SCHMITT_TRIGGER: _p(CircuitType.SCHMITT_TRIGGER, {"transient", "dc_transfer"}, {"period": 1e-3}, linear=False, essential=_ACTIVE),
}

DC_SWEEP_POINTS = 101
PROBE_CAPACITANCE = 1e-12
AC_RANGE = (1.0, 10e9)
AC_PPD = 20


def profile_for(task_or_type: DesignTask | CircuitType | str) -> CircuitTypeProfile:
    if isinstance(task_or_type, DesignTask):
        prof = PROFILES[task_or_type.circuit_type]
        if task_or_type.filter_kind:
            prof = replace(prof, options={**prof.options, "filter_kind": task_or_type.filter_kind})
        return prof
    kind = task_or_type if isinstance(task_or_type, CircuitType) else CircuitType.parse(task_or_type)
    return PROFILES[kind]


# ------------------------------------------------------------ stage 1: requirement


def check_requirements(circuit: CircuitIR, task: DesignTask | None = None) -> list[Diagnostic]:
    """Declared input/output nets, supply and essential component kinds."""
    st = Stage.REQUIREMENT
    roles = circuit.meta
    kind = task.circuit_type if task else roles.circuit_type
    nets = {n.lower() for n in circuit.nets()} | {"0"}
    out: list[Diagnostic] = []
    expected_inputs = task.inputs if task else roles.inputs
    expected_output = task.output_node if task else roles.output
    if kind is not CircuitType.OSCILLATOR:
        for net in expected_inputs:
            if net.lower() not in nets:
                out.append(diag(st, "missing_node", node=net))
    if not expected_output or expected_output.lower() not in nets:
        out.append(diag(st, "missing_node", node=expected_output or "Vout"))
    profile = PROFILES.get(kind) if kind else None
    if profile is None or profile.needs_supply:
        supply = roles.supply
        if supply is None:
            if profile is not None:
                out.append(diag(st, "missing_supply", node="Vdd"))
        elif find_source(circuit, supply[0]) is None and not _has_internal_supply(circuit):
            out.append(diag(st, "missing_supply", node=supply[0]))
    if profile is not None:
        kinds = {c.kind for c in circuit.components}
        if not kinds & set(profile.essential):
            label = " or ".join(k.replace("subckt_instance", "subcircuit instance") for k in profile.essential)
            out.append(diag(st, "missing_component", kind=label, circuit=f"a {kind.value.replace('_', ' ')}"))
    return out


def _has_internal_supply(circuit: CircuitIR) -> bool:
    return any(c.kind == "subckt_instance" for c in circuit.components)


# ------------------------------------------------------------- stage 2: op point

_SINGULAR = re.compile(r"singular matrix:\s*check node\s+(\S+)", re.IGNORECASE)


def _excerpt(text: str, limit: int = 400) -> str:
    lines = [l for l in text.splitlines() if re.search(r"error|warning|singular|converge|abort|timestep", l, re.IGNORECASE)]
    s = " | ".join(lines) if lines else text.strip()
    return s[:limit]


def check_op_point(sim: SimulationResult, linear: bool = True) -> list[Diagnostic]:
    """Convergence, floating nodes reported by the engine, cutoff devices.

    Cutoff is a failure for linear circuits and a warning for switching ones
    (inverters, comparators, Schmitt triggers) where it is expected.
    """
    st = Stage.OP_POINT
    out: list[Diagnostic] = []
    if not sim.converged:
        out.append(diag(st, "non_convergence", excerpt=_excerpt(sim.engine_log)))
    for node in sorted({m.group(1).rstrip(".,") for m in _SINGULAR.finditer(sim.engine_log)}):
        out.append(diag(st, "singular_matrix", node=node))
    tid = "cutoff" if linear else "cutoff_warning"
    for name in sorted(sim.devices):
        dev = sim.devices[name]
        if dev.region == "cutoff":
            out.append(diag(st, tid, device=_display_device(name), vgs=dev.vgs, vth=dev.vth))
    return out


def _display_device(name: str) -> str:
    # flattened names look like m.xop.m1
    parts = name.split(".")
    if len(parts) >= 3 and len(parts[0]) == 1:
        return ".".join(p.upper() for p in parts[1:])
    return name.upper()


# ------------------------------------------------------------- stage 3: DC sweep


def check_dc_sweep(series: WaveformSeries, roles: NodeRoles) -> tuple[list[Diagnostic], dict]:
    """Max |dVout/dVin| and the bias whose output is nearest mid-supply."""
    st = Stage.DC_SWEEP
    x = np.asarray(series.axis, float)
    y = np.real(np.asarray(series.get(roles.output), float))
    slope = np.abs(np.gradient(y, x)) if len(x) > 1 else np.zeros(1)
    max_slope = float(np.nanmax(slope)) if len(slope) else 0.0
    meas = {"max_slope": max_slope}
    out: list[Diagnostic] = []
    if not max_slope >= 1e-5:
        out.append(diag(st, "gain_too_small", max_slope=max_slope))
    if roles.supply:
        err = np.abs(y - roles.supply[1] / 2)
        k = int(np.argmin(err))
        meas["best_bias"] = float(x[k])
        meas["best_bias_vout"] = float(y[k])
        out.append(diag(st, "best_bias", bias=float(x[k]), vout=float(y[k])))
    return out, meas


# ------------------------------------------------------------ oscillation metrics


@dataclass(frozen=True)
class Oscillation:
    period: float
    amplitude: float
    sustained: bool

    def to_dict(self) -> dict:
        return {"period": self.period, "amplitude": self.amplitude, "sustained": self.sustained}


def _half_pp(v: np.ndarray) -> float:
    return float((v.max() - v.min()) / 2) if len(v) else 0.0


def measure_oscillation(series: WaveformSeries, signal: str, discard: float = 0.2) -> Oscillation:
    """Period from rising mean-crossings, amplitude as half peak-to-peak.

    The first ``discard`` fraction of the window is start-up and ignored.
    Sustained means the last-quarter amplitude is at least 0.8 of the
    second-quarter amplitude (quarters of the kept window).
    """
    t = np.asarray(series.axis, float)
    v = np.real(np.asarray(series.get(signal), float))
    if len(t) < 2:
        return Oscillation(0.0, 0.0, False)
    keep = t >= t[0] + discard * (t[-1] - t[0])
    t, v = t[keep], v[keep]
    amplitude = _half_pp(v)
    # engine noise on a flat trace is not an oscillation
    scale = max(1.0, float(np.abs(v).max())) if len(v) else 1.0
    if amplitude <= 1e-9 * scale:
        return Oscillation(0.0, 0.0, False)
    crossings = _kernels.rising_crossings(t, v, float(v.mean()))
    period = float(np.diff(crossings).mean()) if len(crossings) >= 2 else 0.0
    edges = t[0] + (t[-1] - t[0]) * np.array([0.25, 0.5, 0.75])
    early = _half_pp(v[(t >= edges[0]) & (t < edges[1])])
    late = _half_pp(v[t >= edges[2]])
    sustained = early > 0 and late >= 0.8 * early and len(crossings) >= 2
    return Oscillation(period, amplitude, bool(sustained))


# ------------------------------------------------------------- stage 4: function


@dataclass
class FunctionContext:
    """What the function check needs besides simulation data."""

    roles: NodeRoles
    stimulus: dict = field(default_factory=dict)
    extra: dict[str, SimulationResult] = field(default_factory=dict)


def _series(sims: SimulationResult, prefix: str) -> WaveformSeries | None:
    for key in sorted(sims.series):
        if key.startswith(prefix):
            return sims.series[key]
    return None


def _require(sims: SimulationResult, profile: CircuitTypeProfile, ctx: FunctionContext) -> None:
    keys = set(sims.series)
    for res in ctx.extra.values():
        keys |= set(res.series)
    have = {"op"} | {re.sub(r"\d+$", "", k) for k in keys}
    mapping = {"transient": "tran", "ac": "ac", "dc_sweep": "dc", "dc_transfer": "dc", "fft": "tran"}
    missing = sorted(a for a in profile.required_analyses if mapping[a] not in have)
    if missing:
        raise MissingAnalysis(f"{profile.circuit_type.value} needs {', '.join(missing)}")


def _db(x):
    return 20 * np.log10(np.maximum(np.abs(x), 1e-30))


def _crossing_freq(f: np.ndarray, mag_db: np.ndarray, level: float, start: int, direction: int) -> float | None:
    """First frequency after ``start`` where mag crosses ``level`` going in
    ``direction`` (-1 down, +1 up), interpolated on a log axis."""
    idx = range(start, len(f) - 1) if direction else ()
    for i in idx:
        a, b = mag_db[i], mag_db[i + 1]
        if (direction < 0 and a >= level > b) or (direction > 0 and a <= level < b):
            frac = (level - a) / (b - a)
            return float(10 ** (np.log10(f[i]) + frac * (np.log10(f[i + 1]) - np.log10(f[i]))))
    return None


def ac_gain_bandwidth(series: WaveformSeries, output: str) -> tuple[float, float, float]:
    """(linear gain, gain dB, -3 dB bandwidth) referenced to the lowest frequency."""
    f = np.asarray(series.axis, float)
    mag = np.abs(series.get(output))
    gain = float(mag[0])
    g_db = float(_db(gain))
    bw = _crossing_freq(f, _db(mag), g_db - 3.0, 0, -1)
    return gain, g_db, float(bw) if bw is not None else float(f[-1])


def _check_amplifier(sims, profile, ctx):
    st = Stage.FUNCTION
    gain, g_db, bw = ac_gain_bandwidth(_series(sims, "ac"), ctx.roles.output)
    meas = {"gain": gain, "gain_db": g_db, "bandwidth_hz": bw, "gbw_hz": gain * bw}
    out = [diag(st, "gain_report", gain_db=g_db, bandwidth_hz=bw)]
    if gain < profile.function_thresholds["min_gain"]:
        out.append(diag(st, "gain_low", gain=gain, minimum=profile.function_thresholds["min_gain"]))
    return out, meas


def _check_filter(sims, profile, ctx):
    st = Stage.FUNCTION
    series = _series(sims, "ac")
    f = np.asarray(series.axis, float)
    mag_db = _db(series.get(ctx.roles.output))
    kind = profile.options.get("filter_kind") or "lowpass"
    need = profile.function_thresholds["min_attenuation_db"]
    lo_end, hi_end = float(mag_db[0]), float(mag_db[-1])
    peak_i, dip_i = int(np.argmax(mag_db)), int(np.argmin(mag_db))
    peak, dip = float(mag_db[peak_i]), float(mag_db[dip_i])
    out: list[Diagnostic] = []
    meas: dict = {"passband_db": peak}
    if kind == "lowpass":
        att = lo_end - hi_end
        cut = _crossing_freq(f, mag_db, lo_end - 3, 0, -1)
        if lo_end < peak - 3:
            out.append(diag(st, "filter_mismatch", kind=kind, detail="low frequencies are not in the passband"))
    elif kind == "highpass":
        att = hi_end - lo_end
        cut = _crossing_freq(f, mag_db, hi_end - 3, 0, +1)
        if hi_end < peak - 3:
            out.append(diag(st, "filter_mismatch", kind=kind, detail="high frequencies are not in the passband"))
    elif kind == "bandpass":
        att = peak - max(lo_end, hi_end)
        cut = float(f[peak_i])
        if peak_i in (0, len(f) - 1):
            out.append(diag(st, "filter_mismatch", kind=kind, detail="the response peaks at a band edge"))
    else:  # bandstop
        att = min(lo_end, hi_end) - dip
        cut = float(f[dip_i])
        if dip_i in (0, len(f) - 1):
            out.append(diag(st, "filter_mismatch", kind=kind, detail="the response dips at a band edge"))
    meas["attenuation_db"] = float(att)
    if cut is not None:
        meas["cutoff_hz"] = float(cut)
        out.insert(0, diag(st, "filter_cutoff", cutoff_hz=float(cut)))
    if att < need:
        out.append(diag(st, "filter_attenuation", attenuation_db=float(att), minimum=need))
    return out, meas


def _check_oscillator(sims, profile, ctx):
    st = Stage.FUNCTION
    th = profile.function_thresholds
    osc = measure_oscillation(_series(sims, "tran"), ctx.roles.output, th["discard"])
    out = [diag(st, "osc_period", period=osc.period), diag(st, "osc_amplitude", amplitude=osc.amplitude)]
    if osc.amplitude < th["min_amplitude"]:
        out.append(diag(st, "osc_too_small"))
    elif not osc.sustained:
        series = _series(sims, "tran")
        t = series.axis
        v = np.real(series.get(ctx.roles.output))
        keep = t >= t[0] + th["discard"] * (t[-1] - t[0])
        t, v = t[keep], v[keep]
        q = t[0] + (t[-1] - t[0]) * np.array([0.25, 0.5, 0.75])
        out.append(diag(st, "osc_not_sustained", early=_half_pp(v[(t >= q[0]) & (t < q[1])]), late=_half_pp(v[t >= q[2]])))
    return out, {"period": osc.period, "amplitude": osc.amplitude, "sustained": float(osc.sustained)}


def _detrended(x: np.ndarray) -> np.ndarray:
    n = np.arange(len(x), dtype=float)
    if len(x) < 2:
        return x - x.mean()
    a, b = np.polyfit(n, x, 1)
    return x - (a * n + b)


def shape_correlation(t: np.ndarray, stimulus: np.ndarray, response: np.ndarray, operation: str) -> float:
    """Correlation between the response and the ideal operator output.

    Both sides are linearly detrended, which absorbs offsets and slow drift;
    the sign is dropped so inverting stages count.
    """
    u = stimulus - stimulus.mean()
    if operation == "integral":
        ideal = np.concatenate([[0.0], np.cumsum(0.5 * (u[1:] + u[:-1]) * np.diff(t))])
    else:
        ideal = np.gradient(u, t)
    a, b = _detrended(ideal), _detrended(response)
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float(abs((a * b).sum()) / den) if den > 0 else 0.0


def _check_shape(sims, profile, ctx):
    st = Stage.FUNCTION
    operation = "integral" if profile.circuit_type is CircuitType.INTEGRATOR else "derivative"
    series = _series(sims, "tran")
    t = np.asarray(series.axis, float)
    inp = ctx.roles.inputs[0]
    keep = t >= t[0] + 0.34 * (t[-1] - t[0])  # skip start-up periods
    # resample uniformly: the engine's adaptive steps bias a plain correlation
    tu = np.linspace(t[keep][0], t[-1], 4000)
    x = np.interp(tu, t, np.real(series.get(inp)))
    y = np.interp(tu, t, np.real(series.get(ctx.roles.output)))
    corr = shape_correlation(tu, x, y, operation)
    need = profile.function_thresholds["min_corr"]
    out = [diag(st, "shape_report", operation=operation, corr=corr)]
    if corr < need:
        out.append(diag(st, "shape_mismatch", operation=operation, corr=corr, minimum=need))
    return out, {"correlation": corr}


def _check_inverter(sims, profile, ctx):
    st = Stage.FUNCTION
    series = _series(sims, "dc")
    y = np.real(series.get(ctx.roles.output))
    vdd = ctx.roles.supply_voltage or float(np.max(series.axis))
    th = profile.function_thresholds
    high, low = float(y[0]), float(y[-1])
    out = []
    if high < th["high_frac"] * vdd or low > th["low_frac"] * vdd:
        out.append(diag(st, "inverter_levels", high=high, low=low))
    return out, {"output_high": high, "output_low": low}


def _check_comparator(sims, profile, ctx):
    st = Stage.FUNCTION
    series = _series(sims, "dc")
    y = np.real(series.get(ctx.roles.output))
    vdd = ctx.roles.supply_voltage or 1.0
    need = profile.function_thresholds["min_swing_frac"] * vdd
    swing = float(abs(y[-1] - y[0]))
    meas = {"swing": swing, "output_low_input": float(y[0]), "output_high_input": float(y[-1])}
    out = []
    if swing < need:
        out.append(diag(st, "comparator_swing", swing=swing, minimum=need))
    return out, meas


def _threshold(x: np.ndarray, y: np.ndarray, level: float) -> float | None:
    """First input value where y crosses level, walking x in stored order."""
    s = np.sign(y - level)
    idx = np.flatnonzero(s[:-1] * s[1:] < 0)
    if not len(idx):
        return None
    i = idx[0]
    return float(x[i] + (level - y[i]) * (x[i + 1] - x[i]) / (y[i + 1] - y[i]))


def _check_schmitt(sims, profile, ctx):
    st = Stage.FUNCTION
    up = ctx.extra.get("up")
    down = ctx.extra.get("down")
    if up is None or down is None:
        raise MissingAnalysis("schmitt trigger needs up and down DC transfer sweeps")
    s_up, s_down = up.series["dc1"], down.series["dc1"]
    y_up, y_down = np.real(s_up.get(ctx.roles.output)), np.real(s_down.get(ctx.roles.output))
    lo, hi = min(y_up.min(), y_down.min()), max(y_up.max(), y_down.max())
    mid = (lo + hi) / 2
    rising = _threshold(s_up.axis, y_up, mid)
    # the down sweep is stored ascending; walk it from the top
    falling = _threshold(s_down.axis[::-1], y_down[::-1], mid)
    if rising is None or falling is None or hi - lo < 1e-3:
        return [diag(st, "no_switching")], {}
    width = rising - falling
    meas = {"rising_threshold": rising, "falling_threshold": falling, "hysteresis_width": width}
    if width <= 0:
        return [diag(st, "no_hysteresis", rising=rising, falling=falling)], meas
    return [diag(st, "hysteresis", width=width, rising=rising, falling=falling)], meas


def _check_mirror(sims, profile, ctx):
    st = Stage.FUNCTION
    vdd = ctx.roles.supply_voltage or 0.0
    try:
        vout = sims.node(ctx.roles.output)
    except KeyError:
        return [diag(st, "mirror_output", vout=float("nan"))], {}
    margin = profile.function_thresholds["rail_margin"] * (vdd or 1.0)
    out = []
    if vout <= margin or (vdd and vout >= vdd - margin):
        out.append(diag(st, "mirror_output", vout=vout))
    return out, {"vout": vout}


def _check_adder(sims, profile, ctx):
    st = Stage.FUNCTION
    th = profile.function_thresholds
    subtract = profile.circuit_type is CircuitType.SUBTRACTOR
    slopes = {}
    out = []
    for net in ctx.roles.inputs:
        res = ctx.extra.get(f"slope:{net}")
        if res is None:
            raise MissingAnalysis(f"no sweep of input {net}")
        s = res.series["dc1"]
        slopes[net] = float(np.polyfit(s.axis, np.real(s.get(ctx.roles.output)), 1)[0])
    signs = [np.sign(v) for v in slopes.values()]
    for i, (net, v) in enumerate(slopes.items()):
        if abs(v) < th["min_slope"]:
            out.append(diag(st, "input_slope", node=net, slope=v, expected="nonzero"))
    if not out and len(signs) >= 2:
        if subtract and signs[0] == signs[1]:
            out.append(diag(st, "input_slope", node=list(slopes)[1], slope=list(slopes.values())[1],
                            expected="opposite-sign"))
        if not subtract and len(set(signs)) > 1:
            out.append(diag(st, "input_slope", node=list(slopes)[1], slope=list(slopes.values())[1],
                            expected="same-sign"))
    return out, {f"slope_{k}": v for k, v in slopes.items()}


def _tone_ratio(spec: WaveformSeries, name: str, freq: float) -> float:
    f = spec.axis
    mag = spec.get(name)
    df = f[1] - f[0]
    k = int(round(freq / df))
    lo, hi = max(1, k - 2), min(len(f), k + 3)
    peak = float(mag[lo:hi].max()) if hi > lo else 0.0
    floor = float(np.median(mag[1:])) or 1e-30
    return peak / floor


def _check_mixer(sims, profile, ctx):
    st = Stage.FUNCTION
    tones = ctx.stimulus.get("tones", [])
    if len(tones) < 2:
        return [diag(st, "no_stimulus")], {}
    f1, f2 = sorted(tones)[-2:]
    series = _series(sims, "tran")
    spec = compute_fft(series, ctx.roles.output)
    need = profile.function_thresholds["min_tone_ratio"]
    out, meas = [], {}
    for label, freq in (("difference", abs(f2 - f1)), ("sum", f1 + f2)):
        ratio = _tone_ratio(spec, ctx.roles.output, freq)
        meas[f"{label}_tone_ratio"] = ratio
        if ratio < need:
            out.append(diag(st, "mixer_tone", label=label, freq=freq))
        else:
            out.append(diag(st, "mixer_report", label=label, freq=freq, ratio=ratio))
    return out, meas


_FUNCTION_CHECKS = {
    CircuitType.AMPLIFIER: _check_amplifier,
    CircuitType.OPAMP: _check_amplifier,
    CircuitType.FILTER: _check_filter,
    CircuitType.OSCILLATOR: _check_oscillator,
    CircuitType.INTEGRATOR: _check_shape,
    CircuitType.DIFFERENTIATOR: _check_shape,
    CircuitType.INVERTER: _check_inverter,
    CircuitType.COMPARATOR: _check_comparator,
    CircuitType.SCHMITT_TRIGGER: _check_schmitt,
    CircuitType.CURRENT_MIRROR: _check_mirror,
    CircuitType.ADDER: _check_adder,
    CircuitType.SUBTRACTOR: _check_adder,
    CircuitType.MIXER: _check_mixer,
}


def check_function(sims: SimulationResult, profile: CircuitTypeProfile,
                   ctx: FunctionContext | NodeRoles) -> tuple[list[Diagnostic], dict]:
    """Per-type functional test. Raises MissingAnalysis when data is absent."""
    if isinstance(ctx, NodeRoles):
        ctx = FunctionContext(ctx)
    _require(sims, profile, ctx)
    return _FUNCTION_CHECKS[profile.circuit_type](sims, profile, ctx)


# ------------------------------------------------------------ stage 5: waveform

FIG_SIZE = (8.0, 4.5)
FIG_DPI = 100
MAX_PLOT_POINTS = 2000


def render_waveform(series: WaveformSeries, signals: Sequence[str], title: str) -> bytes:
    """PNG line chart. Identical inputs give identical bytes.

    Traces are min/max downsampled to at most 2000 points. AC data is drawn
    as magnitude in dB on a log frequency axis.
    """
    if series is None or len(series.axis) == 0:
        raise EmptySeries("nothing to plot")
    from matplotlib.backends.backend_agg import FigureCanvasAgg
    from matplotlib.figure import Figure

    fig = Figure(figsize=FIG_SIZE, dpi=FIG_DPI)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    x = np.asarray(series.axis, float)
    is_ac = series.axis_kind == "frequency" and any(np.iscomplexobj(series.get(s)) for s in signals if series.has(s))
    drawn = 0
    for name in signals:
        if not series.has(name):
            continue
        y = series.get(name)
        y = _db(y) if is_ac else np.real(y).astype(float)
        px, py = _kernels.minmax_downsample(x, y, MAX_PLOT_POINTS // 2)
        ax.plot(px, py, linewidth=1.2, label=name)
        drawn += 1
    if not drawn:
        raise EmptySeries(f"none of {list(signals)} in series")
    if series.axis_kind == "frequency":
        ax.set_xscale("log")
        ax.set_xlabel("Frequency (Hz)")
        ax.set_ylabel("Magnitude (dB)" if is_ac else "Magnitude")
    elif series.axis_kind == "time":
        ax.set_xlabel("Time (s)")
        ax.set_ylabel("Voltage (V)")
    else:
        ax.set_xlabel("Input (V)")
        ax.set_ylabel("Output (V)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    return buf.getvalue()


# ----------------------------------------------------------------- reporting


@dataclass
class CheckReport:
    verdict: str = "pass"
    diagnostics: list[Diagnostic] = field(default_factory=list)
    measurements: dict = field(default_factory=dict)
    waveform_images: list[tuple[str, bytes]] = field(default_factory=list)
    stages_run: list[Stage] = field(default_factory=list)
    failed_stage: Stage | None = None

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def failures(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "fail"]

    def messages(self, severities=("fail", "warning", "info")) -> list[str]:
        return [d.message for d in self.diagnostics if d.severity in severities]

    def template_ids(self) -> list[str]:
        return [d.template_id for d in self.diagnostics]

    def to_dict(self, image_names: Sequence[str] | None = None) -> dict:
        images = []
        for i, (aid, data) in enumerate(self.waveform_images):
            entry = {"analysis": aid, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
            if image_names is not None:
                entry["file"] = image_names[i]
            images.append(entry)
        return {
            "verdict": self.verdict,
            "failed_stage": self.failed_stage.value if self.failed_stage else None,
            "stages_run": [s.value for s in self.stages_run],
            "diagnostics": [d.to_dict() for d in self.diagnostics],
            "measurements": _jsonable(self.measurements),
            "waveform_images": images,
        }

    def write(self, directory: str | Path) -> Path:
        """Write report.json plus one PNG per waveform image."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        names = []
        for aid, data in self.waveform_images:
            name = f"waveform_{aid}.png"
            (d / name).write_bytes(data)
            names.append(name)
        path = d / "report.json"
        path.write_text(json.dumps(self.to_dict(names), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dict(cls, d: dict, images: Sequence[tuple[str, bytes]] = ()) -> "CheckReport":
        return cls(
            verdict=d["verdict"],
            diagnostics=[Diagnostic.from_dict(x) for x in d.get("diagnostics", [])],
            measurements=dict(d.get("measurements", {})),
            waveform_images=list(images),
            stages_run=[Stage(s) for s in d.get("stages_run", [])],
            failed_stage=Stage(d["failed_stage"]) if d.get("failed_stage") else None,
        )

    def image_b64(self, analysis: str) -> str:
        for aid, data in self.waveform_images:
            if aid == analysis:
                return base64.b64encode(data).decode()
        raise KeyError(analysis)


# ------------------------------------------------------------------ pipeline


@dataclass
class _Run:
    circuit: CircuitIR
    task: DesignTask | None
    profile: CircuitTypeProfile | None
    engine: SpiceEngine | None
    workdir: Path | None
    report: CheckReport
    plots: dict[str, tuple[WaveformSeries, list[str], str]] = field(default_factory=dict)

    def sim(self, circuit: CircuitIR, analyses: list[AnalysisRequest], tag: str) -> SimulationResult:
        wd = None
        if self.workdir is not None:
            wd = self.workdir / tag
            wd.mkdir(parents=True, exist_ok=True)
        try:
            res = simulate(circuit, analyses, wd, self.engine)
            if res.converged or not any(a.kind == "transient" for a in analyses):
                return res
        except NonConvergence:
            if not any(a.kind == "transient" for a in analyses):
                raise
        # Regenerative edges with no capacitance stall the timestep control.
        # Retry once with a scope-probe load on the output.
        self.report.measurements["probe_capacitance"] = PROBE_CAPACITANCE
        return simulate(add_load(circuit, circuit.meta.output, PROBE_CAPACITANCE), analyses, wd, self.engine)


def _roles_for(circuit: CircuitIR, task: DesignTask | None) -> NodeRoles:
    roles = circuit.meta
    if task is None:
        return roles
    return replace(roles, output=roles.output or task.output_node,
                   input=roles.input if roles.input else task.input_node,
                   circuit_type=roles.circuit_type or task.circuit_type)


def _uses_ic(circuit: CircuitIR) -> bool:
    return any(c.initial_condition is not None for c in circuit.components)


def _rc_time_constant(circuit: CircuitIR, input_net: str, kind: CircuitType) -> float:
    """Rough operator time constant used to pick the stimulus period.

    Integrators: the resistor on the input net times the largest capacitor.
    Differentiators: the largest resistor off the input net times the
    largest capacitor.
    """
    key = input_net.lower()
    on_input = [c for c in circuit.components if c.kind == "resistor" and key in (t.lower() for t in c.terminals)]
    off_input = [c for c in circuit.components if c.kind == "resistor" and c not in on_input]
    pool = on_input if kind is CircuitType.INTEGRATOR else off_input
    rs = [float(c.params["value"]) for c in pool or on_input + off_input] or [1e3]
    caps = [float(c.params["value"]) for c in circuit.components if c.kind == "capacitor"] or [1e-9]
    r = min(rs) if kind is CircuitType.INTEGRATOR else max(rs)
    return r * max(caps)


def _function_stage(run: _Run, tb: CircuitIR, roles: NodeRoles, dc_meas: dict) -> tuple[SimulationResult, FunctionContext]:
    kind = run.profile.circuit_type
    th = run.profile.function_thresholds
    ctx = FunctionContext(roles)
    if run.plots.get("dc"):
        ctx.extra["dc_sweep"] = SimulationResult(series={"dc1": run.plots["dc"][0]})
    vdd = roles.supply_voltage or 0.0
    if kind in (CircuitType.AMPLIFIER, CircuitType.OPAMP):
        bias = _refine_bias(run, tb, roles, dc_meas)
        circuit = attach_inputs(tb, {roles.inputs[0]: bias}) if bias is not None else tb
        if bias is not None:
            run.report.measurements["bias"] = bias
        sims = run.sim(circuit, [AnalysisRequest.op(), AnalysisRequest.ac_dec(*AC_RANGE, AC_PPD)], "function")
        run.plots["ac"] = (sims.series["ac1"], [roles.output], "AC response") if "ac1" in sims.series else None
        return sims, ctx
    if kind is CircuitType.FILTER:
        sims = run.sim(tb, [AnalysisRequest.ac_dec(*AC_RANGE, AC_PPD)], "function")
        if "ac1" in sims.series:
            run.plots["ac"] = (sims.series["ac1"], [roles.output], "AC response")
        return sims, ctx
    if kind is CircuitType.OSCILLATOR:
        sims = run.sim(tb, [AnalysisRequest.tran(th["step"], th["stop"], use_ic=_uses_ic(tb))], "function")
        if "tran1" in sims.series:
            run.plots["tran"] = (sims.series["tran1"], [roles.output], "Transient output")
        return sims, ctx
    if kind in (CircuitType.INTEGRATOR, CircuitType.DIFFERENTIATOR):
        net = roles.inputs[0]
        src = find_source(tb, net)
        center = float(src.params.get("dc", default_bias(tb))) if src else default_bias(tb)
        tau = _rc_time_constant(tb, net, kind)
        period = 4 * tau
        amp = 0.1
        wave = square(center - amp, center + amp, period) if kind is CircuitType.INTEGRATOR else triangle(center - amp, center + amp, period)
        circuit = set_transient(tb, net, wave)
        n_per = th["periods"]
        sims = run.sim(circuit, [AnalysisRequest.tran(period / 200, n_per * period, use_ic=_uses_ic(tb))], "function")
        if "tran1" in sims.series:
            run.plots["tran"] = (sims.series["tran1"], [net, roles.output], "Transient response")
        ctx.stimulus = {"period": period, "amplitude": amp, "center": center}
        return sims, ctx
    if kind in (CircuitType.INVERTER, CircuitType.COMPARATOR):
        source = input_source_name(tb, roles.inputs[0])
        sims = run.sim(tb, [AnalysisRequest.dc(source, 0.0, vdd, vdd / (DC_SWEEP_POINTS - 1))], "function")
        if "dc1" in sims.series:
            run.plots["dc"] = (sims.series["dc1"], [roles.output], "DC transfer")
        return sims, ctx
    if kind is CircuitType.SCHMITT_TRIGGER:
        source = input_source_name(tb, roles.inputs[0])
        step = vdd / (DC_SWEEP_POINTS - 1)
        up = run.sim(tb, [AnalysisRequest.transfer(source, 0.0, vdd, step)], "function_up")
        down = run.sim(tb, [AnalysisRequest.transfer(source, vdd, 0.0, step)], "function_down")
        period = th["period"]
        tri = set_transient(tb, roles.inputs[0], triangle(0.0, vdd, period))
        sims = run.sim(tri, [AnalysisRequest.tran(period / 400, 2 * period, use_ic=_uses_ic(tb))], "function")
        if "tran1" in sims.series:
            run.plots["tran"] = (sims.series["tran1"], [roles.inputs[0], roles.output], "Transient response")
        if "dc1" in up.series and "dc1" in down.series:
            run.plots["dc_transfer"] = (_merge_updown(up.series["dc1"], down.series["dc1"], roles.output), ["up", "down"], "DC transfer (up and down)")
        ctx.extra.update(up=up, down=down)
        return sims, ctx
    if kind is CircuitType.CURRENT_MIRROR:
        sims = run.sim(tb, [AnalysisRequest.op()], "function")
        return sims, ctx
    if kind in (CircuitType.ADDER, CircuitType.SUBTRACTOR):
        span = th["span"]
        extra = {}
        for net in roles.inputs:
            src = find_source(tb, net)
            center = float(src.params.get("dc", default_bias(tb))) if src else default_bias(tb)
            source = input_source_name(tb, net)
            res = run.sim(tb, [AnalysisRequest.dc(source, center - span, center + span, span / 10)], f"function_{net}")
            extra[f"slope:{net}"] = res
            if "dc1" in res.series:
                run.plots[f"dc_{net}"] = (res.series["dc1"], [roles.output], f"Output against {net}")
        first = extra[f"slope:{roles.inputs[0]}"]
        ctx.extra.update(extra)
        return first, ctx
    if kind is CircuitType.MIXER:
        tb2, tones = _mixer_stimulus(tb, roles)
        ctx.stimulus = {"tones": tones}
        if len(tones) < 2:
            return SimulationResult(series={"tran1": WaveformSeries(np.array([0.0, 1.0]), {}, "time")}), ctx
        fmin = min(abs(tones[0] - tones[1]), *tones)
        step = 1 / (200 * (tones[0] + tones[1]))
        stop = min(20 / fmin, 50000 * step)
        sims = run.sim(tb2, [AnalysisRequest.tran(step, stop)], "function")
        if "tran1" in sims.series:
            run.plots["tran"] = (sims.series["tran1"], [roles.output], "Transient output")
            try:
                run.plots["fft"] = (compute_fft(sims.series["tran1"], roles.output), [roles.output.lower()], "Output spectrum")
            except (SimError, KeyError):
                pass
        return sims, ctx
    raise MissingAnalysis(f"no function check for {kind}")


def _merge_updown(up: WaveformSeries, down: WaveformSeries, output: str) -> WaveformSeries:
    y_down = np.interp(up.axis, down.axis, np.real(down.get(output)))
    return WaveformSeries(up.axis, {"up": np.real(up.get(output)), "down": y_down}, "voltage")


def _mixer_stimulus(tb: CircuitIR, roles: NodeRoles) -> tuple[CircuitIR, list[float]]:
    tones = []
    for c in tb.components:
        if c.kind == "vsource" and isinstance(c.params.get("tran"), str):
            p = sine_params(c.params["tran"])
            if p and p[2] > 0:
                tones.append(p[2])
    if len(tones) >= 2:
        return tb, tones[:2]
    # no tones given: drive RF and LO inputs with defaults
    defaults = [(0.05, 100e3), (0.5, 1e6)]
    out = tb
    tones = []
    for net, (amp, freq) in zip(roles.inputs, defaults):
        src = find_source(out, net)
        center = float(src.params.get("dc", default_bias(out))) if src else default_bias(out)
        out = set_transient(out, net, sine(center, amp, freq))
        tones.append(freq)
    return out, tones


def _refine_bias(run: _Run, tb: CircuitIR, roles: NodeRoles, dc_meas: dict) -> float | None:
    """Fine bias around the stage-3 best point (two local sweeps)."""
    if "best_bias" not in dc_meas or not roles.supply:
        return None
    from .sizing.bias import multires_bias_search

    source = input_source_name(tb, roles.inputs[0])
    vdd = roles.supply[1]

    def sweep(start, stop, n):
        s = dc_sweep(tb, source, start, stop, n, engine=run.engine)
        return s.axis, np.real(s.get(roles.output))

    try:
        res = multires_bias_search(sweep, vdd, [DC_SWEEP_POINTS, 51, 51], (0.0, 1.0))
    except SimError:
        return dc_meas["best_bias"]
    return res.bias


def run_pipeline(circuit: CircuitIR, task: DesignTask | None = None, engine: SpiceEngine | None = None,
                 workdir: str | Path | None = None, render: bool = True) -> CheckReport:
    """Run the five stages in order, stopping at the first failure.

    Simulator problems become diagnostics, never exceptions. Waveforms of
    every analysis that ran are attached, also on failure.
    """
    report = CheckReport()
    roles = _roles_for(circuit, task)
    circuit = replace(circuit, meta=roles)
    kind = roles.circuit_type
    profile = profile_for(task) if task else (PROFILES.get(kind) if kind else None)
    run = _Run(circuit, task, profile, engine, Path(workdir) if workdir else None, report)

    def finish(stage: Stage | None) -> CheckReport:
        report.failed_stage = stage
        report.verdict = "fail" if stage is not None else "pass"
        if render:
            _attach_images(run)
        return report

    def stage_done(stage: Stage, diags: list[Diagnostic]) -> bool:
        report.stages_run.append(stage)
        report.diagnostics.extend(diags)
        return has_failure(diags)

    # 1. requirements
    req = check_requirements(circuit, task)
    issues = validate_connectivity(circuit)
    req += [diag(Stage.REQUIREMENT, "unknown_subcircuit", name=i.net) for i in issues if i.code == "unknown_subcircuit"]
    if stage_done(Stage.REQUIREMENT, req):
        return finish(Stage.REQUIREMENT)

    # 2. structure + operating point
    st = Stage.OP_POINT
    op_diags = []
    for i in issues:
        if i.code == "floating_net":
            op_diags.append(diag(st, "floating_node", node=i.net))
        elif i.code == "no_ground":
            op_diags.append(diag(st, "missing_ground"))
    tb = attach_inputs(circuit)
    sim = None
    if not op_diags:
        try:
            sim = run.sim(tb, [AnalysisRequest.op()], "op")
            op_diags += check_op_point(sim, profile.linear if profile else True)
            report.measurements["op_point"] = {k: v for k, v in sorted(sim.op_point.items())}
        except NonConvergence as exc:
            op_diags.append(diag(st, "non_convergence", excerpt=_excerpt(exc.engine_log or str(exc))))
        except (SimError, OSError) as exc:
            op_diags.append(diag(st, "sim_error", reason=str(exc)))
    if stage_done(st, op_diags):
        return finish(st)

    # 3. DC sweep
    st = Stage.DC_SWEEP
    dc_meas: dict = {}
    dc_diags: list[Diagnostic] = []
    if profile and profile.dc_sweep and roles.inputs and roles.supply:
        source = input_source_name(tb, roles.inputs[0])
        vdd = roles.supply[1]
        try:
            series = dc_sweep(tb, source, 0.0, vdd, DC_SWEEP_POINTS, engine=engine)
            run.plots["dc"] = (series, [roles.output], "DC sweep")
            dc_diags, dc_meas = check_dc_sweep(series, roles)
            report.measurements.update(dc_meas)
        except NonConvergence as exc:
            dc_diags = [diag(st, "non_convergence", excerpt=_excerpt(exc.engine_log or str(exc)))]
        except (SimError, KeyError) as exc:
            dc_diags = [diag(st, "sim_error", reason=str(exc))]
    if stage_done(st, dc_diags):
        return finish(st)

    # 4. function
    st = Stage.FUNCTION
    fn_diags: list[Diagnostic] = []
    if profile is not None:
        try:
            sims, ctx = _function_stage(run, tb, roles, dc_meas)
            fn_diags, meas = check_function(sims, profile, ctx)
            report.measurements.update(meas)
        except MissingAnalysis as exc:
            fn_diags = [diag(st, "sim_error", reason=f"missing analysis: {exc}")]
        except NonConvergence as exc:
            fn_diags = [diag(st, "non_convergence", excerpt=_excerpt(exc.engine_log or str(exc)))]
        except (SimError, KeyError, ValueError) as exc:
            fn_diags = [diag(st, "sim_error", reason=str(exc))]
    if stage_done(st, fn_diags):
        return finish(st)

    # 5. waveform
    report.stages_run.append(Stage.WAVEFORM)
    return finish(None)


def _attach_images(run: _Run) -> None:
    report = run.report
    rendered = []
    for aid in sorted(run.plots):
        entry = run.plots[aid]
        if entry is None:
            continue
        series, signals, title = entry
        try:
            report.waveform_images.append((aid, render_waveform(series, signals, title)))
            rendered.append(diag(Stage.WAVEFORM, "waveform_rendered", analysis=aid))
        except (EmptySeries, KeyError, ValueError) as exc:
            rendered.append(diag(Stage.WAVEFORM, "waveform_failed", analysis=aid, reason=str(exc)))
    if Stage.WAVEFORM in report.stages_run:
        report.diagnostics.extend(rendered)

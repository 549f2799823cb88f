"""Testbench plumbing: input sources, bias overrides, loads, stimuli.

Design netlists declare their input nets but need not drive them; the
framework attaches a source per input before simulating.
"""

from __future__ import annotations

from dataclasses import replace

from .circuit_ir import CircuitIR, Component, format_value, is_ground, parse_value

TB_PREFIX = "Vtb_"


def find_source(circuit: CircuitIR, net: str) -> Component | None:
    """The voltage source driving ``net`` against ground, if any."""
    key = net.lower()
    for c in circuit.components:
        if c.kind != "vsource":
            continue
        a, b = c.terminals
        if a.lower() == key and is_ground(b):
            return c
    return None


def supply_source(circuit: CircuitIR) -> Component | None:
    if not circuit.meta.supply:
        return None
    return find_source(circuit, circuit.meta.supply[0])


def default_bias(circuit: CircuitIR) -> float:
    """Reference voltage when declared, else mid-supply, else 0 V."""
    roles = circuit.meta
    if roles.reference:
        return roles.reference[1]
    if roles.supply:
        return roles.supply[1] / 2
    return 0.0


def _replace_component(circuit: CircuitIR, old: Component, new: Component) -> CircuitIR:
    return circuit.with_components(new if c is old else c for c in circuit.components)


def attach_inputs(circuit: CircuitIR, bias: dict[str, float] | None = None, ac: bool = True) -> CircuitIR:
    """Make sure every declared input net is driven by a voltage source.

    Existing sources keep their settings unless ``bias`` overrides the DC
    level. Missing sources are added at the default bias. When ``ac`` is set
    and no input carries an AC magnitude, the first input gets AC 1.
    """
    bias = {k.lower(): v for k, v in (bias or {}).items()}
    out = circuit
    for net in circuit.meta.inputs:
        src = find_source(out, net)
        level = bias.get(net.lower())
        if src is None:
            src = Component(f"{TB_PREFIX}{net}", "vsource", (net, "0"), None,
                            {"dc": level if level is not None else default_bias(circuit)})
            out = out.with_components([*out.components, src])
        elif level is not None:
            out = _replace_component(out, src, replace(src, params={**src.params, "dc": level}))
    if ac and circuit.meta.inputs:
        srcs = [find_source(out, n) for n in circuit.meta.inputs]
        if not any("ac" in s.params for s in srcs):
            first = srcs[0]
            out = _replace_component(out, first, replace(first, params={**first.params, "ac": 1.0}))
    return out


def input_source_name(circuit: CircuitIR, net: str) -> str:
    src = find_source(circuit, net)
    return src.refdes if src is not None else f"{TB_PREFIX}{net}"


def set_transient(circuit: CircuitIR, net: str, descriptor: str) -> CircuitIR:
    """Give the source on ``net`` a transient waveform (keeps its DC level)."""
    src = find_source(circuit, net)
    if src is None:
        raise KeyError(f"no source drives {net}")
    return _replace_component(circuit, src, replace(src, params={**src.params, "tran": descriptor}))


def add_load(circuit: CircuitIR, net: str, capacitance: float) -> CircuitIR:
    load = Component("Ctb_load", "capacitor", (net, "0"), None, {"value": capacitance})
    return circuit.with_components([*circuit.components, load])


def square(low: float, high: float, period: float) -> str:
    edge = period / 1000
    v = [format_value(x) for x in (low, high, 0.0, edge, edge, period / 2 - edge, period)]
    return "PULSE(" + " ".join(v) + ")"


def triangle(low: float, high: float, period: float) -> str:
    # a zero pulse width means "use the default" to SPICE, so keep a sliver
    flat = period * 1e-4
    ramp = (period - flat) / 2
    v = [format_value(x) for x in (low, high, 0.0, ramp, ramp, flat, period)]
    return "PULSE(" + " ".join(v) + ")"


def sine(offset: float, amplitude: float, freq: float) -> str:
    return f"SIN({format_value(offset)} {format_value(amplitude)} {format_value(freq)})"


def sine_params(descriptor: str) -> tuple[float, float, float] | None:
    """(offset, amplitude, frequency) of a SIN(...) descriptor."""
    text = descriptor.strip()
    if not text.upper().startswith("SIN"):
        return None
    inner = text[text.index("(") + 1: text.rindex(")")].replace(",", " ").split()
    if len(inner) < 3:
        return None
    return parse_value(inner[0]), parse_value(inner[1]), parse_value(inner[2])

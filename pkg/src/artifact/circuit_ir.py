"""Circuit intermediate representation and SPICE deck (de)serialization.

Decks carry node-role metadata as comment directives, one per line::

    * META input=Vin
    * META output=Vout
    * META supply=Vdd:5
    * META reference=Vref:2.5
    * META type=amplifier

Being comments, they survive any SPICE parser.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence


class CircuitType(str, Enum):
    AMPLIFIER = "amplifier"
    INVERTER = "inverter"
    CURRENT_MIRROR = "current_mirror"
    COMPARATOR = "comparator"
    FILTER = "filter"
    OPAMP = "opamp"
    MIXER = "mixer"
    OSCILLATOR = "oscillator"
    INTEGRATOR = "integrator"
    DIFFERENTIATOR = "differentiator"
    ADDER = "adder"
    SUBTRACTOR = "subtractor"
    SCHMITT_TRIGGER = "schmitt_trigger"

    @classmethod
    def parse(cls, text: str) -> "CircuitType":
        key = re.sub(r"[\s\-]+", "_", text.strip().lower())
        aliases = {
            "op_amp": "opamp",
            "operational_amplifier": "opamp",
            "schmitt": "schmitt_trigger",
            "currentmirror": "current_mirror",
            "mirror": "current_mirror",
        }
        return cls(aliases.get(key, key))


class CircuitError(Exception):
    pass


class InvalidCircuit(CircuitError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ParseError(CircuitError):
    def __init__(self, message: str, line_no: int = 0, snippet: str = ""):
        self.line_no = line_no
        self.snippet = snippet
        super().__init__(f"line {line_no}: {message}: {snippet!r}" if line_no else message)


class MissingMeta(CircuitError):
    pass


class UnknownSubcircuit(CircuitError):
    pass


GROUND = "0"
_GROUND_ALIASES = {"0", "gnd", "gnd!"}

_SUFFIXES = {
    "t": 1e12,
    "g": 1e9,
    "meg": 1e6,
    "k": 1e3,
    "mil": 25.4e-6,
    "m": 1e-3,
    "u": 1e-6,
    "µ": 1e-6,
    "n": 1e-9,
    "p": 1e-12,
    "f": 1e-15,
}
_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|mil|[tgkmuµnpf])?([a-zA-Z]*)$", re.IGNORECASE)


def parse_value(text: str) -> float:
    """Parse a SPICE magnitude such as ``10k``, ``4.7u``, ``1Meg`` or ``2.5V``.

    Trailing unit letters after the suffix are ignored, as SPICE does.
    """
    m = _NUMBER.match(text.strip())
    if not m:
        raise ValueError(f"not a SPICE number: {text!r}")
    value = float(m.group(1))
    suffix = (m.group(2) or "").lower()
    if suffix:
        value *= _SUFFIXES[suffix]
    return value


def is_value(text: str) -> bool:
    return bool(_NUMBER.match(text.strip()))


def format_value(value: float) -> str:
    # repr round-trips every float exactly
    return repr(float(value))


def is_ground(net: str) -> bool:
    return net.lower() in _GROUND_ALIASES


def _canon_net(net: str) -> str:
    return GROUND if is_ground(net) else net


# element prefix -> (kind, terminal count; None = variable)
_PREFIX_KIND = {
    "m": ("mosfet", 4),
    "r": ("resistor", 2),
    "c": ("capacitor", 2),
    "l": ("inductor", 2),
    "v": ("vsource", 2),
    "i": ("isource", 2),
    "e": ("vcvs", 4),
    "g": ("vccs", 4),
    "d": ("diode", 2),
    "x": ("subckt_instance", None),
}
_KIND_PREFIX = {kind: prefix.upper() for prefix, (kind, _) in _PREFIX_KIND.items()}
TERMINAL_COUNT = {kind: n for kind, n in _PREFIX_KIND.values()}


@dataclass(frozen=True)
class DeviceModel:
    name: str
    kind: str  # nmos, pmos or other
    params: dict[str, float] = field(default_factory=dict)
    type_name: str = ""  # SPICE model type when kind == "other" (e.g. "d")

    @property
    def spice_type(self) -> str:
        return self.type_name or self.kind


@dataclass(frozen=True)
class Component:
    refdes: str
    kind: str
    terminals: tuple[str, ...]
    model: str | None = None  # device model, or subcircuit name for X instances
    params: dict[str, float | str] = field(default_factory=dict)
    initial_condition: float | None = None

    @property
    def prefix(self) -> str:
        return self.refdes[0].upper()


@dataclass(frozen=True)
class SubcircuitDef:
    name: str
    ports: tuple[str, ...]
    body: tuple[Component, ...]
    models: tuple[DeviceModel, ...] = ()


@dataclass(frozen=True)
class NodeRoles:
    output: str
    input: str | None = None  # comma-separated when the circuit has several inputs
    supply: tuple[str, float] | None = None
    reference: tuple[str, float] | None = None
    circuit_type: CircuitType | None = None

    @property
    def inputs(self) -> list[str]:
        if not self.input:
            return []
        return [n.strip() for n in self.input.split(",") if n.strip()]

    @property
    def supply_voltage(self) -> float | None:
        return self.supply[1] if self.supply else None


@dataclass(frozen=True)
class CircuitIR:
    title: str
    components: tuple[Component, ...]
    meta: NodeRoles
    models: tuple[DeviceModel, ...] = ()
    subcircuits: dict[str, SubcircuitDef] = field(default_factory=dict)
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def component(self, refdes: str) -> Component:
        for c in self.components:
            if c.refdes.lower() == refdes.lower():
                return c
        raise KeyError(refdes)

    def model(self, name: str) -> DeviceModel | None:
        for m in self.models:
            if m.name.lower() == name.lower():
                return m
        return None

    def nets(self) -> set[str]:
        return {t for c in self.components for t in c.terminals}

    def with_components(self, components: Iterable[Component]) -> "CircuitIR":
        return replace(self, components=tuple(components))


@dataclass(frozen=True)
class AnalysisRequest:
    """One analysis directive.

    kind is op, dc_sweep, dc_transfer (a dc sweep, possibly descending),
    transient or ac.
    """

    kind: str
    source: str = ""
    start: float = 0.0
    stop: float = 0.0
    step: float = 0.0
    use_ic: bool = False
    points_per_decade: int = 20

    def __post_init__(self):
        if self.kind not in ("op", "dc_sweep", "dc_transfer", "transient", "ac"):
            raise ValueError(f"unknown analysis kind {self.kind!r}")
        if self.kind == "dc_sweep" and not self.start < self.stop:
            raise ValueError("dc sweep needs start < stop")
        if self.kind in ("dc_sweep", "dc_transfer", "transient") and not self.step > 0:
            raise ValueError("step must be positive")
        if self.kind == "dc_transfer" and self.start == self.stop:
            raise ValueError("dc transfer needs start != stop")
        if self.kind == "transient" and not self.stop > 0:
            raise ValueError("transient stop time must be positive")
        if self.kind == "ac" and not (0 < self.start < self.stop):
            raise ValueError("ac needs 0 < fstart < fstop")

    @classmethod
    def op(cls) -> "AnalysisRequest":
        return cls("op")

    @classmethod
    def dc(cls, source: str, start: float, stop: float, step: float) -> "AnalysisRequest":
        return cls("dc_sweep", source=source, start=start, stop=stop, step=step)

    @classmethod
    def transfer(cls, source: str, start: float, stop: float, step: float) -> "AnalysisRequest":
        return cls("dc_transfer", source=source, start=start, stop=stop, step=abs(step))

    @classmethod
    def tran(cls, step: float, stop: float, use_ic: bool = False) -> "AnalysisRequest":
        return cls("transient", step=step, stop=stop, use_ic=use_ic)

    @classmethod
    def ac_dec(cls, fstart: float, fstop: float, points_per_decade: int = 20) -> "AnalysisRequest":
        return cls("ac", start=fstart, stop=fstop, points_per_decade=points_per_decade)

    def directive(self) -> str:
        if self.kind == "op":
            return ".op"
        if self.kind in ("dc_sweep", "dc_transfer"):
            step = self.step if self.stop >= self.start else -self.step
            return f".dc {self.source} {format_value(self.start)} {format_value(self.stop)} {format_value(step)}"
        if self.kind == "transient":
            line = f".tran {format_value(self.step)} {format_value(self.stop)}"
            return line + " uic" if self.use_ic else line
        return f".ac dec {self.points_per_decade} {format_value(self.start)} {format_value(self.stop)}"


# ---------------------------------------------------------------- emission


def _component_line(c: Component) -> str:
    parts = [c.refdes, *c.terminals]
    p = dict(c.params)
    if c.kind == "mosfet":
        parts.append(c.model or "")
        for key in ("w", "l"):
            if key in p:
                parts.append(f"{key.upper()}={format_value(p.pop(key))}")
        parts += [f"{k}={_fmt_param(v)}" for k, v in sorted(p.items())]
    elif c.kind in ("resistor", "capacitor", "inductor"):
        parts.append(format_value(p.pop("value")))
        parts += [f"{k}={_fmt_param(v)}" for k, v in sorted(p.items())]
    elif c.kind in ("vsource", "isource"):
        if "dc" in p:
            parts += ["DC", format_value(p.pop("dc"))]
        if "ac" in p:
            parts += ["AC", format_value(p.pop("ac"))]
        if "tran" in p:
            parts.append(str(p.pop("tran")))
    elif c.kind in ("vcvs", "vccs"):
        parts.append(format_value(p.pop("gain")))
    elif c.kind == "diode":
        parts.append(c.model or "")
    elif c.kind == "subckt_instance":
        parts.append(c.model or "")
        parts += [f"{k}={_fmt_param(v)}" for k, v in sorted(p.items())]
    if c.initial_condition is not None:
        parts.append(f"IC={format_value(c.initial_condition)}")
    return " ".join(parts)


def _fmt_param(v: float | str) -> str:
    return format_value(v) if isinstance(v, (int, float)) else str(v)


def _model_line(m: DeviceModel) -> str:
    params = " ".join(f"{k}={_fmt_param(v)}" for k, v in m.params.items())
    return f".model {m.name} {m.spice_type} ({params})" if params else f".model {m.name} {m.spice_type}"


def meta_lines(roles: NodeRoles) -> list[str]:
    out = []
    if roles.input:
        out.append(f"* META input={roles.input}")
    out.append(f"* META output={roles.output}")
    if roles.supply:
        out.append(f"* META supply={roles.supply[0]}:{format_value(roles.supply[1])}")
    if roles.reference:
        out.append(f"* META reference={roles.reference[0]}:{format_value(roles.reference[1])}")
    if roles.circuit_type:
        out.append(f"* META type={roles.circuit_type.value}")
    return out


def check_invariants(circuit: CircuitIR) -> list[str]:
    """Hard structural invariants; emission refuses circuits that break them."""
    problems = []
    if not circuit.components:
        problems.append("circuit has no components")
    seen: Counter[str] = Counter(c.refdes.lower() for c in circuit.components)
    problems += [f"duplicate refdes {r}" for r, n in sorted(seen.items()) if n > 1]
    model_names = Counter(m.name.lower() for m in circuit.models)
    problems += [f"duplicate model {m}" for m, n in sorted(model_names.items()) if n > 1]
    for c in circuit.components:
        expected = TERMINAL_COUNT.get(c.kind)
        if expected is not None and len(c.terminals) != expected:
            problems.append(f"{c.refdes}: expected {expected} terminals, got {len(c.terminals)}")
        if c.kind == "mosfet":
            for key in ("w", "l"):
                if key in c.params and not float(c.params[key]) > 0:
                    problems.append(f"{c.refdes}: {key} must be positive")
    if circuit.components and not any(is_ground(t) for c in circuit.components for t in c.terminals):
        problems.append("no ground net")
    return problems


def emit_netlist(
    circuit: CircuitIR,
    analyses: Sequence[AnalysisRequest] = (),
    saves: Sequence[str] = (),
) -> str:
    """Serialize to a complete SPICE deck.

    Order: title, META directives, models, components by refdes, subcircuits,
    save/analysis lines, ``.end``.
    """
    problems = check_invariants(circuit)
    if problems:
        raise InvalidCircuit(problems)
    lines = [circuit.title or "*"]
    lines += meta_lines(circuit.meta)
    lines += [_model_line(m) for m in sorted(circuit.models, key=lambda m: m.name.lower())]
    lines += [_component_line(c) for c in sorted(circuit.components, key=lambda c: c.refdes)]
    for name in sorted(circuit.subcircuits):
        lines += emit_subcircuit(circuit.subcircuits[name]).splitlines()
    if saves:
        lines.append(".save all " + " ".join(saves))
    lines += [a.directive() for a in analyses]
    lines.append(".end")
    return "\n".join(lines) + "\n"


def emit_subcircuit(sub: SubcircuitDef) -> str:
    lines = [f".subckt {sub.name} {' '.join(sub.ports)}"]
    lines += [_model_line(m) for m in sub.models]
    lines += [_component_line(c) for c in sub.body]
    lines.append(f".ends {sub.name}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- parsing

_META = re.compile(r"^\*\s*META\s+(\w+)\s*=\s*(\S+)\s*$", re.IGNORECASE)
_TOKEN = re.compile(r"\w+\s*\([^)]*\)|[^\s=]+\s*=\s*\([^)]*\)|[^\s=]+\s*=\s*[^\s=]+|\S+")


def _tokens(line: str) -> list[str]:
    line = line.replace(",", " ") if "(" not in line else line
    return [re.sub(r"\s*=\s*", "=", t) for t in _TOKEN.findall(line)]


def _logical_lines(deck: str) -> list[tuple[int, str]]:
    out: list[tuple[int, str]] = []
    for no, raw in enumerate(deck.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip():
            continue
        stripped = line.lstrip()
        if stripped.startswith("+") and out:
            prev_no, prev = out[-1]
            out[-1] = (prev_no, prev + " " + stripped[1:].strip())
            continue
        if not stripped.startswith("*"):
            # inline comments
            stripped = re.split(r"\s;|\s\$\s|^;", stripped)[0].rstrip()
            if not stripped:
                continue
        out.append((no, stripped))
    return out


def _split_kv(tokens: Sequence[str]) -> tuple[list[str], dict[str, str]]:
    positional, kv = [], {}
    for t in tokens:
        if "=" in t and not t.startswith("("):
            k, v = t.split("=", 1)
            kv[k.lower()] = v
        else:
            positional.append(t)
    return positional, kv


def _num_or_text(v: str) -> float | str:
    try:
        return parse_value(v)
    except ValueError:
        return v


def _parse_source(tokens: list[str]) -> dict[str, float | str]:
    params: dict[str, float | str] = {}
    i = 0
    while i < len(tokens):
        t = tokens[i]
        low = t.lower()
        if low == "dc" and i + 1 < len(tokens):
            params["dc"] = parse_value(tokens[i + 1])
            i += 2
        elif low == "ac" and i + 1 < len(tokens):
            params["ac"] = parse_value(tokens[i + 1])
            i += 2
            if i < len(tokens) and is_value(tokens[i]):
                i += 1  # phase is not modelled
        elif re.match(r"^(sin|sine|pulse|pwl|exp|sffm|am)\s*\(", low):
            params["tran"] = re.sub(r"^(\w+)\s*\(", lambda m: m.group(1).upper() + "(", t)
            i += 1
        elif low.startswith("dc=") or low.startswith("ac="):
            params[low[:2]] = parse_value(t[3:])
            i += 1
        elif is_value(t) and "dc" not in params:
            params["dc"] = parse_value(t)
            i += 1
        else:
            raise ValueError(f"unrecognised source token {t!r}")
    return params


def parse_component(line: str) -> Component:
    tokens = _tokens(line)
    refdes = tokens[0]
    entry = _PREFIX_KIND.get(refdes[0].lower())
    if entry is None:
        raise ValueError(f"unsupported element {refdes!r}")
    kind, _ = entry
    rest = tokens[1:]
    ic = None
    if kind == "mosfet":
        pos, kv = _split_kv(rest)
        if len(pos) == 5:
            d, g, s, b, model = pos
        elif len(pos) == 4:
            d, g, s, model = pos
            b = s
        else:
            raise ValueError("MOSFET needs drain gate source [bulk] model")
        params: dict[str, float | str] = {k: _num_or_text(v) for k, v in kv.items()}
        return Component(refdes, kind, tuple(map(_canon_net, (d, g, s, b))), model, params)
    if kind in ("resistor", "capacitor", "inductor"):
        pos, kv = _split_kv(rest)
        if "ic" in kv:
            ic = parse_value(kv.pop("ic"))
        key = {"resistor": "r", "capacitor": "c", "inductor": "l"}[kind]
        if len(pos) == 3:
            value = parse_value(pos[2])
        elif len(pos) == 2 and (key in kv or "value" in kv):
            value = parse_value(kv.pop(key, None) or kv.pop("value"))
        else:
            raise ValueError(f"{kind} needs two nodes and a value")
        params = {"value": value, **{k: _num_or_text(v) for k, v in kv.items()}}
        return Component(refdes, kind, (_canon_net(pos[0]), _canon_net(pos[1])), None, params, ic)
    if kind in ("vsource", "isource"):
        if len(rest) < 2:
            raise ValueError("source needs two nodes")
        params = _parse_source(rest[2:])
        return Component(refdes, kind, (_canon_net(rest[0]), _canon_net(rest[1])), None, params)
    if kind in ("vcvs", "vccs"):
        if len(rest) != 5:
            raise ValueError("controlled source needs four nodes and a gain")
        return Component(refdes, kind, tuple(map(_canon_net, rest[:4])), None, {"gain": parse_value(rest[4])})
    if kind == "diode":
        pos, kv = _split_kv(rest)
        if len(pos) != 3:
            raise ValueError("diode needs anode cathode model")
        return Component(refdes, kind, (_canon_net(pos[0]), _canon_net(pos[1])), pos[2], {k: _num_or_text(v) for k, v in kv.items()})
    pos, kv = _split_kv(rest)
    if len(pos) < 2:
        raise ValueError("subcircuit instance needs nodes and a subcircuit name")
    return Component(refdes, kind, tuple(map(_canon_net, pos[:-1])), pos[-1], {k: _num_or_text(v) for k, v in kv.items()})


def _parse_model(line: str) -> DeviceModel:
    body = line.split(None, 1)[1]
    m = re.match(r"^(\S+)\s+(\w+)\s*\(?(.*?)\)?\s*$", body)
    if not m:
        raise ValueError("malformed .model")
    name, mtype, rest = m.groups()
    params: dict[str, float] = {}
    for k, v in re.findall(r"(\w+)\s*=\s*([^\s,()]+)", rest):
        val = parse_value(v)
        params[k.lower()] = int(val) if k.lower() == "level" else val
    mtype_l = mtype.lower()
    if mtype_l in ("nmos", "pmos"):
        return DeviceModel(name, mtype_l, params)
    return DeviceModel(name, "other", params, type_name=mtype_l)


def _parse_meta(meta: dict[str, str]) -> NodeRoles | None:
    if "output" not in meta:
        return None

    def net_volts(text: str) -> tuple[str, float]:
        net, _, volts = text.partition(":")
        return net, parse_value(volts) if volts else 0.0

    return NodeRoles(
        output=meta["output"],
        input=meta.get("input") if meta.get("input") not in (None, "-", "") else None,
        supply=net_volts(meta["supply"]) if "supply" in meta else None,
        reference=net_volts(meta["reference"]) if "reference" in meta else None,
        circuit_type=CircuitType.parse(meta["type"]) if "type" in meta else None,
    )


def _infer_roles(components: Sequence[Component]) -> NodeRoles | None:
    nets = {t.lower(): t for c in components for t in c.terminals}
    if "vout" not in nets:
        return None
    supply = None
    for c in components:
        if c.kind == "vsource" and c.terminals[0].lower() == "vdd" and is_ground(c.terminals[1]):
            supply = (c.terminals[0], float(c.params.get("dc", 0.0)))
    return NodeRoles(output=nets["vout"], input=nets.get("vin"), supply=supply)


_IGNORED_DIRECTIVES = (".options", ".option", ".save", ".global", ".temp", ".probe", ".print", ".plot", ".width")
_ANALYSIS_DIRECTIVES = (".op", ".dc", ".ac", ".tran", ".noise", ".tf", ".four", ".meas", ".measure")


def parse_netlist(deck: str, require_meta: bool = True) -> CircuitIR:
    """Parse SPICE text, typically model output, into a CircuitIR.

    Lines that cannot be interpreted are collected in ``diagnostics``.
    Ground aliases (``gnd``) are normalised to ``0``.
    """
    lines = _logical_lines(deck)
    title = ""
    meta: dict[str, str] = {}
    models: list[DeviceModel] = []
    components: list[Component] = []
    subcircuits: dict[str, SubcircuitDef] = {}
    diagnostics: list[str] = []
    sub: dict | None = None
    first_error: tuple[int, str] | None = None

    for idx, (no, line) in enumerate(lines):
        low = line.lower()
        m = _META.match(line)
        if m:
            meta[m.group(1).lower()] = m.group(2)
            continue
        if line.startswith("*"):
            continue
        if idx == 0 and not low.startswith("."):
            try:
                parse_component(line)
            except (ValueError, IndexError):
                title = line
                continue
        if low.startswith(".end") and not low.startswith(".ends"):
            break
        if low.startswith(".subckt"):
            parts = line.split()
            pos, _ = _split_kv(parts[2:])
            sub = {"name": parts[1], "ports": tuple(map(_canon_net, pos)), "body": [], "models": []}
            continue
        if low.startswith(".ends"):
            if sub is not None:
                subcircuits[sub["name"]] = SubcircuitDef(sub["name"], sub["ports"], tuple(sub["body"]), tuple(sub["models"]))
            sub = None
            continue
        if low.startswith(".model"):
            try:
                model = _parse_model(line)
            except ValueError as exc:
                diagnostics.append(f"line {no}: {exc}: {line}")
                continue
            (sub["models"] if sub is not None else models).append(model)
            continue
        if low.startswith(_IGNORED_DIRECTIVES):
            continue
        if low.startswith(_ANALYSIS_DIRECTIVES):
            diagnostics.append(f"line {no}: analysis directive ignored: {line}")
            continue
        if low.startswith("."):
            diagnostics.append(f"line {no}: unsupported directive: {line}")
            continue
        try:
            comp = parse_component(line)
        except (ValueError, IndexError) as exc:
            diagnostics.append(f"line {no}: {exc}: {line}")
            if first_error is None:
                first_error = (no, line)
            continue
        (sub["body"] if sub is not None else components).append(comp)

    if not components and not subcircuits:
        no, snippet = first_error or (lines[0] if lines else (0, ""))
        raise ParseError("no component could be recovered", no, snippet)
    roles = _parse_meta(meta) or _infer_roles(components)
    if roles is None:
        if require_meta:
            raise MissingMeta("no '* META output=' directive and no Vout net to infer it from")
        roles = NodeRoles(output="")
    return CircuitIR(title, tuple(components), roles, tuple(models), subcircuits, tuple(diagnostics))


def parse_subcircuits(text: str) -> dict[str, SubcircuitDef]:
    """Subcircuit definitions found in ``text``; top-level elements are ignored."""
    return parse_netlist(text, require_meta=False).subcircuits


def structurally_equal(a: CircuitIR, b: CircuitIR, rel: float = 1e-12) -> bool:
    """Compare component multisets, net graph, models and roles, ignoring order."""

    def close(x, y) -> bool:
        if isinstance(x, (int, float)) and isinstance(y, (int, float)):
            return abs(x - y) <= rel * max(abs(x), abs(y)) or x == y
        return x == y

    def comp_key(c: Component):
        return (c.refdes, c.kind, c.terminals, c.model)

    def same_components(xs: Sequence[Component], ys: Sequence[Component]) -> bool:
        if len(xs) != len(ys):
            return False
        for x, y in zip(sorted(xs, key=comp_key), sorted(ys, key=comp_key)):
            if comp_key(x) != comp_key(y) or set(x.params) != set(y.params):
                return False
            if not all(close(x.params[k], y.params[k]) for k in x.params):
                return False
            if (x.initial_condition is None) != (y.initial_condition is None):
                return False
            if x.initial_condition is not None and not close(x.initial_condition, y.initial_condition):
                return False
        return True

    def same_models(xs: Sequence[DeviceModel], ys: Sequence[DeviceModel]) -> bool:
        xs, ys = sorted(xs, key=lambda m: m.name), sorted(ys, key=lambda m: m.name)
        if [(m.name, m.spice_type) for m in xs] != [(m.name, m.spice_type) for m in ys]:
            return False
        return all(set(x.params) == set(y.params) and all(close(x.params[k], y.params[k]) for k in x.params) for x, y in zip(xs, ys))

    if a.meta != b.meta or not same_models(a.models, b.models):
        return False
    if not same_components(a.components, b.components):
        return False
    if set(a.subcircuits) != set(b.subcircuits):
        return False
    for name, sa in a.subcircuits.items():
        sb = b.subcircuits[name]
        if sa.ports != sb.ports or not same_components(sa.body, sb.body) or not same_models(sa.models, sb.models):
            return False
    return True


# ------------------------------------------------------------ connectivity


@dataclass(frozen=True, order=True)
class StructuralIssue:
    code: str  # missing_node, floating_net, no_ground, unknown_subcircuit
    net: str
    message: str

    def __str__(self) -> str:
        return self.message


def validate_connectivity(circuit: CircuitIR) -> list[StructuralIssue]:
    """Structural diagnostics; empty when the circuit is well formed.

    Subcircuit instances are flattened first. The result is sorted, so it does
    not depend on component order.
    """
    issues: list[StructuralIssue] = []
    try:
        flat = flatten(circuit)
    except UnknownSubcircuit as exc:
        return [StructuralIssue("unknown_subcircuit", str(exc), f"Unknown subcircuit {exc}")]

    counts: Counter[str] = Counter()
    spelling: dict[str, str] = {}
    for c in flat.components:
        for t in c.terminals:
            counts[t.lower()] += 1
            spelling.setdefault(t.lower(), t)

    if GROUND not in counts:
        issues.append(StructuralIssue("no_ground", GROUND, "Missing ground node (0)"))
    roles = circuit.meta
    for net in [*roles.inputs, roles.output]:
        if net and net.lower() not in counts:
            issues.append(StructuralIssue("missing_node", net, f"Missing {net} node"))
    declared = {n.lower() for n in roles.inputs}
    for pair in (roles.supply, roles.reference):
        if pair:
            declared.add(pair[0].lower())
    for net, n in counts.items():
        if n == 1 and net != GROUND and net not in declared:
            name = spelling[net]
            issues.append(StructuralIssue("floating_net", name, f"Floating node {name}: only one connection"))
    return sorted(issues)


# ------------------------------------------------------------- flattening


def _global_nets(circuit: CircuitIR) -> set[str]:
    out = {GROUND}
    for pair in (circuit.meta.supply, circuit.meta.reference):
        if pair:
            out.add(pair[0].lower())
    return out


def flatten(circuit: CircuitIR) -> CircuitIR:
    """Replace every X instance by its body.

    Internal nets become ``<refdes>.<net>``; internal devices become
    ``<prefix>.<refdes>.<name>``. Ground and supply/reference role nets are
    global and keep their names.
    """
    if not any(c.kind == "subckt_instance" for c in circuit.components):
        return circuit
    defs = {name.lower(): d for name, d in circuit.subcircuits.items()}
    globals_ = _global_nets(circuit)
    models = {m.name.lower(): m for m in circuit.models}
    out: list[Component] = []

    def expand(inst: Component, path: str, depth: int) -> None:
        sub = defs.get((inst.model or "").lower())
        if sub is None:
            raise UnknownSubcircuit(inst.model or inst.refdes)
        if depth > 16:
            raise CircuitError(f"subcircuit nesting too deep at {path}")
        if len(sub.ports) != len(inst.terminals):
            raise CircuitError(f"{inst.refdes}: {sub.name} has {len(sub.ports)} ports, instance gives {len(inst.terminals)}")
        mapping = {p.lower(): t for p, t in zip(sub.ports, inst.terminals)}
        for m in sub.models:
            models.setdefault(m.name.lower(), m)

        def rename(net: str) -> str:
            key = net.lower()
            if key in mapping:
                return mapping[key]
            if key in globals_:
                return GROUND if key == GROUND else net
            return f"{path}.{net}"

        for body in sub.body:
            terms = tuple(rename(t) for t in body.terminals)
            if body.kind == "subckt_instance":
                expand(replace(body, terminals=terms), f"{path}.{body.refdes}", depth + 1)
            else:
                out.append(replace(body, refdes=f"{body.prefix}.{path}.{body.refdes}", terminals=terms))

    for c in circuit.components:
        if c.kind == "subckt_instance":
            expand(c, c.refdes, 0)
        else:
            out.append(c)
    return replace(circuit, components=tuple(out), models=tuple(models.values()), subcircuits={})

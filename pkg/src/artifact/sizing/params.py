"""Tunable parameter spaces extracted from a parameterized netlist."""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field, replace

from ..circuit_ir import parse_value
from ..prompts import extract_payload

WL_MIN, WL_MAX = 1.0, 500.0
WL_RULE = "W must be within 1-500x the corresponding L"
KINDS = ("width", "length", "resistance", "capacitance", "bias", "other")
_PLACEHOLDER = re.compile(r"\{(\w+)\}")
_REL = 1e-9


class ParamSpaceError(ValueError):
    pass


class EmptySpace(ParamSpaceError):
    pass


class ConstraintViolation(ParamSpaceError):
    def __init__(self, param: str, rule: str, detail: str = ""):
        self.param = param
        self.rule = rule
        super().__init__(f"{param}: violates '{rule}'" + (f" ({detail})" if detail else ""))


class ExtractionFailed(ParamSpaceError):
    pass


def infer_kind(name: str) -> str:
    low = name.lower()
    for prefix, kind in (("w", "width"), ("l", "length"), ("r", "resistance"), ("c", "capacitance")):
        if low.startswith(prefix + "_") or re.fullmatch(prefix + r"\d+", low):
            return kind
    if low.startswith(("v", "bias")):
        return "bias"
    return "other"


@dataclass(frozen=True)
class ParamRange:
    name: str
    min: float
    max: float
    log_scale: bool = False
    unit: str = ""
    kind: str = ""

    def __post_init__(self):
        if not self.kind:
            object.__setattr__(self, "kind", infer_kind(self.name))
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise ParamSpaceError(f"{self.name}: range bounds must be finite")
        if not 0 < self.min < self.max:
            raise ParamSpaceError(f"{self.name}: need 0 < min < max, got [{self.min}, {self.max}]")

    def contains(self, value: float) -> bool:
        return self.min * (1 - _REL) <= value <= self.max * (1 + _REL)

    def to_unit(self, value: float) -> float:
        """Map into [0, 1] on the sampling axis."""
        if self.log_scale:
            return (math.log(value) - math.log(self.min)) / (math.log(self.max) - math.log(self.min))
        return (value - self.min) / (self.max - self.min)

    def from_unit(self, u: float) -> float:
        u = min(max(u, 0.0), 1.0)
        if self.log_scale:
            v = math.exp(math.log(self.min) + u * (math.log(self.max) - math.log(self.min)))
        else:
            v = self.min + u * (self.max - self.min)
        return min(max(v, self.min), self.max)


@dataclass(frozen=True)
class ParamSpace:
    ranges: tuple[ParamRange, ...]
    initial: dict = field(default_factory=dict)
    builder: str = ""  # netlist text with {name} placeholders
    fixed: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()  # notes from validation (clamped ranges)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.ranges]

    def range(self, name: str) -> ParamRange:
        for r in self.ranges:
            if r.name == name:
                return r
        raise KeyError(name)

    def placeholders(self) -> list[str]:
        return list(dict.fromkeys(_PLACEHOLDER.findall(self.builder)))

    def render(self, params: dict) -> str:
        """Builder text with every placeholder replaced."""
        values = {**self.fixed, **params}

        def sub(m):
            name = m.group(1)
            if name not in values:
                raise KeyError(f"no value for placeholder {name}")
            return f"{float(values[name]):.12g}"

        return _PLACEHOLDER.sub(sub, self.builder)


def _device_of(name: str) -> str:
    return name.split("_", 1)[1] if "_" in name else name[1:]


def _builder_length(builder: str, width_param: str) -> float | None:
    """L of the device whose W uses the given placeholder, if written literally."""
    for line in builder.splitlines():
        if "{" + width_param + "}" not in line:
            continue
        m = re.search(r"\bL\s*=\s*([^\s{}]+)", line, re.IGNORECASE)
        if m:
            try:
                return parse_value(m.group(1))
            except ValueError:
                return None
    return None


def _paired_length(space: ParamSpace, w: ParamRange) -> tuple[float, float] | None:
    """(min, max) of the length paired with a width range."""
    dev = _device_of(w.name).lower()
    for r in space.ranges:
        if r.kind == "length" and _device_of(r.name).lower() == dev:
            return r.min, r.max
    for k, v in space.fixed.items():
        if infer_kind(k) == "length" and _device_of(k).lower() == dev:
            return float(v), float(v)
    length = _builder_length(space.builder, w.name)
    return (length, length) if length else None


def validate_param_space(space: ParamSpace, clamp: bool = False) -> ParamSpace:
    """Check the extracted space and return it (clamped when ``clamp``).

    Rules: at least one tunable range; every builder placeholder has a
    range or fixed value; initial values sit inside their ranges; each
    width stays within 1-500x its paired length (same device suffix).
    """
    if not space.ranges:
        raise EmptySpace("the parameter space has no tunable parameters")
    names = space.names
    if len(set(names)) != len(names):
        raise ParamSpaceError("duplicate parameter names")
    if space.builder:
        for ph in space.placeholders():
            if ph not in names and ph not in space.fixed:
                raise ConstraintViolation(ph, "every placeholder needs a range or a fixed value")
    ranges = list(space.ranges)
    flags = list(space.flags)
    for i, r in enumerate(ranges):
        if r.kind != "width":
            continue
        pair = _paired_length(space, r)
        if pair is None:
            continue
        lo, hi = WL_MIN * pair[1], WL_MAX * pair[0]
        bad_lo = r.min < lo * (1 - _REL)
        bad_hi = r.max > hi * (1 + _REL)
        if not (bad_lo or bad_hi):
            continue
        detail = f"range [{r.min:g}, {r.max:g}] vs allowed [{lo:g}, {hi:g}]"
        if not clamp or lo >= hi:
            raise ConstraintViolation(r.name, WL_RULE, detail)
        ranges[i] = replace(r, min=max(r.min, lo), max=min(r.max, hi))
        flags.append(f"{r.name} clamped to [{ranges[i].min:g}, {ranges[i].max:g}] ({WL_RULE})")
    initial = dict(space.initial)
    for r in ranges:
        if r.name in initial and not r.contains(float(initial[r.name])):
            if not clamp:
                raise ConstraintViolation(r.name, "initial value must lie inside its range",
                                          f"{initial[r.name]} not in [{r.min:g}, {r.max:g}]")
            initial[r.name] = min(max(float(initial[r.name]), r.min), r.max)
            flags.append(f"{r.name} initial value clamped")
    return replace(space, ranges=tuple(ranges), initial=initial, flags=tuple(flags))


# ----------------------------------------------------------------- parsing


def _unit_after(builder: str, name: str) -> str:
    m = re.search(r"\{" + name + r"\}([a-zA-Z]+)", builder)
    return m.group(1) if m else ""


def ranges_from_dict(defs: dict, builder: str = "") -> tuple[ParamRange, ...]:
    out = []
    for name, d in defs.items():
        if not isinstance(d, dict) or "min" not in d or "max" not in d:
            raise ParamSpaceError(f"{name}: range needs 'min' and 'max'")
        out.append(ParamRange(str(name), float(d["min"]), float(d["max"]), bool(d.get("log", False)),
                              str(d.get("unit", "")) or _unit_after(builder, name), str(d.get("kind", ""))))
    return tuple(out)


def _literal_assignments(code: str) -> dict:
    """Top-level ``name = <literal>`` statements, evaluated without executing code."""
    found = {}
    try:
        tree = ast.parse(code)
    except SyntaxError as exc:
        raise ParamSpaceError(f"range definitions are not valid literals: {exc.msg}") from exc
    for node in tree.body:
        if isinstance(node, ast.Assign) and len(node.targets) == 1 and isinstance(node.targets[0], ast.Name):
            try:
                found[node.targets[0].id] = ast.literal_eval(node.value)
            except ValueError as exc:
                raise ParamSpaceError(f"{node.targets[0].id} is not a literal") from exc
    return found


def parse_extraction_response(response: str) -> ParamSpace:
    """ParamSpace from a response whose last code block holds the template,
    ``param_ranges_definition`` and ``initial_params``."""
    text = extract_payload(response).text
    lines = text.splitlines(keepends=True)
    start = next((i for i, ln in enumerate(lines) if ln.lstrip().startswith("param_ranges_definition")), None)
    if start is None:
        raise ParamSpaceError("no param_ranges_definition in the response")
    builder = "".join(lines[:start]).rstrip() + "\n"
    values = _literal_assignments("".join(lines[start:]))
    defs = values.get("param_ranges_definition")
    if not isinstance(defs, dict):
        raise ParamSpaceError("param_ranges_definition must be a dict")
    initial = values.get("initial_params", {})
    if not isinstance(initial, dict):
        raise ParamSpaceError("initial_params must be a dict")
    fixed = values.get("fixed_params", {})
    return ParamSpace(ranges_from_dict(defs, builder), {k: float(v) for k, v in initial.items()}, builder,
                      {k: float(v) for k, v in fixed.items()})

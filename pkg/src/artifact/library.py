"""Persistent library of verified subcircuits.

Layout on disk::

    <root>/index.json              rebuilt on open, informational
    <root>/entries/<slug>/key.json
    <root>/entries/<slug>/netlist.cir
    <root>/entries/<slug>/usage.txt
    <root>/entries/<slug>/provenance.json
    <root>/archive/<slug>-<stamp>/  entries displaced by a better design

Keys (description, type, measured specs) drive retrieval; values (the
subcircuit text and its usage notes) go into the design prompt.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import re
import shutil
import tempfile
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .circuit_ir import (
    CircuitIR,
    CircuitType,
    SubcircuitDef,
    emit_subcircuit,
    is_ground,
    parse_subcircuits,
)

SCORE_FLOOR = 0.2

# spec name, unit; amplifiers and op-amps keep the highest gain
PRIMARY_SPEC = {CircuitType.AMPLIFIER: "gain_db", CircuitType.OPAMP: "gain_db"}
SPEC_UNITS = {"gain_db": "dB", "bandwidth_hz": "Hz", "gbw_hz": "Hz", "cutoff_hz": "Hz"}

_SYNONYMS = [
    (re.compile(r"\boperational[\s-]+amplifiers?\b"), "opamp"),
    (re.compile(r"\bop[\s-]?amps?\b"), "opamp"),
    (re.compile(r"\bamp\b\.?"), "amplifier"),
    (re.compile(r"\bschimiit\b"), "schmitt"),
]
_STOP = frozenset("a an the with and of for to in on by that is are design designs designed circuit circuits "
                  "using use based topology please".split())


class StorageError(Exception):
    pass


class UnverifiedTool(ValueError):
    pass


def tokens(text: str) -> list[str]:
    """Lowercased content tokens with synonyms folded; hyphens separate words."""
    low = text.lower()
    for pat, rep in _SYNONYMS:
        low = pat.sub(rep, low)
    out = []
    for tok in re.findall(r"[a-z0-9]+", low):
        if tok in _STOP:
            continue
        if len(tok) > 3 and tok.endswith("s") and not tok.endswith("ss"):
            tok = tok[:-1]
        out.append(tok)
    return out


@dataclass(frozen=True)
class ToolKey:
    description: str
    circuit_type: CircuitType
    specs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ToolValue:
    subcircuit: SubcircuitDef
    netlist_text: str
    usage: str


@dataclass(frozen=True)
class Provenance:
    task_id: int | str | None = None
    run_id: str = ""
    timestamp: str = ""


@dataclass(frozen=True)
class ToolEntry:
    key: ToolKey
    value: ToolValue
    provenance: Provenance = Provenance()

    @property
    def name(self) -> str:
        return self.value.subcircuit.name

    @property
    def description_class(self) -> str:
        return self.key.circuit_type.value + ":" + " ".join(sorted(set(tokens(self.key.description))))

    @property
    def slug(self) -> str:
        digest = hashlib.sha1(self.description_class.encode()).hexdigest()[:10]
        return f"{self.key.circuit_type.value}-{digest}"

    def primary_spec(self) -> float | None:
        name = PRIMARY_SPEC.get(self.key.circuit_type)
        return None if name is None else self.key.specs.get(name)

    def key_tokens(self) -> set[str]:
        return set(tokens(f"{self.key.description} {self.key.circuit_type.value.replace('_', ' ')} {self.name}"))


@dataclass(frozen=True)
class AddResult:
    stored: bool
    replaced: ToolEntry | None = None


def make_usage(sub: SubcircuitDef, port_roles: Sequence[str], notes: str = "") -> str:
    """Instantiation snippet with the port order spelled out."""
    if len(port_roles) != len(sub.ports):
        raise ValueError(f"{sub.name}: {len(sub.ports)} ports but {len(port_roles)} role descriptions")
    order = ", ".join(["instance name", *port_roles, "subcircuit name"])
    lines = [
        f"The {sub.name} subcircuit definition is added to your netlist automatically; do not redefine it.",
        "Create a subcircuit instance:",
        f"* Parameter order: {order}",
        f"X1 {' '.join(sub.ports)} {sub.name}",
    ]
    if notes:
        lines += ["", notes.strip()]
    return "\n".join(lines)


def _fmt_spec(name: str, value: float) -> str:
    unit = SPEC_UNITS.get(name, "")
    label = name.removesuffix("_db").removesuffix("_hz")
    return f"{label} {value:.4g} {unit}".strip()


def render_context(entries: Sequence[ToolEntry]) -> str:
    """Tool section body: one block per entry, in the given order."""
    blocks = []
    for e in entries:
        specs = ", ".join(_fmt_spec(k, v) for k, v in sorted(e.key.specs.items()))
        head = f"Subcircuit {e.name}: {e.key.description}"
        if specs:
            head += f" (measured {specs})"
        ports = ", ".join(e.value.subcircuit.ports)
        blocks.append(f"{head}\nPorts in order: {ports}\n{e.value.usage}")
    return "\n\n".join(blocks)


# ------------------------------------------------------------------- storage


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _entry_docs(e: ToolEntry) -> dict[str, str]:
    key = {"description": e.key.description, "circuit_type": e.key.circuit_type.value,
           "specs": e.key.specs, "subcircuit": e.name, "ports": list(e.value.subcircuit.ports)}
    prov = {"task_id": e.provenance.task_id, "run_id": e.provenance.run_id, "timestamp": e.provenance.timestamp}
    return {
        "key.json": json.dumps(key, indent=2, sort_keys=True) + "\n",
        "netlist.cir": e.value.netlist_text,
        "usage.txt": e.value.usage + "\n",
        "provenance.json": json.dumps(prov, indent=2, sort_keys=True) + "\n",
    }


def _read_entry(d: Path) -> ToolEntry:
    key = json.loads((d / "key.json").read_text())
    prov = json.loads((d / "provenance.json").read_text()) if (d / "provenance.json").exists() else {}
    text = (d / "netlist.cir").read_text()
    subs = parse_subcircuits(text)
    name = key.get("subcircuit") or next(iter(subs))
    sub = next((s for n, s in subs.items() if n.lower() == name.lower()), None)
    if sub is None:
        raise StorageError(f"{d}: netlist.cir does not define subcircuit {name}")
    return ToolEntry(
        ToolKey(key["description"], CircuitType.parse(key["circuit_type"]), dict(key.get("specs", {}))),
        ToolValue(sub, text, (d / "usage.txt").read_text().rstrip("\n")),
        Provenance(prov.get("task_id"), prov.get("run_id", ""), prov.get("timestamp", "")),
    )


class ToolLibrary:
    """Directory-backed store. Adds are serialised by a thread lock plus an
    advisory file lock, so several processes may share one directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.RLock()
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "entries").mkdir(exist_ok=True)
        self._entries: dict[str, ToolEntry] = {}
        self.reload()

    @contextmanager
    def _locked(self):
        with self._lock:
            with open(self.root / ".lock", "a") as fh:
                fcntl.flock(fh, fcntl.LOCK_EX)
                try:
                    yield
                finally:
                    fcntl.flock(fh, fcntl.LOCK_UN)

    def reload(self) -> None:
        entries = {}
        for d in sorted((self.root / "entries").iterdir()):
            if d.is_dir() and (d / "key.json").exists():
                entries[d.name] = _read_entry(d)
        self._entries = entries
        self._write_index()

    def _write_index(self) -> None:
        index = {slug: {"subcircuit": e.name, "description": e.key.description,
                        "circuit_type": e.key.circuit_type.value, "specs": e.key.specs}
                 for slug, e in self._entries.items()}
        try:
            _atomic_write(self.root / "index.json", json.dumps(index, indent=2, sort_keys=True) + "\n")
        except OSError:
            pass  # read-only library directories are fine for queries

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[ToolEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def _write_entry(self, slug: str, e: ToolEntry) -> None:
        final = self.root / "entries" / slug
        tmp = Path(tempfile.mkdtemp(dir=self.root / "entries", prefix=f".{slug}."))
        try:
            for name, text in _entry_docs(e).items():
                _atomic_write(tmp / name, text)
            if final.exists():
                stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
                (self.root / "archive").mkdir(exist_ok=True)
                os.replace(final, self.root / "archive" / f"{slug}-{stamp}")
            os.replace(tmp, final)
        except OSError as exc:
            shutil.rmtree(tmp, ignore_errors=True)
            raise StorageError(f"could not store {slug}: {exc}") from exc

    def add_tool(self, entry: ToolEntry, report=None) -> AddResult:
        """Store ``entry`` unless an equal-or-better one of its class exists.

        ``report`` is the CheckReport that verified the circuit; a failing
        report is refused.
        """
        if report is not None and not report.passed:
            raise UnverifiedTool(f"{entry.name}: only verified circuits can be archived")
        with self._locked():
            self.reload()
            slug = entry.slug
            old = self._entries.get(slug)
            if old is not None:
                new_v, old_v = entry.primary_spec(), old.primary_spec()
                if new_v is not None and old_v is not None and new_v <= old_v:
                    return AddResult(False)
                if new_v is None and old_v is not None and PRIMARY_SPEC.get(entry.key.circuit_type):
                    return AddResult(False)
            self._write_entry(slug, entry)
            self._entries[slug] = entry
            self._write_index()
            return AddResult(True, old)

    def query(self, text: str, limit: int = 3) -> list[ToolEntry]:
        """Entries ranked by token overlap with ``text``; empty below the floor."""
        q = set(tokens(text))
        if not q or not self._entries:
            return []
        scored = []
        for slug, e in self._entries.items():
            k = e.key_tokens()
            if not k:
                continue
            score = len(q & k) / min(len(q), len(k))
            scored.append((-score, -(e.primary_spec() or 0.0), slug, e))
        scored.sort(key=lambda s: s[:3])
        if not scored or -scored[0][0] < SCORE_FLOOR:
            return []
        return [s[3] for s in scored if -s[0] >= SCORE_FLOOR][:limit]


def seed_library_path() -> Path:
    return Path(str(resources.files("artifact").joinpath("data/library")))


def open_library(root: str | Path | None, seed: bool = True) -> ToolLibrary:
    """Open ``root``; a new or empty directory is first filled with the seed tools."""
    if root is None:
        root = Path(tempfile.mkdtemp(prefix="artifact-lib-"))
    root = Path(root)
    fresh = not (root / "entries").exists() or not any((root / "entries").iterdir())
    lib = ToolLibrary(root)
    if seed and fresh:
        for d in sorted((seed_library_path() / "entries").iterdir()):
            if d.is_dir():
                lib.add_tool(_read_entry(d))
    return lib


# ----------------------------------------------------------- circuit plumbing


def inject_tools(circuit: CircuitIR, entries: Iterable[ToolEntry]) -> CircuitIR:
    """Add definitions for instantiated library subcircuits the netlist lacks."""
    have = {n.lower() for n in circuit.subcircuits}
    used = {c.model.lower() for c in circuit.components if c.kind == "subckt_instance" and c.model}
    subs = dict(circuit.subcircuits)
    for e in entries:
        if e.name.lower() in used and e.name.lower() not in have:
            subs[e.name] = e.value.subcircuit
            have.add(e.name.lower())
    if len(subs) == len(circuit.subcircuits):
        return circuit
    return replace(circuit, subcircuits=subs)


_PORT_ROLES = {
    CircuitType.OPAMP: ("the non-inverting input", "the inverting input"),
    CircuitType.MIXER: ("the RF input", "the LO input"),
}


def _subckt_name(kind: CircuitType) -> str:
    return "Opamp" if kind is CircuitType.OPAMP else "".join(w.capitalize() for w in kind.value.split("_"))


def tool_from_circuit(circuit: CircuitIR, description: str, specs: dict, task_id=None, run_id: str = "",
                      timestamp: str | None = None) -> ToolEntry:
    """Wrap a verified top-level circuit as a reusable subcircuit.

    Ports are the input nets followed by the output. Supply and reference
    nets stay inside under local names with their sources, so the tool is
    self-powered. Sources that only drive an input port are dropped.
    """
    roles = circuit.meta
    kind = roles.circuit_type or CircuitType.AMPLIFIER
    ports = (*roles.inputs, roles.output)
    port_keys = {p.lower() for p in ports}
    local = {}
    for role in (roles.supply, roles.reference):
        if role:
            local[role[0].lower()] = f"{role[0].lower()}_int"

    body = []
    for c in circuit.components:
        if c.kind in ("vsource", "isource") and c.terminals[0].lower() in port_keys and is_ground(c.terminals[1]):
            continue
        terms = tuple(local.get(t.lower(), t) for t in c.terminals)
        body.append(replace(c, terminals=terms))
    sub = SubcircuitDef(_subckt_name(kind), ports, tuple(body), tuple(circuit.models))

    names = _PORT_ROLES.get(kind)
    if names is None or len(names) != len(roles.inputs):
        names = ("the input",) if len(roles.inputs) == 1 else tuple(f"input {i + 1}" for i in range(len(roles.inputs)))
    port_roles = (*names, "the output")
    stamp = timestamp if timestamp is not None else datetime.now(timezone.utc).isoformat(timespec="seconds")
    return ToolEntry(
        ToolKey(description, kind, dict(specs)),
        ToolValue(sub, emit_subcircuit(sub), make_usage(sub, port_roles)),
        Provenance(task_id, run_id, stamp),
    )

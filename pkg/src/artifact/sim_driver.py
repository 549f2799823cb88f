"""Run decks through an external SPICE engine and parse ASCII rawfiles.

The engine is anything that behaves like ``ngspice -b deck -r raw``. It is
located, in order, from an explicit path, ``ARTIFACT_SPICE_ENGINE``,
``ngspice`` on PATH, or the WebAssembly launcher shipped in ``engine/``.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import re
import shutil
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuit_ir import AnalysisRequest, CircuitIR, emit_netlist, flatten

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 60.0
ENGINE_ENV = "ARTIFACT_SPICE_ENGINE"


class SimError(Exception):
    pass


class EngineNotFound(SimError):
    pass


class Timeout(SimError):
    pass


class NonConvergence(SimError):
    def __init__(self, message: str, engine_log: str = ""):
        super().__init__(message)
        self.engine_log = engine_log


class TooFewSamples(SimError):
    pass


@dataclass(frozen=True)
class WaveformSeries:
    """Signals sharing one strictly increasing axis.

    axis_kind is time, frequency or voltage. AC signals are complex.
    """

    axis: np.ndarray
    signals: dict[str, np.ndarray]
    axis_kind: str
    descending: bool = False  # DC sweep run from high to low, stored ascending

    def __post_init__(self):
        n = len(self.axis)
        for name, v in self.signals.items():
            if len(v) != n:
                raise ValueError(f"signal {name} has {len(v)} points, axis has {n}")

    def get(self, name: str) -> np.ndarray:
        key = name.lower()
        for cand in (key, f"v({key})", f"i({key})"):
            if cand in self.signals:
                return self.signals[cand]
        raise KeyError(name)

    def has(self, name: str) -> bool:
        try:
            self.get(name)
        except KeyError:
            return False
        return True


@dataclass(frozen=True)
class DeviceOp:
    id: float
    vgs: float
    vth: float
    vds: float = float("nan")
    gm: float = float("nan")
    polarity: str = "nmos"

    @property
    def region(self) -> str:
        sign = 1.0 if self.polarity == "nmos" else -1.0
        vov = sign * (self.vgs - self.vth)
        if vov <= 0:
            return "cutoff"
        if np.isfinite(self.vds) and sign * self.vds < vov:
            return "triode"
        return "saturation"


@dataclass
class SimulationResult:
    op_point: dict[str, float] = field(default_factory=dict)
    devices: dict[str, DeviceOp] = field(default_factory=dict)
    series: dict[str, WaveformSeries] = field(default_factory=dict)
    engine_log: str = ""
    converged: bool = True

    def node(self, name: str) -> float:
        key = name.lower()
        if key in self.op_point:
            return self.op_point[key]
        return self.op_point[f"v({key})"]


# ----------------------------------------------------------------- rawfile


@dataclass
class RawPlot:
    name: str
    variables: list[str]
    data: np.ndarray  # (points, variables), complex when the plot is


def parse_raw(text: str) -> list[RawPlot]:
    """Parse an ASCII rawfile that may hold several plots."""
    plots = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        if not lines[i].startswith("Title:"):
            i += 1
            continue
        header: dict[str, str] = {}
        variables: list[str] = []
        i += 1
        while i < len(lines) and not lines[i].startswith("Values:"):
            line = lines[i]
            if line.startswith(("\t", " ")) and header.get("_in_vars"):
                parts = line.split()
                variables.append(parts[1].lower())
            elif ":" in line:
                k, v = line.split(":", 1)
                header[k.strip()] = v.strip()
                if k.strip() == "Variables":
                    header["_in_vars"] = "1"
            i += 1
        i += 1
        nvars = int(header["No. Variables"])
        npts = int(header["No. Points"])
        is_complex = "complex" in header.get("Flags", "")
        values: list[str] = []
        while i < len(lines) and len(values) < nvars * npts:
            tok = lines[i].split()
            if tok:
                values.append(tok[-1])
            i += 1
        if len(values) < nvars * npts:
            npts = len(values) // nvars
            values = values[: nvars * npts]
        if is_complex:
            pairs = [v.split(",") for v in values]
            arr = np.array([complex(float(a), float(b)) for a, b in pairs], dtype=complex)
        else:
            arr = np.array([float(v) for v in values], dtype=float)
        plots.append(RawPlot(header.get("Plotname", ""), variables, arr.reshape(npts, nvars)))
    return plots


_DEVICE_VAR = re.compile(r"^(?:[vi]\()?@([^\[\]]+)\[(\w+)\]\)?$")
_PLOT_PREFIX = {"operating point": "op", "dc transfer characteristic": "dc", "ac analysis": "ac", "transient analysis": "tran"}


def _devices(names: list[str], row: np.ndarray, polarity: dict[str, str]) -> dict[str, DeviceOp]:
    fields: dict[str, dict[str, float]] = {}
    for name, value in zip(names, row):
        m = _DEVICE_VAR.match(name)
        if m:
            fields.setdefault(m.group(1), {})[m.group(2)] = float(np.real(value))
    out = {}
    for dev, f in fields.items():
        if "vgs" not in f:
            continue
        pol = polarity.get(dev, "nmos")
        sign = 1.0 if pol == "nmos" else -1.0
        # mos1 reports vgs/vds type-adjusted and von physical
        out[dev] = DeviceOp(
            id=f.get("id", float("nan")),
            vgs=sign * f["vgs"],
            vth=f.get("von", f.get("vth", float("nan"))),
            vds=sign * f["vds"] if "vds" in f else float("nan"),
            gm=f.get("gm", float("nan")),
            polarity=pol,
        )
    return out


def result_from_raw(text: str, engine_log: str, polarity: dict[str, str] | None = None, expected: int | None = None) -> SimulationResult:
    plots = parse_raw(text)
    res = SimulationResult(engine_log=engine_log)
    counters: dict[str, int] = {}
    polarity = {k.lower(): v for k, v in (polarity or {}).items()}
    for plot in plots:
        prefix = _PLOT_PREFIX.get(plot.name.lower(), plot.name.split()[0].lower())
        if prefix == "op":
            row = plot.data[0]
            res.op_point = {
                n: float(np.real(v)) for n, v in zip(plot.variables, row) if not _DEVICE_VAR.match(n) and not n.startswith("@")
            }
            res.devices = _devices(plot.variables, row, polarity)
            counters["op"] = counters.get("op", 0) + 1
            aid = "op" if counters["op"] == 1 else f"op{counters['op']}"
            res.series[aid] = WaveformSeries(np.zeros(1), {n: np.real(plot.data[:, j]) for j, n in enumerate(plot.variables)}, "none")
            continue
        counters[prefix] = counters.get(prefix, 0) + 1
        axis = plot.data[:, 0]
        axis_kind = {"dc": "voltage", "ac": "frequency", "tran": "time"}.get(prefix, "unknown")
        axis = np.real(axis)
        sig = {
            n: (plot.data[:, j] if prefix == "ac" else np.real(plot.data[:, j]))
            for j, n in enumerate(plot.variables)
            if j > 0 and not _DEVICE_VAR.match(n)
        }
        descending = bool(len(axis) > 1 and axis[-1] < axis[0])
        if descending:
            axis = axis[::-1].copy()
            sig = {k: v[::-1].copy() for k, v in sig.items()}
        keep = np.concatenate([[True], np.diff(axis) > 0]) if len(axis) else np.ones(0, bool)
        if not keep.all():
            axis = axis[keep]
            sig = {k: v[keep] for k, v in sig.items()}
        res.series[f"{prefix}{counters[prefix]}"] = WaveformSeries(axis, sig, axis_kind, descending)
    failed = re.search(r"simulation\(s\) aborted|timestep too small|no convergence|doAnalyses:", engine_log, re.IGNORECASE)
    res.converged = bool(plots) and not failed and (expected is None or len(plots) >= expected)
    return res


# ----------------------------------------------------------------- engines


def _bundled_launcher() -> Path | None:
    root = Path(__file__).resolve().parents[2] / "engine"
    launcher = root / "ngspice"
    if launcher.exists() and (root / "node_modules" / "eecircuit-engine").exists() and shutil.which("node"):
        return launcher
    return None


def find_engine(path: str | os.PathLike | None = None) -> str:
    for cand in (path, os.environ.get(ENGINE_ENV)):
        if cand:
            if shutil.which(str(cand)) or Path(cand).is_file():
                return str(cand)
            raise EngineNotFound(f"SPICE engine {cand} does not exist")
    found = shutil.which("ngspice") or _bundled_launcher()
    if not found:
        raise EngineNotFound(f"no SPICE engine: install ngspice, set {ENGINE_ENV}, or run `npm install` in engine/")
    return str(found)


class SpiceEngine:
    """One child process per deck, ``<engine> -b deck -r raw``."""

    def __init__(self, executable: str | None = None, timeout: float = DEFAULT_TIMEOUT):
        self.executable = find_engine(executable)
        self.timeout = timeout

    def run_deck(self, deck: str, workdir: Path) -> tuple[str, str]:
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        deck_path = workdir / "deck.cir"
        raw_path = workdir / "out.raw"
        deck_path.write_text(deck)
        if raw_path.exists():
            raw_path.unlink()
        env = dict(os.environ, SPICE_ASCIIRAWFILE="1")
        try:
            proc = subprocess.run(
                [self.executable, "-b", str(deck_path), "-r", str(raw_path)],
                capture_output=True,
                text=True,
                timeout=self.timeout,
                cwd=workdir,
                env=env,
            )
        except subprocess.TimeoutExpired as exc:
            raise Timeout(f"engine exceeded {self.timeout:.0f} s") from exc
        engine_log = proc.stdout + proc.stderr
        (workdir / "engine.log").write_text(engine_log)
        raw = raw_path.read_text(encoding="latin1") if raw_path.exists() else ""
        return raw, engine_log

    def close(self) -> None:
        pass


# interactive prompts carry a per-process command counter
_PROMPT = re.compile(r"ngspice \d+ -> ")


class PersistentEngine(SpiceEngine):
    """Keeps one WebAssembly engine process alive and streams decks to it.

    Only the bundled launcher speaks this protocol (``--server``).
    """

    def __init__(self, executable: str | None = None, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(executable, timeout)
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._lock = threading.Lock()
        self._next_id = 0

    def _start(self) -> None:
        self._proc = subprocess.Popen(
            [self.executable, "--server"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            encoding="latin1",
        )
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc, self._lines), daemon=True).start()
        self._read(self.timeout)  # ready banner

    @staticmethod
    def _pump(proc: subprocess.Popen, lines: queue.Queue) -> None:
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def _read(self, timeout: float) -> dict:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            self.close()
            raise Timeout(f"engine exceeded {timeout:.0f} s") from None
        if line is None:
            self.close()
            raise SimError("engine process exited")
        return json.loads(line)

    def run_deck(self, deck: str, workdir: Path) -> tuple[str, str]:
        with self._lock:
            if self._proc is None or self._proc.poll() is not None:
                self._start()
            self._next_id += 1
            self._proc.stdin.write(json.dumps({"id": self._next_id, "deck": deck}) + "\n")
            self._proc.stdin.flush()
            reply = self._read(self.timeout)
        reply["log"] = _PROMPT.sub("", reply["log"])
        if workdir is not None:
            workdir = Path(workdir)
            workdir.mkdir(parents=True, exist_ok=True)
            (workdir / "deck.cir").write_text(deck)
            (workdir / "engine.log").write_text(reply["log"])
            if reply["raw"]:
                (workdir / "out.raw").write_text(reply["raw"], encoding="latin1")
        return reply["raw"], reply["log"]

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except Exception:  # noqa: BLE001 - best effort teardown
                pass
            self._proc = None


_default_engine: SpiceEngine | None = None
_default_lock = threading.Lock()


def default_engine() -> SpiceEngine:
    global _default_engine
    with _default_lock:
        if _default_engine is None:
            exe = find_engine()
            bundled = _bundled_launcher()
            if os.environ.get("ARTIFACT_ENGINE_BATCH") != "1" and bundled and Path(exe).resolve() == bundled.resolve():
                _default_engine = PersistentEngine(exe)
            else:
                _default_engine = SpiceEngine(exe)
        return _default_engine


# ------------------------------------------------------------------ public


def run(deck: str, workdir: str | os.PathLike | None = None, engine: SpiceEngine | None = None,
        polarity: dict[str, str] | None = None) -> SimulationResult:
    """Simulate one deck. Raises NonConvergence only when nothing came back."""
    engine = engine or default_engine()
    expected = len(re.findall(r"^\s*\.(?:op|dc|ac|tran)\b", deck, re.IGNORECASE | re.MULTILINE))
    if workdir is None:
        with tempfile.TemporaryDirectory(prefix="sim-") as tmp:
            raw, engine_log = engine.run_deck(deck, Path(tmp))
    else:
        raw, engine_log = engine.run_deck(deck, Path(workdir))
    if not raw.strip():
        raise NonConvergence("engine produced no output", engine_log)
    return result_from_raw(raw, engine_log, polarity, expected)


def device_polarity(circuit: CircuitIR) -> dict[str, str]:
    kinds = {m.name.lower(): m.kind for m in circuit.models}
    return {c.refdes.lower(): kinds.get((c.model or "").lower(), "nmos") for c in circuit.components if c.kind == "mosfet"}


def simulate(circuit: CircuitIR, analyses: list[AnalysisRequest], workdir=None, engine: SpiceEngine | None = None) -> SimulationResult:
    """Flatten, add MOSFET telemetry probes, emit and run."""
    flat = flatten(circuit)
    saves = []
    if any(a.kind == "op" for a in analyses):
        for c in flat.components:
            if c.kind == "mosfet":
                saves += [f"@{c.refdes.lower()}[{p}]" for p in ("id", "vgs", "vds", "von", "gm")]
    deck = emit_netlist(flat, analyses, saves)
    return run(deck, workdir, engine, device_polarity(flat))


def dc_sweep(circuit: CircuitIR, source: str, start: float, stop: float, steps: int,
             workdir=None, engine: SpiceEngine | None = None) -> WaveformSeries:
    """Sweep ``source`` over exactly ``steps`` evenly spaced values."""
    if steps < 2:
        raise ValueError("dc_sweep needs at least 2 steps")
    step = (stop - start) / (steps - 1)
    res = simulate(circuit, [AnalysisRequest.dc(source, start, stop, step)], workdir, engine)
    if "dc1" not in res.series:
        raise NonConvergence("dc sweep produced no data", res.engine_log)
    series = res.series["dc1"]
    grid = np.linspace(start, stop, steps)
    if len(series.axis) == steps and np.allclose(series.axis, grid, rtol=0, atol=abs(step) * 1e-6):
        return WaveformSeries(grid, series.signals, "voltage")
    # engine grids can gain or lose an end point to rounding
    sig = {k: np.interp(grid, series.axis, v) for k, v in series.signals.items()}
    return WaveformSeries(grid, sig, "voltage")


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def compute_fft(series: WaveformSeries, signal: str) -> WaveformSeries:
    """Single-sided spectrum of a transient signal.

    The mean goes to the DC bin untouched; the remainder is Hann windowed and
    zero padded to a power of two. Magnitudes are energy scaled, so the sum
    of their squares equals N*mean**2 + sum((window*(x-mean))**2).
    """
    t = np.asarray(series.axis, dtype=float)
    x = np.real(np.asarray(series.get(signal))).astype(float)
    n = len(x)
    if n < 16:
        raise TooFewSamples(f"{n} samples, need at least 16")
    dt = np.diff(t)
    if not np.allclose(dt, dt.mean(), rtol=1e-6, atol=0):
        uniform = np.linspace(t[0], t[-1], n)
        x = np.interp(uniform, t, x)
        t = uniform
    fs = (n - 1) / (t[-1] - t[0])
    mean = float(x.mean())
    w = np.hanning(n)
    resid = w * (x - mean)
    m = _next_pow2(n)
    spec = np.fft.rfft(resid, m) / np.sqrt(m)
    mag = np.abs(spec)
    last = len(mag) - 1 if m % 2 == 0 else len(mag)
    mag[1:last] *= np.sqrt(2.0)
    mag[0] = np.sqrt(n * mean * mean + mag[0] ** 2)
    freqs = np.arange(len(mag)) * fs / m
    return WaveformSeries(freqs, {signal.lower(): mag}, "frequency")


def fft_energy(series: WaveformSeries, signal: str) -> float:
    """Time-domain energy that compute_fft's magnitudes preserve."""
    x = np.real(series.get(signal))
    n = len(x)
    t = series.axis
    dt = np.diff(t)
    if not np.allclose(dt, dt.mean(), rtol=1e-6, atol=0):
        x = np.interp(np.linspace(t[0], t[-1], n), t, x)
    mean = x.mean()
    return float(n * mean * mean + np.sum((np.hanning(n) * (x - mean)) ** 2))

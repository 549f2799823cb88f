"""Design loop, benchmark harness and the unified design-plus-sizing flow."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .circuit_ir import CircuitError, CircuitIR, emit_netlist, parse_netlist
from .config import EXTRACTION_TEMPERATURE, GENERATION_TEMPERATURE, GENERATION_TOP_P, RunConfig
from .library import StorageError, ToolLibrary, UnverifiedTool, inject_tools, open_library, tool_from_circuit
from .llm_gateway import ChatParams, ChatRequest, Gateway, GatewayError, Message, UnsupportedByProvider
from .prompts import (
    NoCodeBlock,
    build_design_prompt,
    build_extraction_prompt,
    build_repair_prompt,
    build_waveform_analysis_prompt,
    extract_payload,
)
from .sim_driver import PersistentEngine, SpiceEngine, default_engine, find_engine, _bundled_launcher
from .tasks import DesignTask
from .testbench import attach_inputs, find_source
from .verification import AC_RANGE, CheckReport, Stage, diag, run_pipeline

log = logging.getLogger(__name__)

IMAGE_PREFERENCE = ("tran", "ac", "dc_transfer", "fft", "dc")
ARCHIVED_SPECS = ("gain_db", "bandwidth_hz", "cutoff_hz", "period", "amplitude")
EXTRACTION_ATTEMPTS = 3


class DomainError(ValueError):
    pass


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k: 1 - C(n-c, k) / C(n, k), as a running product."""
    if n < 1 or k < 1 or k > n or c < 0 or c > n:
        raise DomainError(f"pass@k needs 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")
    if n - c < k:
        return 1.0
    miss = 1.0
    for i in range(n - c + 1, n + 1):
        miss *= 1.0 - k / i
    return 1.0 - miss


# --------------------------------------------------------------- design loop


@dataclass
class Attempt:
    index: int
    prompt: str
    response: str
    report: CheckReport
    netlist: str | None = None
    analysis: str | None = None

    def to_dict(self) -> dict:
        return {"index": self.index, "prompt": self.prompt, "response": self.response,
                "report": self.report.to_dict(), "netlist": self.netlist, "analysis": self.analysis}


@dataclass
class TaskResult:
    task_id: int | str
    sample: int
    attempts: list[Attempt] = field(default_factory=list)
    final_verdict: str = "fail"
    final_circuit: CircuitIR | None = None
    tokens_used: int = 0
    error: str | None = None
    tools: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.final_verdict == "pass"

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "sample": self.sample, "final_verdict": self.final_verdict,
                "attempts": [a.to_dict() for a in self.attempts], "tokens_used": self.tokens_used,
                "error": self.error, "tools": self.tools,
                "final_netlist": emit_netlist(self.final_circuit) if self.final_circuit is not None else None}


def _tokens(usage: dict) -> int:
    total = usage.get("total_tokens")
    if total is None:
        total = sum(int(usage.get(k, 0)) for k in ("prompt_tokens", "completion_tokens", "input_tokens",
                                                    "output_tokens"))
    return int(total)


def library_query(task: DesignTask) -> str:
    return " ".join([task.description, *task.required_tools])


def _unparseable(reason: str) -> CheckReport:
    return CheckReport("fail", [diag(Stage.REQUIREMENT, "unparseable", reason=reason)],
                       stages_run=[Stage.REQUIREMENT], failed_stage=Stage.REQUIREMENT)


def parse_response(text: str, tools=()) -> tuple[CircuitIR | None, str | None, CheckReport | None]:
    """(circuit, netlist text, None) or (None, text or None, failing report)."""
    try:
        payload = extract_payload(text)
    except NoCodeBlock as exc:
        return None, None, _unparseable(str(exc))
    if payload.kind == "pyspice":
        return None, payload.text, _unparseable("PySpice code cannot be executed here; answer with a SPICE netlist")
    try:
        circuit = parse_netlist(payload.text, require_meta=False)
    except CircuitError as exc:
        return None, payload.text, _unparseable(str(exc))
    return inject_tools(circuit, tools), payload.text, None


def testbench_context(circuit: CircuitIR, report: CheckReport) -> str:
    """Plain description of how the circuit was driven, for the image model."""
    lines = []
    tb = attach_inputs(circuit)
    for net in circuit.meta.inputs:
        src = find_source(tb, net)
        if src is not None:
            lines.append(f"Input {net} is driven by {src.refdes} at {float(src.params.get('dc', 0.0)):g} V DC.")
    bias = report.measurements.get("best_bias")
    if isinstance(bias, (int, float)):
        lines.append(f"The functional test biases the input at {bias:.4g} V.")
    if circuit.meta.supply:
        lines.append(f"Supply {circuit.meta.supply[0]} is {circuit.meta.supply[1]:g} V.")
    if circuit.meta.reference:
        lines.append(f"Reference {circuit.meta.reference[0]} is {circuit.meta.reference[1]:g} V.")
    for c in circuit.components:
        if c.initial_condition is not None:
            lines.append(f"{c.refdes} starts with an initial condition of {c.initial_condition:g} V.")
    return "\n".join(lines)


def pick_image(report: CheckReport) -> tuple[str, bytes] | None:
    images = dict(report.waveform_images)
    for aid in IMAGE_PREFERENCE:
        if aid in images:
            return aid, images[aid]
    return next(iter(report.waveform_images), None)


def _params(config: RunConfig, sample: int, model: str | None = None, temperature: float = GENERATION_TEMPERATURE):
    return ChatParams(model=model or config.llm_model, temperature=temperature, top_p=GENERATION_TOP_P,
                      seed=config.seed + sample)


def waveform_analysis(task: DesignTask, circuit: CircuitIR, report: CheckReport, config: RunConfig,
                      gateway: Gateway, sample: int = 0) -> str | None:
    """Image-model reading of the most telling waveform, or None when there is none."""
    image = pick_image(report)
    if image is None:
        return None
    prompt = build_waveform_analysis_prompt(task, context=testbench_context(circuit, report))
    req = ChatRequest((Message("user", prompt, (image[1],)),),
                      _params(config, sample, config.mllm_model or config.llm_model))
    try:
        return gateway.complete_multimodal(req).text
    except UnsupportedByProvider as exc:
        log.warning("waveform analysis skipped: %s", exc)
        return None


def archived_specs(report: CheckReport) -> dict:
    """Numeric measurements worth keeping with a tool. A bandwidth pinned at
    the top of the AC sweep means no -3 dB point was found and is dropped."""
    specs = {k: float(report.measurements[k]) for k in ARCHIVED_SPECS
             if isinstance(report.measurements.get(k), (int, float))}
    if specs.get("bandwidth_hz", 0.0) >= AC_RANGE[1]:
        del specs["bandwidth_hz"]
    return specs


def _archive(task: DesignTask, circuit: CircuitIR, report: CheckReport, library: ToolLibrary, run_id: str) -> None:
    if task.is_composite:
        return
    specs = archived_specs(report)
    try:
        entry = tool_from_circuit(circuit, task.description, specs, task.task_id, run_id, timestamp="")
        library.add_tool(entry, report)
    except (StorageError, UnverifiedTool, CircuitError) as exc:
        log.warning("could not archive task %s: %s", task.task_id, exc)


def run_design_task(task: DesignTask, config: RunConfig, gateway: Gateway, library: ToolLibrary | None = None,
                    engine: SpiceEngine | None = None, sample: int = 0, objective: str | None = None,
                    workdir: str | Path | None = None) -> TaskResult:
    """Generate, verify and repair one design for up to ``config.attempts`` rounds."""
    root = Path(workdir if workdir is not None else config.workdir) / str(task.task_id) / f"s{sample}"
    tools = []
    if library is not None and not config.no_library:
        tools = library.query(library_query(task))
    prompt = build_design_prompt(task, tools, config.toggles, objective)
    result = TaskResult(task.task_id, sample, tools=[t.name for t in tools])
    messages = [Message("user", prompt)]
    for n in range(1, config.attempts + 1):
        attempt_dir = root / f"attempt_{n}"
        resp = gateway.complete(ChatRequest(tuple(messages), _params(config, sample)))
        result.tokens_used += _tokens(resp.usage)
        circuit, netlist, report = parse_response(resp.text, tools)
        if report is None:
            report = run_pipeline(circuit, task, engine, attempt_dir / "sim")
        att = Attempt(n, messages[-1].text, resp.text, report, netlist)
        result.attempts.append(att)
        if report.passed:
            result.final_verdict, result.final_circuit = "pass", circuit
            if library is not None and not config.no_library:
                _archive(task, circuit, report, library, f"{task.task_id}-s{sample}-a{n}")
        elif n < config.attempts:
            if circuit is not None:
                att.analysis = waveform_analysis(task, circuit, report, config, gateway, sample)
            repair = build_repair_prompt(report, att.analysis)
            messages += [Message("assistant", resp.text), Message("user", repair)]
        _write_attempt(attempt_dir, att)
        if report.passed:
            break
    if result.final_circuit is None and result.attempts:
        last = result.attempts[-1]
        if last.netlist is not None:
            result.final_circuit, _, _ = parse_response(last.response, tools)
    root.mkdir(parents=True, exist_ok=True)
    (root / "result.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    return result


def _write_attempt(d: Path, att: Attempt) -> None:
    d.mkdir(parents=True, exist_ok=True)
    (d / "prompt.txt").write_text(att.prompt)
    (d / "response.txt").write_text(att.response)
    if att.netlist is not None:
        (d / "netlist.cir").write_text(att.netlist)
    if att.analysis is not None:
        (d / "analysis.txt").write_text(att.analysis)
    att.report.write(d)


# ----------------------------------------------------------------- benchmark


@dataclass
class TaskSummary:
    task_id: int | str
    description: str
    n: int
    c: int
    pass_at: dict[int, float]
    mean_attempts: float
    errors: int = 0

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "description": self.description, "n": self.n, "c": self.c,
                "pass_at": {str(k): v for k, v in self.pass_at.items()}, "mean_attempts": self.mean_attempts,
                "errors": self.errors}


@dataclass
class BenchmarkResult:
    ks: tuple[int, ...]
    tasks: list[TaskSummary]
    ablation: dict = field(default_factory=dict)

    def average(self, k: int) -> float:
        return sum(t.pass_at[k] for t in self.tasks) / len(self.tasks) if self.tasks else float("nan")

    @property
    def solved(self) -> int:
        return sum(1 for t in self.tasks if t.c > 0)

    def rows(self) -> list[list[str]]:
        head = ["task", "description", "n", "c", *[f"pass@{k} (%)" for k in self.ks], "attempts", "errors"]
        out = [head]
        for t in self.tasks:
            out.append([str(t.task_id), t.description, str(t.n), str(t.c),
                        *[f"{100 * t.pass_at[k]:.2f}" for k in self.ks], f"{t.mean_attempts:.2f}", str(t.errors)])
        out.append(["average", "", "", "", *[f"{100 * self.average(k):.2f}" for k in self.ks], "", ""])
        out.append(["solved", str(self.solved), "", "", *["" for _ in self.ks], "", ""])
        return out

    def table(self, delimiter: str = "\t") -> str:
        buf = io.StringIO()
        csv.writer(buf, delimiter=delimiter, lineterminator="\n").writerows(self.rows())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"ks": list(self.ks), "ablation": self.ablation, "tasks": [t.to_dict() for t in self.tasks],
                "average": {str(k): self.average(k) for k in self.ks}, "solved": self.solved}

    def write(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "results.tsv").write_text(self.table("\t"))
        (d / "results.csv").write_text(self.table(","))
        path = d / "results.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def benchmark_from_outcomes(outcomes: dict, ks: Sequence[int], tasks: dict | None = None,
                            ablation: dict | None = None) -> BenchmarkResult:
    """``outcomes`` maps task id to a list of TaskResult (or bools)."""
    summaries = []
    for tid, runs in outcomes.items():
        passed = [r if isinstance(r, bool) else r.passed for r in runs]
        attempts = [len(r.attempts) for r in runs if not isinstance(r, bool) and not r.error]
        errors = sum(1 for r in runs if not isinstance(r, bool) and r.error)
        n, c = len(passed), sum(passed)
        desc = tasks[tid].description if tasks and tid in tasks else ""
        summaries.append(TaskSummary(tid, desc, n, c, {k: pass_at_k(n, c, k) for k in ks},
                                     sum(attempts) / len(attempts) if attempts else math.nan, errors))
    return BenchmarkResult(tuple(ks), summaries, dict(ablation or {}))


def make_engine(executable: str | None = None) -> SpiceEngine:
    """A private engine; the bundled launcher gets a persistent process."""
    exe = find_engine(executable)
    bundled = _bundled_launcher()
    if bundled is not None and Path(exe).resolve() == bundled.resolve():
        return PersistentEngine(exe)
    return SpiceEngine(exe)


def run_benchmark(tasks: Sequence[DesignTask], config: RunConfig, gateway: Gateway, n: int | None = None,
                  ks: Sequence[int] = (1, 5), progress: Callable[[TaskResult], None] | None = None) -> BenchmarkResult:
    """``n`` samples per task, each from a fresh seeded library unless
    ``config.library`` names a shared one."""
    n = n or config.samples_n
    for k in ks:
        if not 1 <= k <= n:
            raise DomainError(f"k={k} needs 1 <= k <= n={n}")
    local = threading.local()
    engines: list[SpiceEngine] = []
    lock = threading.Lock()
    shared = open_library(config.library) if config.library and not config.no_library else None

    def engine() -> SpiceEngine:
        if config.workers == 1:
            return make_engine(config.engine) if config.engine else default_engine()
        if not hasattr(local, "engine"):
            local.engine = make_engine(config.engine)
            with lock:
                engines.append(local.engine)
        return local.engine

    def one(task: DesignTask, s: int) -> TaskResult:
        lib = shared
        if lib is None and not config.no_library:
            lib = open_library(None)
        try:
            res = run_design_task(task, config, gateway, lib, engine(), s)
        except GatewayError as exc:
            log.error("task %s sample %d: %s", task.task_id, s, exc)
            res = TaskResult(task.task_id, s, error=f"{type(exc).__name__}: {exc}")
        if progress:
            progress(res)
        return res

    jobs = [(t, s) for t in tasks for s in range(n)]
    try:
        if config.workers == 1:
            results = [one(t, s) for t, s in jobs]
        else:
            with ThreadPoolExecutor(config.workers) as pool:
                results = list(pool.map(lambda j: one(*j), jobs))
    finally:
        for e in engines:
            e.close()
    outcomes: dict = {t.task_id: [] for t in tasks}
    for r in results:
        outcomes[r.task_id].append(r)
    bench = benchmark_from_outcomes(outcomes, ks, {t.task_id: t for t in tasks}, config.ablation())
    bench.write(Path(config.workdir))
    return bench


# ------------------------------------------------------------ unified flow


@dataclass
class UnifiedResult:
    design: TaskResult
    space: object | None = None
    sizing: object | None = None
    initial: dict | None = None
    optimized: dict | None = None

    def to_dict(self) -> dict:
        return {"design": self.design.to_dict(), "initial": self.initial, "optimized": self.optimized,
                "best_params": self.sizing.best.params if self.sizing is not None else None}


def extract_param_space(netlist: str, config: RunConfig, gateway: Gateway, sample: int = 0):
    """Ask for a parameterised template; up to three tries at temperature 0."""
    from .sizing import ExtractionFailed, validate_param_space
    from .sizing.params import ParamSpaceError, parse_extraction_response

    prompt = build_extraction_prompt(netlist)
    messages = [Message("user", prompt)]
    errors = []
    for _ in range(EXTRACTION_ATTEMPTS):
        resp = gateway.complete(ChatRequest(tuple(messages), _params(config, sample, temperature=EXTRACTION_TEMPERATURE)))
        try:
            return validate_param_space(parse_extraction_response(resp.text))
        except (ParamSpaceError, NoCodeBlock, SyntaxError, ValueError) as exc:
            errors.append(str(exc))
            messages += [Message("assistant", resp.text),
                         Message("user", f"The parameter definition is invalid: {exc}\n\nPlease answer again "
                                         "with a single corrected code block.")]
    raise ExtractionFailed("; ".join(errors))


def run_unified(task: DesignTask, config: RunConfig, gateway: Gateway, objective: str = "fom",
                budget: int = 1000, library: ToolLibrary | None = None, engine: SpiceEngine | None = None,
                stages=None, window=None, sample: int = 0) -> UnifiedResult:
    """Design with the objective in the prompt, then extract a parameter
    space and size it. Sizing is skipped when no attempt passes."""
    from .sizing import DEFAULT_STAGES, DEFAULT_WINDOW, ObjectiveSpec, optimize

    if library is None and not config.no_library:
        library = open_library(config.library)
    design = run_design_task(task, config, gateway, library, engine, sample, objective=objective)
    out = UnifiedResult(design)
    if not design.passed:
        return out
    netlist = emit_netlist(design.final_circuit)
    out.space = extract_param_space(netlist, config, gateway, sample)
    root = Path(config.workdir) / str(task.task_id) / f"s{sample}"
    res = optimize(out.space, ObjectiveSpec(objective), budget, config.seed, engine=engine,
                   stages=stages or DEFAULT_STAGES, window=window or DEFAULT_WINDOW,
                   history_path=root / "sizing.jsonl", plot_path=root / "convergence.png")
    out.sizing = res
    first = res.history[0]
    out.initial = first.metrics if first.ok else None
    out.optimized = res.best.metrics
    (root / "unified.json").write_text(json.dumps(out.to_dict(), indent=2, sort_keys=True) + "\n")
    return out

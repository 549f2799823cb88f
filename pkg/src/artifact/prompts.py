"""Prompt families and response parsing.

Design prompts are assembled from named sections so that each ablation
toggle removes exactly one of them. Fixture texts (example, tips,
per-type expectations) live in ``artifact/data/prompts``.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .circuit_ir import CircuitType
from .library import ToolEntry, render_context
from .tasks import DesignTask

REPRESENTATIONS = ("netlist", "pyspice")
OBJECTIVES = {
    "gain": "Gain",
    "gbw": "GBW (Gain*Bandwidth)",
    "fom": "FoM (GBW*CL/Power)",
}


class NoCodeBlock(ValueError):
    pass


class PromptWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Toggles:
    in_context_example: bool = True
    chain_of_thought: bool = True
    tips: bool = True
    representation: str = "netlist"

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"representation must be one of {REPRESENTATIONS}")


# ------------------------------------------------------------------ fixtures


def _data(name: str) -> str:
    return resources.files("artifact").joinpath(f"data/prompts/{name}").read_text()


@lru_cache(maxsize=None)
def in_context_example() -> str:
    return _data("example_two_stage_amp.txt").strip()


@lru_cache(maxsize=None)
def tips() -> tuple[str, ...]:
    lines = [ln.strip() for ln in _data("tips.txt").splitlines()]
    return tuple(ln for ln in lines if ln and not ln.startswith("#"))


@lru_cache(maxsize=None)
def expectations() -> dict[str, str]:
    return json.loads(_data("expectations.json"))


def expectation_for(kind: CircuitType | str) -> str:
    return expectations()[CircuitType.parse(kind).value if isinstance(kind, str) else kind.value]


# ------------------------------------------------------------- design prompt

FRAMING = (
    "You aim to design a topology for a given circuit described in the text.\n"
    "Please ensure your designed circuit topology works properly and achieves the design requirements."
)

_FORMAT = {
    "netlist": (
        "Representation: SPICE netlist.\n"
        "Write the complete circuit as a SPICE netlist in a single fenced code block. "
        "Start with a title line, then declare the node roles with '* META' comment lines "
        "(input, output, supply, reference, type)."
    ),
    "pyspice": (
        "Representation: PySpice code.\n"
        "Write the complete circuit as Python code compatible with PySpice in a single fenced code block. "
        "Put the node roles in '# META key=value' comments (input, output, supply, reference, type)."
    ),
}


def _node_list(nodes: Sequence[str]) -> str:
    return ", ".join(nodes) if nodes else "-"


def design_sections(task: DesignTask, tools: Sequence[ToolEntry] = (), toggles: Toggles = Toggles(),
                    objective: str | None = None) -> list[tuple[str, str]]:
    """(section name, text) pairs in prompt order.

    Names: framing, tools, example, tips, plan, question.
    """
    if task.is_composite and not tools:
        warnings.warn(f"composite task {task.task_id} gets no library tools", PromptWarning, stacklevel=3)
    out = [("framing", FRAMING + "\n\n" + _FORMAT[toggles.representation])]
    if tools:
        names = " and ".join(dict.fromkeys(e.name.lower() for e in tools))
        out.append(("tools", f"To make the task easier, you can directly use the {names} subcircuits "
                             f"from the circuit tool library.\n\n{render_context(tools)}"))
    if toggles.in_context_example:
        out.append(("example", "Here is an example:\n\n" + in_context_example()))
    if toggles.tips:
        out.append(("tips", "There are some tips you should remember all the time:\n"
                            + "\n".join(f"- {t}" for t in tips())))
    if toggles.chain_of_thought:
        out.append(("plan", "Please first give a detailed design plan and then write the code."))
    phrase = task.phrase
    if objective:
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {sorted(OBJECTIVES)}")
        ask = f"Design {phrase} topology that optimizes {OBJECTIVES[objective]}."
    else:
        ask = f"Design {phrase}."
    question = "\n\n".join([
        "Question",
        ask,
        f"Input node name: {_node_list(task.inputs)}.",
        f"Output node name: {task.output_node}.",
        "Answer",
    ])
    out.append(("question", question))
    return out


def build_design_prompt(task: DesignTask, tools: Sequence[ToolEntry] = (), toggles: Toggles = Toggles(),
                        objective: str | None = None) -> str:
    return "\n\n".join(text for _, text in design_sections(task, tools, toggles, objective)) + "\n"


# ------------------------------------------------------------- repair prompt

REPAIR_INSTRUCTION = (
    "Identify any structural errors in this circuit's topology (e.g., missing components, incorrect "
    "connections) and rewrite the complete corrected code from scratch, with each modification marked "
    "and explained in comments."
)


def feedback_messages(report) -> list[str]:
    """Diagnostics shown to the model: everything except waveform bookkeeping."""
    return [d.message for d in report.diagnostics if d.stage.value != "waveform"]


def build_repair_prompt(report, mllm_analysis: str | None = None) -> str:
    if report.passed:
        raise ValueError("repair prompts are only built for failing reports")
    parts = [
        "I am encountering an error when simulating the circuit. Below is the error message:",
        "\n\n".join(feedback_messages(report)),
    ]
    if mllm_analysis and mllm_analysis.strip():
        parts += ["Waveform Analysis:", mllm_analysis.strip()]
    parts.append(REPAIR_INSTRUCTION)
    return "\n\n".join(parts) + "\n"


# ---------------------------------------------------- waveform analysis prompt


def circuit_name(task: DesignTask) -> str:
    return f"{task.phrase} circuit"


def build_waveform_analysis_prompt(task: DesignTask, expectation: str | None = None, context: str = "") -> str:
    expectation = expectation_for(task.circuit_type) if expectation is None else expectation
    if not expectation.strip():
        raise ValueError("the expected behaviour must be stated")
    parts = [
        f"Analyze the attached waveform output image from {circuit_name(task)}.",
        f"{expectation.strip()} The actual output waveform differs.",
    ]
    if context.strip():
        parts.append(context.strip())
    return "\n\n".join(parts) + "\n"


# ------------------------------------------------------------ extraction prompt

EXTRACTION_CONSTRAINTS = (
    "Transistor width (W) should be within 1-500x the corresponding length (L).",
    "Keep transistor lengths fixed at their original values.",
    "Resistor ranges should span roughly 0.2x to 5x the original value.",
    "Capacitor ranges should span roughly 0.1x to 10x the original value.",
    "Do not make supply voltages, input bias voltages or analysis settings tunable.",
    "Use log-scaled ranges for parameters that span more than a decade.",
)


def build_extraction_prompt(netlist: str) -> str:
    if not netlist.strip():
        raise ValueError("an empty netlist cannot be parameterized")
    constraints = "\n".join(f"   - {c}" for c in EXTRACTION_CONSTRAINTS)
    return (
        "I need to convert my circuit netlist into a parameterized form for automated optimization. "
        "Please transform the following original circuit into a parameter-based template with "
        "appropriate search ranges.\n\n"
        "Here is my actual circuit:\n"
        f"```spice\n{netlist.rstrip()}\n```\n\n"
        "Required Output\n"
        "1. The netlist with every tunable value replaced by a {name} placeholder (for example "
        "W={w_M1} or R1 Vout Vdd {r_load}k). Keep the META lines.\n"
        "2. A parameter search range dictionary named param_ranges_definition, mapping each name to "
        "{'min': ..., 'max': ..., 'log': True or False}.\n"
        "3. A dictionary named initial_params = {...} holding the original values.\n"
        "4. Reasonable parameter constraints with tailored search ranges:\n"
        f"{constraints}\n\n"
        "Return all three parts together in a single fenced code block: the template first, then "
        "param_ranges_definition, then initial_params.\n"
    )


# ------------------------------------------------------------- payload parse

_FENCE = re.compile(r"^[ \t]*```[^\n`]*\n(.*?)\n[ \t]*```[ \t]*$", re.MULTILINE | re.DOTALL)
_PARAM_MARKERS = ("param_ranges_definition", "initial_params")
_ELEMENT = re.compile(r"^[RCLMVIXQDEGFHJK]\w*\s+\S+\s+\S+", re.IGNORECASE)


@dataclass(frozen=True)
class Payload:
    text: str
    kind: str  # netlist, params, pyspice or unknown


def classify_payload(text: str) -> str:
    if any(m in text for m in _PARAM_MARKERS):
        return "params"
    if re.search(r"^\s*(from|import)\s+PySpice|circuit\s*=\s*Circuit\(", text, re.MULTILINE):
        return "pyspice"
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if any(ln.upper().startswith("* META") for ln in lines):
        return "netlist"
    if sum(bool(_ELEMENT.match(ln)) for ln in lines) >= 2:
        return "netlist"
    return "unknown"


def extract_payload(response: str) -> Payload:
    """The last fenced code block of a response, bytes untouched."""
    blocks = _FENCE.findall(response)
    if not blocks:
        raise NoCodeBlock("the response contains no fenced code block")
    text = blocks[-1]
    return Payload(text, classify_payload(text))


def embed(code: str, lang: str = "spice") -> str:
    """Wrap code in a fence; inverse of extract_payload for fence-free code."""
    return f"```{lang}\n{code}\n```\n"

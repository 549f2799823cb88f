"""Benchmark task registry."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .circuit_ir import CircuitType

COMPOSITE_IDS = frozenset({9, 22, 23, 24, 25, 26, 27, 28})


@dataclass(frozen=True)
class DesignTask:
    task_id: int | str
    circuit_type: CircuitType
    description: str
    output_node: str
    input_node: str | None = None  # comma separated for multi-input circuits
    difficulty: str = "easy"
    is_composite: bool = False
    required_tools: tuple[str, ...] = ()
    prompt_phrase: str = ""
    filter_kind: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.difficulty not in ("easy", "medium", "hard"):
            raise ValueError(f"difficulty must be easy, medium or hard, not {self.difficulty!r}")
        if self.is_composite and not self.required_tools:
            raise ValueError(f"composite task {self.task_id} lists no required subcircuits")
        if self.input_node is None and self.circuit_type is not CircuitType.OSCILLATOR:
            raise ValueError(f"task {self.task_id}: only oscillators may omit the input node")

    @property
    def inputs(self) -> list[str]:
        if not self.input_node:
            return []
        return [n.strip() for n in self.input_node.split(",")]

    @property
    def phrase(self) -> str:
        return self.prompt_phrase or self.description


def task_from_dict(d: dict) -> DesignTask:
    kind = CircuitType.parse(d["type"])
    return DesignTask(
        task_id=d["id"],
        circuit_type=kind,
        description=d["description"],
        output_node=d.get("output", "Vout"),
        input_node=d.get("input"),
        difficulty=d.get("difficulty", "easy"),
        is_composite=bool(d.get("composite", False)),
        required_tools=tuple(d.get("tools", ())),
        prompt_phrase=d.get("prompt", ""),
        filter_kind=d.get("filter") or (_filter_kind(d["description"]) if kind is CircuitType.FILTER else None),
    )


def _filter_kind(text: str) -> str | None:
    low = text.lower().replace("-", "").replace(" ", "")
    for kind in ("lowpass", "highpass", "bandpass", "bandstop"):
        if kind in low:
            return kind
    if "notch" in low:
        return "bandstop"
    return None


def load_tasks(path: str | Path | None = None) -> dict[int | str, DesignTask]:
    if path is None:
        text = resources.files("artifact").joinpath("data/tasks.json").read_text()
    else:
        text = Path(path).read_text()
    data = json.loads(text)
    rows = data["tasks"] if isinstance(data, dict) else data
    return {t.task_id: t for t in map(task_from_dict, rows)}


@lru_cache(maxsize=1)
def registry() -> dict[int | str, DesignTask]:
    return load_tasks()


def get_task(task_id: int | str) -> DesignTask:
    reg = registry()
    key = int(task_id) if str(task_id).isdigit() else task_id
    try:
        return reg[key]
    except KeyError:
        raise KeyError(f"no benchmark task {task_id!r}") from None

"""Run configuration and the JSON config file.

Example config::

    {
      "llm_model": "gpt-4.1",
      "mllm_model": "gpt-4.1",
      "base_url": "https://api.openai.com/v1",
      "api": "openai",
      "api_key_env": "ARTIFACT_API_KEY",
      "engine": "/usr/bin/ngspice",
      "workers": 4
    }

Any RunConfig field may appear. Credentials never go in the file; the
key is read from the environment variable named by ``api_key_env``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .llm_gateway import API_KEY_ENV, MODES, ProviderConfig
from .prompts import REPRESENTATIONS, Toggles

GENERATION_TEMPERATURE = 0.5
GENERATION_TOP_P = 1.0
EXTRACTION_TEMPERATURE = 0.0


@dataclass(frozen=True)
class RunConfig:
    llm_model: str = "gpt-4.1"
    mllm_model: str | None = None  # None: same model as the LLM
    base_url: str = "https://api.openai.com/v1"
    api: str = "openai"
    api_key_env: str = API_KEY_ENV
    vision: bool = True
    mode: str = "live"
    transcripts: str | None = None  # file or directory of JSONL transcripts
    attempts_max: int = 3
    samples_n: int = 30
    no_feedback: bool = False
    no_library: bool = False
    no_cot: bool = False
    no_incontext: bool = False
    repr: str = "netlist"
    seed: int = 0
    workdir: str = "runs"
    library: str | None = None  # None: fresh seeded library per sample
    engine: str | None = None
    workers: int = 1
    timeout: float = 120.0

    def __post_init__(self):
        if self.attempts_max < 1:
            raise ValueError("attempts_max must be at least 1")
        if self.samples_n < 1:
            raise ValueError("samples_n must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "replay" and not self.transcripts:
            raise ValueError("replay mode needs a transcript path")
        if self.repr not in REPRESENTATIONS:
            raise ValueError(f"repr must be one of {REPRESENTATIONS}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def attempts(self) -> int:
        return 1 if self.no_feedback else self.attempts_max

    @property
    def toggles(self) -> Toggles:
        return Toggles(in_context_example=not self.no_incontext, chain_of_thought=not self.no_cot,
                       representation=self.repr)

    def provider(self) -> ProviderConfig:
        return ProviderConfig(base_url=self.base_url, model=self.llm_model, vision_model=self.mllm_model,
                              api=self.api, api_key_env=self.api_key_env, timeout=self.timeout, vision=self.vision)

    def ablation(self) -> dict:
        return {"no_feedback": self.no_feedback, "no_library": self.no_library, "no_cot": self.no_cot,
                "no_incontext": self.no_incontext, "repr": self.repr}

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    data = {}
    if path is not None:
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**data)


def shipped_transcripts() -> Path:
    return Path(str(resources.files("artifact").joinpath("data/transcripts")))


def transcript_paths(path: str | Path) -> list[Path]:
    """A JSONL file, or every ``*.jsonl`` in a directory in name order."""
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob("*.jsonl"))
    return [p]

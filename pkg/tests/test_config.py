import json

import pytest

from artifact.config import RunConfig, load_config, shipped_transcripts, transcript_paths


def test_defaults():
    cfg = RunConfig()
    assert cfg.attempts == 3
    assert cfg.toggles.in_context_example and cfg.toggles.chain_of_thought
    assert cfg.provider().model == "gpt-4.1"


def test_ablation_flags_map():
    assert RunConfig(no_feedback=True).attempts == 1
    assert not RunConfig(no_cot=True).toggles.chain_of_thought
    assert not RunConfig(no_incontext=True).toggles.in_context_example
    assert RunConfig(repr="pyspice").toggles.representation == "pyspice"
    assert RunConfig(no_library=True).ablation()["no_library"]


@pytest.mark.parametrize("kw", [{"attempts_max": 0}, {"samples_n": 0}, {"workers": 0}, {"mode": "dream"},
                                {"mode": "replay"}, {"repr": "verilog"}])
def test_invalid(kw):
    with pytest.raises(ValueError):
        RunConfig(**kw)


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"llm_model": "m", "workers": 4}))
    cfg = load_config(p, seed=7, workers=None)
    assert (cfg.llm_model, cfg.workers, cfg.seed) == ("m", 4, 7)
    p.write_text(json.dumps({"api_key": "secret"}))
    with pytest.raises(ValueError, match="unknown config keys"):
        load_config(p)


def test_with_ignores_none():
    cfg = RunConfig().with_(seed=None, workers=2)
    assert cfg.seed == 0 and cfg.workers == 2


def test_transcript_paths(tmp_path):
    names = [p.name for p in transcript_paths(shipped_transcripts())]
    assert names == sorted(names)
    assert "task23_rc_oscillator.jsonl" in names
    f = tmp_path / "x.jsonl"
    assert transcript_paths(f) == [f]

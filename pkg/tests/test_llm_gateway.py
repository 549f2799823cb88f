import base64
import json

import httpx
import pytest

from artifact.llm_gateway import (
    ChatRequest,
    Gateway,
    Message,
    MissingCredentials,
    NoNetworkTransport,
    ProviderConfig,
    ProviderError,
    ReplayMiss,
    ScriptedTransport,
    TranscriptStore,
    UnsupportedByProvider,
    request_hash,
)

PNG = b"\x89PNG\r\n\x1a\nfake image bytes"


@pytest.fixture(autouse=True)
def api_key(monkeypatch):
    monkeypatch.setenv("ARTIFACT_API_KEY", "test-key")


def _record(tmp_path, replies, requests):
    store = TranscriptStore(tmp_path / "t.jsonl")
    gw = Gateway(ProviderConfig(), "record", store, ScriptedTransport(replies), clock=lambda: "T0")
    out = [gw.complete(r).text for r in requests]
    return store, out


def test_record_then_replay(tmp_path):
    reqs = [ChatRequest.user("design an amp", seed=1), ChatRequest.user("fix it", seed=1)]
    store, live = _record(tmp_path, ["A", "B"], reqs)
    assert live == ["A", "B"]
    assert len(store) == 2
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert len(lines) == 2
    replay = Gateway(ProviderConfig(), "replay", TranscriptStore(tmp_path / "t.jsonl"), NoNetworkTransport())
    assert [replay.complete(r).text for r in reqs] == ["A", "B"]


def test_replay_miss_names_hash_and_hint(tmp_path):
    _record(tmp_path, ["A"], [ChatRequest.user("design an amp")])
    gw = Gateway(ProviderConfig(), "replay", TranscriptStore(tmp_path / "t.jsonl"), NoNetworkTransport())
    req = ChatRequest.user("design an amplifier please")
    with pytest.raises(ReplayMiss) as exc:
        gw.complete(req)
    assert exc.value.request_hash == request_hash(req)
    assert request_hash(req)[:16] in str(exc.value)
    assert "design an amp" in str(exc.value)


def test_replay_repeated_hash_in_order(tmp_path):
    req = ChatRequest.user("same")
    _record(tmp_path, ["one", "two"], [req, req])
    gw = Gateway(ProviderConfig(), "replay", TranscriptStore(tmp_path / "t.jsonl"), NoNetworkTransport())
    assert [gw.complete(req).text for _ in range(3)] == ["one", "two", "two"]


def test_hash_sensitivity():
    base = ChatRequest.user("hello", temperature=0.5)
    assert request_hash(base) == request_hash(ChatRequest.user("hello", temperature=0.5))
    assert request_hash(base) != request_hash(ChatRequest.user("hello", temperature=0.0))
    assert request_hash(base) != request_hash(ChatRequest.user("hello!", temperature=0.5))
    assert request_hash(base) != request_hash(ChatRequest.user("hello", temperature=0.5, seed=3))


def test_attachment_base64_whitespace_ignored():
    b64 = base64.b64encode(PNG).decode()
    wrapped = "\n".join(b64[i:i + 8] for i in range(0, len(b64), 8))
    a = ChatRequest.user("look", attachments=[PNG])
    b = ChatRequest.user("look", attachments=[wrapped])
    c = ChatRequest.user("look", attachments=[" " + b64 + " \n"])
    assert request_hash(a) == request_hash(b) == request_hash(c)
    assert request_hash(a) != request_hash(ChatRequest.user("look", attachments=[PNG + b"x"]))


def test_request_dict_roundtrip():
    req = ChatRequest.user("look", attachments=[PNG], system="be brief", seed=4)
    again = ChatRequest.from_dict(json.loads(json.dumps(req.to_dict())))
    assert again == req
    assert request_hash(again) == request_hash(req)


def test_message_validation():
    with pytest.raises(ValueError):
        Message("robot", "x")
    with pytest.raises(ValueError):
        Message("assistant", "x", (PNG,))
    with pytest.raises(ValueError):
        ChatRequest(())
    with pytest.raises(ValueError):
        ChatRequest.user("x", temperature=3.0)


def test_no_network_transport_blocks_live():
    gw = Gateway(ProviderConfig(), "live", transport=NoNetworkTransport())
    with pytest.raises(AssertionError, match="network access attempted"):
        gw.complete(ChatRequest.user("hi"))


def test_missing_credentials(monkeypatch):
    monkeypatch.delenv("ARTIFACT_API_KEY")
    gw = Gateway(ProviderConfig(), "live", transport=ScriptedTransport(["x"]))
    with pytest.raises(MissingCredentials):
        gw.complete(ChatRequest.user("hi"))


class Flaky(httpx.BaseTransport):
    def __init__(self, statuses):
        self.statuses = list(statuses)
        self.calls = 0

    def handle_request(self, request):
        self.calls += 1
        status = self.statuses.pop(0)
        if status != 200:
            return httpx.Response(status, text="busy")
        return httpx.Response(200, json={"id": "r", "choices": [{"message": {"content": "ok"}}], "usage": {}})


def test_retries_on_transient_status():
    sleeps = []
    t = Flaky([429, 503, 200])
    gw = Gateway(ProviderConfig(), "live", transport=t, sleep=sleeps.append)
    assert gw.complete(ChatRequest.user("hi")).text == "ok"
    assert t.calls == 3
    assert sleeps == [0.5, 1.0]


def test_gives_up_after_retries():
    t = Flaky([500] * 10)
    gw = Gateway(ProviderConfig(), "live", transport=t, sleep=lambda s: None)
    with pytest.raises(ProviderError):
        gw.complete(ChatRequest.user("hi"))
    assert t.calls == 4


def test_client_error_not_retried():
    t = Flaky([400, 200])
    gw = Gateway(ProviderConfig(), "live", transport=t, sleep=lambda s: None)
    with pytest.raises(ProviderError):
        gw.complete(ChatRequest.user("hi"))
    assert t.calls == 1


def test_multimodal_preconditions():
    gw = Gateway(ProviderConfig(vision=False), "live", transport=NoNetworkTransport())
    with pytest.raises(ValueError):
        gw.complete_multimodal(ChatRequest.user("no image"))
    with pytest.raises(UnsupportedByProvider):
        gw.complete_multimodal(ChatRequest.user("image", attachments=[PNG]))


def test_openai_payload_carries_image():
    t = ScriptedTransport(["seen"])
    gw = Gateway(ProviderConfig(), "live", transport=t)
    gw.complete_multimodal(ChatRequest.user("describe", attachments=[PNG]))
    content = t.requests[0]["messages"][-1]["content"]
    kinds = [c["type"] for c in content]
    assert kinds == ["text", "image_url"]
    assert base64.b64encode(PNG).decode() in content[1]["image_url"]["url"]


def test_modes_need_store():
    with pytest.raises(ValueError):
        Gateway(ProviderConfig(), "replay")
    with pytest.raises(ValueError):
        Gateway(ProviderConfig(), "bogus")
    with pytest.raises(ValueError):
        ProviderConfig(api="carrier-pigeon")

from __future__ import annotations

import json

import pytest

from irb_forge.llm import (
    TEMPLATE_IDS,
    ContextLengthError,
    Gateway,
    Ledger,
    MissingPlaceholderError,
    MockProvider,
    OpenAICompatibleProvider,
    ProviderConfig,
    ProviderError,
    ProviderResponse,
    RetriesExhaustedError,
    TransientProviderError,
    Usage,
    build_gateway,
    load_template,
)
from irb_forge.llm.mock import FixtureEntry, rule_judge, rule_qa_with_retrieval
from irb_forge.llm.templates import PromptTemplate


QB = {"ADD_QUESTION_DATE": "2025-01-01", "ADD QUESTION HERE": "q"}


class StubResponse:
    def __init__(self, status: int, payload: dict | None = None, text: str = ""):
        self.status_code = status
        self._payload = payload
        self.text = text or json.dumps(payload or {})

    def json(self):
        if self._payload is None:
            raise ValueError("no JSON")
        return self._payload


class StubSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.headers: dict[str, str] = {}
        self.bodies: list[dict] = []

    def post(self, url, json=None, timeout=None):
        self.bodies.append(json)
        return self.responses.pop(0)


def ok_payload(text: str, reasoning: int | None = None) -> dict:
    usage = {"prompt_tokens": 11, "completion_tokens": 3}
    if reasoning is not None:
        usage["completion_tokens_details"] = {"reasoning_tokens": reasoning}
    return {"choices": [{"message": {"content": text}}], "usage": usage}


class Scripted:
    """Provider that replays a list of responses or exceptions."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = 0

    def send(self, request):
        self.calls += 1
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def test_all_templates_load_with_placeholders():
    for tid in TEMPLATE_IDS:
        t = load_template(tid)
        assert t.required_placeholders, tid
    assert load_template("judge").required_placeholders == {
        "ADD_QUESTION_HERE", "ADD_GOLD_TARGET_HERE", "ADD_PREDICTED_ANSWER_HERE"
    }
    with pytest.raises(KeyError):
        load_template("nope")


def test_render_single_pass_and_missing_bindings():
    t = PromptTemplate("t", "Q: [ADD_X] / [ADD_Y]")
    assert t.render({"ADD_X": "[ADD_Y]", "ADD_Y": "y"}) == "Q: [ADD_Y] / y"
    with pytest.raises(MissingPlaceholderError) as info:
        t.render({"ADD_X": "x"})
    assert info.value.missing == ["ADD_Y"]


def test_openai_retries_429_then_succeeds():
    session = StubSession([StubResponse(429), StubResponse(429), StubResponse(200, ok_payload("Paris", 5))])
    provider = OpenAICompatibleProvider("https://llm.example.com/v1/", "key", session=session)
    delays = []
    gw = Gateway(provider, "m", max_output_tokens=64, reasoning_budget=128, sleep=delays.append)
    call = gw.complete("qa_without_retrieval", {"ADD_QUESTION_DATE": "2025-01-01", "ADD QUESTION HERE": "Capital?"})
    assert call.attempt_count == 3
    assert call.response_text == "Paris"
    assert call.usage == Usage(11, 3, 5)
    assert delays == [0.5, 1.0]
    assert session.headers["Authorization"] == "Bearer key"
    assert session.bodies[0]["max_tokens"] == 64 and session.bodies[0]["reasoning"] == {"max_tokens": 128}
    assert gw.ledger.entries[-1]["attempt_count"] == 3


def test_openai_error_classes():
    def provider(resp):
        return OpenAICompatibleProvider("https://x", session=StubSession([resp]))

    from irb_forge.llm import LlmRequest

    req = LlmRequest("judge", {}, "prompt", "m")
    with pytest.raises(TransientProviderError):
        provider(StubResponse(503)).send(req)
    with pytest.raises(ContextLengthError):
        provider(StubResponse(400, text="This model's maximum context length is 8192")).send(req)
    with pytest.raises(ProviderError):
        provider(StubResponse(401, text="bad key")).send(req)
    with pytest.raises(ProviderError):
        provider(StubResponse(200, {"choices": []})).send(req)


def test_retries_exhausted_is_ledgered(tmp_path):
    ledger = Ledger(tmp_path / "ledger.jsonl")
    gw = Gateway(Scripted([TransientProviderError("boom")] * 3), "m", ledger=ledger, max_attempts=3,
                 sleep=lambda s: None)
    with pytest.raises(RetriesExhaustedError) as info:
        gw.complete("qa_without_retrieval", QB)
    assert info.value.attempts == 3
    entries = Ledger.read(tmp_path / "ledger.jsonl")
    assert entries[-1]["status"] == "error" and entries[-1]["attempt_count"] == 3


def test_non_transient_error_not_retried():
    provider = Scripted([ProviderError("bad request"), ProviderResponse("x")])
    gw = Gateway(provider, "m", sleep=lambda s: None)
    with pytest.raises(ProviderError):
        gw.complete("qa_without_retrieval", QB)
    assert provider.calls == 1
    assert gw.ledger.entries[-1]["status"] == "error"


def test_context_window_precheck():
    provider = Scripted([])
    gw = Gateway(provider, "m", context_window=50, max_output_tokens=10)
    with pytest.raises(ContextLengthError):
        gw.complete("qa_without_retrieval", {**QB, "ADD QUESTION HERE": "word " * 100})
    assert provider.calls == 0
    assert gw.ledger.entries[-1]["attempt_count"] == 0


def test_missing_binding_is_ledgered():
    gw = Gateway(Scripted([]), "m")
    with pytest.raises(KeyError):
        gw.complete("judge", {"ADD_QUESTION_HERE": "q"})
    assert gw.ledger.entries[-1]["status"] == "error"


def test_ledger_seq_continues_and_totals(tmp_path):
    path = tmp_path / "l.jsonl"
    gw = Gateway(MockProvider(), "m", ledger=Ledger(path))
    gw.complete("qa_without_retrieval", QB)
    gw2 = Gateway(MockProvider(), "m", ledger=Ledger(path))
    gw2.complete("qa_without_retrieval", QB)
    assert [e["seq"] for e in Ledger.read(path)] == [0, 1]
    assert gw2.ledger.totals()["calls"] == 1


def test_usage_validation():
    with pytest.raises(ValueError):
        Usage(-1, 0)


def test_mock_fixture_match_and_contains():
    entries = [
        FixtureEntry("judge", "INCORRECT", match={"ADD_QUESTION_HERE": "q  one"}),
        FixtureEntry("judge", "CORRECT", contains={"ADD_QUESTION_HERE": "two"}, usage={"prompt_tokens": 1,
                                                                                         "completion_tokens": 1}),
    ]
    gw = Gateway(MockProvider(entries), "m")
    b = {"ADD_GOLD_TARGET_HERE": "g", "ADD_PREDICTED_ANSWER_HERE": "p"}
    assert gw.complete("judge", {**b, "ADD_QUESTION_HERE": "q one"}).response_text == "INCORRECT"
    call = gw.complete("judge", {**b, "ADD_QUESTION_HERE": "question two"})
    assert call.response_text == "CORRECT" and call.usage == Usage(1, 1)


@pytest.mark.parametrize(
    "pred, gold, label",
    [
        ("I don't know", "Paris", "NOT_ATTEMPTED"),
        ("It is Paris, France", "Paris", "CORRECT"),
        ("Lyon", "Paris", "INCORRECT"),
        ("This is a false premise", "False premise question", "CORRECT"),
        ("Paris", "False premise question", "INCORRECT"),
    ],
)
def test_mock_judge_rule(pred, gold, label):
    b = {"ADD_QUESTION_HERE": "q", "ADD_GOLD_TARGET_HERE": gold, "ADD_PREDICTED_ANSWER_HERE": pred}
    assert rule_judge(b) == label


def test_mock_reader_extracts_new_name():
    context = (
        "[1] Source: https://a.example.org\nPublished date: 2025-01-02\n"
        "Content: Tiraspoltransgaz cut off gas supply to Bender on 1 January 2025. Officials met."
    )
    b = {"ADD CONTEXT HERE": context, "ADD QUESTION HERE": "Which company cut off gas supply to Bender?"}
    assert rule_qa_with_retrieval(b) == "Tiraspoltransgaz"
    assert rule_qa_with_retrieval({**b, "ADD CONTEXT HERE": ""}) == "I don't know"


def test_provider_config_and_build_gateway(tmp_path):
    with pytest.raises(ValueError):
        ProviderConfig.from_dict({"kind": "mock", "colour": "blue"})
    (tmp_path / "fx.json").write_text(json.dumps([
        {"template_id": "qa_without_retrieval", "response": "fixed", "match": {}}
    ]))
    gw = build_gateway(ProviderConfig(fixtures="fx.json"), tmp_path / "l.jsonl", base_dir=tmp_path)
    assert gw.complete("qa_without_retrieval", QB).response_text == "fixed"
    assert (tmp_path / "l.jsonl").exists()
    with pytest.raises(ValueError):
        build_gateway(ProviderConfig(kind="carrier-pigeon"))


def test_gateway_map_parallel_preserves_order():
    gw = Gateway(MockProvider(), "m", parallelism=4)
    assert gw.map(lambda x: x * x, range(20)) == [x * x for x in range(20)]

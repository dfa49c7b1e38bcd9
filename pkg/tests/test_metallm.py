import json
from pathlib import Path

import httpx
import pytest

from metarl.metallm import (
    PPO_WARM_START_CODE,
    LlmEndpoint,
    MockClient,
    OpenAIChatClient,
    ProposalRecord,
    ResponseFormatError,
    TransportError,
    build_prompt,
    check_drift_validity,
    parse_response,
    propose_loop,
    replay_transcript,
)
from metarl.metallm.client import Message
from metarl.metallm.prompts import ProposalValidationError
from metarl.symdsl import DRIFT_SIGNATURE, OPEN_SIGNATURE, parse

GOLDEN = Path(__file__).parent / "golden"


def reply(code, name="x"):
    return json.dumps({"thought": "t", "name": name, "code": code})


def warm(fitness=1.0):
    return ProposalRecord("ppo", "warm", PPO_WARM_START_CODE, parse(PPO_WARM_START_CODE, DRIFT_SIGNATURE), fitness)


def test_prompts_match_golden_files():
    got = build_prompt("drift", DRIFT_SIGNATURE, [ProposalRecord("ppo_clip", "warm start", PPO_WARM_START_CODE, None, 0.75)])
    assert got == (GOLDEN / "drift_prompt.txt").read_text()
    got = build_prompt("optimizer_ff", OPEN_SIGNATURE, [ProposalRecord("sgd", "warm start", "g * lr", None, 0.5)])
    assert got == (GOLDEN / "optimizer_prompt.txt").read_text()


def test_prompt_lists_every_input():
    text = build_prompt("optimizer_ff", OPEN_SIGNATURE, [warm()])
    for name in OPEN_SIGNATURE.names:
        assert f"- {name}:" in text
    assert "non-negative everywhere" in build_prompt("drift", DRIFT_SIGNATURE, [warm()])


def test_parse_response_variants():
    rec = parse_response("Sure!\n" + reply("r * A") + "\nthanks", DRIFT_SIGNATURE)
    assert rec.code == "r * A"
    with pytest.raises(ResponseFormatError) as e:
        parse_response('{"thought": "t", "code": "r"}', DRIFT_SIGNATURE)
    assert e.value.key == "name"
    with pytest.raises(ResponseFormatError):
        parse_response("no json here", DRIFT_SIGNATURE)
    with pytest.raises(ProposalValidationError):
        parse_response(reply("r + g"), DRIFT_SIGNATURE)


def test_drift_validity_checks():
    assert check_drift_validity(parse(PPO_WARM_START_CODE, DRIFT_SIGNATURE)) is None
    assert "zero at r = 1" in check_drift_validity(parse("abs(A)", DRIFT_SIGNATURE))
    assert "non-negative" in check_drift_validity(parse("(r - 1) * A", DRIFT_SIGNATURE))


def test_protocol_invalid_valid_inferior():
    script = [reply("r +* A"), reply("relu((r - clip(r, 1 - eps, 1 + eps)) * A)", "ppo_again"),
              reply("square(r - 1) * 10", "worse")]
    fits = {"ppo_again": 1.0, "worse": 0.2}
    client = MockClient(script)
    order = iter(["ppo_again", "worse"])
    res = propose_loop(client, "drift", DRIFT_SIGNATURE, warm(0.9), lambda e: fits[next(order)], budget=2,
                       rl_eval_seeds=3, steps_per_run=100)
    users = [m.content for m in res.messages if m.role == "user"]
    assert sum(u.startswith("Code not valid. Error:") for u in users) == 1
    fitness_msgs = [u for u in users if u.startswith("Fitness: ")]
    assert len(fitness_msgs) == 2
    assert all(u.endswith(".\nPlease generate the next one.") for u in fitness_msgs)
    assert res.best.name == "ppo_again"
    assert res.n_evaluated == 2 and res.rl_runs == 9 and res.env_steps == 900


def test_consecutive_failures_forfeit_budget():
    client = MockClient([reply("bad(")] * 6)
    res = propose_loop(client, "drift", DRIFT_SIGNATURE, warm(), lambda e: 0.0, budget=2)
    assert res.n_invalid == 6 and res.n_evaluated == 0 and res.best.name == "ppo"


def test_transport_failure_aborts_with_best():
    res = propose_loop(MockClient([]), "drift", DRIFT_SIGNATURE, warm(), lambda e: 0.0, budget=3)
    assert res.aborted and res.best.name == "ppo"


def test_ties_go_to_latest():
    client = MockClient([reply("square(r - 1)", "a")])
    res = propose_loop(client, "drift", DRIFT_SIGNATURE, warm(1.0), lambda e: 1.0, budget=1)
    assert res.best.name == "a"


def test_transcript_replay(tmp_path):
    client = MockClient([reply("square(r - 1)", "a"), reply("square(log(r))", "b")])
    vals = iter([0.5, 2.0])
    res = propose_loop(client, "drift", DRIFT_SIGNATURE, warm(1.0), lambda e: next(vals), budget=2)
    res.save(tmp_path / "t.json")
    again = replay_transcript(tmp_path / "t.json", "drift", DRIFT_SIGNATURE, warm(1.0), budget=2)
    assert again.best.name == "b" and [r.fitness for r in again.records] == [r.fitness for r in res.records]


def test_mock_from_file(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps(["a", "b"]))
    m = MockClient.from_file(tmp_path / "s.json")
    assert m.complete([]) == "a" and m.complete([]) == "b"
    with pytest.raises(TransportError):
        m.complete([])
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ValueError):
        MockClient.from_file(tmp_path / "bad.json")


def test_openai_client_request_shape(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekret")
    seen = {}

    def handler(request: httpx.Request):
        seen["auth"] = request.headers["authorization"]
        seen["url"] = str(request.url)
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hello"}}]})

    ep = LlmEndpoint(base_url="http://llm.test/v1", model="m", api_key_env="TEST_KEY")
    client = OpenAIChatClient(ep, transport=httpx.MockTransport(handler))
    assert client.complete([Message("user", "hi")]) == "hello"
    assert seen["auth"] == "Bearer sekret"
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["body"]["messages"] == [{"role": "user", "content": "hi"}]


def test_openai_client_retries_then_fails(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "k")
    monkeypatch.setattr("metarl.metallm.client.time.sleep", lambda s: None)
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503, text="busy")

    ep = LlmEndpoint(base_url="http://llm.test/v1", api_key_env="TEST_KEY", retries=2)
    with pytest.raises(TransportError, match="503"):
        OpenAIChatClient(ep, transport=httpx.MockTransport(handler)).complete([Message("user", "x")])
    assert len(calls) == 3


def test_client_requires_env_key(monkeypatch):
    monkeypatch.delenv("NOPE_KEY", raising=False)
    with pytest.raises(TransportError):
        OpenAIChatClient(LlmEndpoint(api_key_env="NOPE_KEY"))
    with pytest.raises(ValueError):
        LlmEndpoint.from_dict({"api_key": "x"})

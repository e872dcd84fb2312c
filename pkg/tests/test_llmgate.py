import json
import threading
from fractions import Fraction

import httpx
import pytest

from vulnhyp.llmgate import (
    ConfigInvalid,
    EndpointFailure,
    Gateway,
    GatewayRequest,
    LiveBackend,
    MockBackend,
    ReplayBackend,
    ReplayMiss,
    ResponseCache,
    ScriptEntry,
    ScriptExhausted,
    accounting,
    build_gateway,
    cache_key,
    load_script,
)
from vulnhyp.schema import validate_schema


def req(prompt="p", agent="A", sample=""):
    return GatewayRequest(prompt=prompt, agent_id=agent, sample_id=sample)


def test_sampling_settings_pinned():
    r = req()
    assert (r.temperature, r.top_p) == (0.0, 1.0)
    with pytest.raises(TypeError):
        GatewayRequest(prompt="p", agent_id="A", temperature=0.7)


def test_mock_consumes_in_order_per_agent():
    gw = Gateway(MockBackend([ScriptEntry("A", "a1", 3), ScriptEntry("B", "b1", 1), ScriptEntry("A", "a2", 4)]))
    assert gw.complete(req(agent="A")).text == "a1"
    second = gw.complete(req(agent="A"))
    assert (second.text, second.output_tokens, second.cache_hit, second.backend) == ("a2", 4, False, "mock")
    assert gw.complete(req(agent="B")).text == "b1"
    with pytest.raises(ScriptExhausted):
        gw.complete(req(agent="A"))


def test_mock_sample_bound_entries_win():
    mock = MockBackend([ScriptEntry("A", "shared", 1), ScriptEntry("A", "mine", 1, sample_id="s2")])
    assert mock.complete(req(agent="A", sample="s1")).text == "shared"
    assert mock.complete(req(agent="A", sample="s2")).text == "mine"
    assert mock.remaining() == 0


def test_cache_key_stable_and_sensitive():
    k = cache_key("prompt", "A", "m")
    assert k == cache_key("prompt", "A", "m")
    assert len(k) == 64
    assert len({k, cache_key("prompt", "B", "m"), cache_key("prompt", "A", "n"), cache_key("prompt!", "A", "m")}) == 4


def test_cache_key_frozen_value():
    # sha256 of the canonical {"agent_id","model_id","prompt"} payload, computed with hashlib by hand
    import hashlib

    payload = '{"agent_id": "A", "model_id": "m", "prompt": "p"}'
    assert cache_key("p", "A", "m") == hashlib.sha256(payload.encode()).hexdigest()


def test_record_then_replay(tmp_path):
    cache = ResponseCache(tmp_path)
    rec = Gateway(MockBackend([ScriptEntry("A", "hello", 7)]), cache, "m")
    rec.complete(req("q", "A"))
    entry_file = cache.path_for(cache_key("q", "A", "m"))
    assert validate_schema(entry_file.read_text(), "cache_entry").ok
    replay = Gateway(ReplayBackend(cache, "m"), None, "m")
    r = replay.complete(req("q", "A"))
    assert (r.text, r.output_tokens, r.cache_hit, r.backend) == ("hello", 7, True, "replay")
    with pytest.raises(ReplayMiss):
        replay.complete(req("unseen", "A"))


def test_concurrent_writes_are_whole(tmp_path):
    cache = ResponseCache(tmp_path)
    script = [ScriptEntry("A", f"t{i}", i) for i in range(40)]
    gw = Gateway(MockBackend(script), cache)
    threads = [threading.Thread(target=gw.complete, args=(req(f"p{i}", "A"),)) for i in range(40)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(cache.keys()) == 40
    for k in cache.keys():
        assert json.loads(cache.path_for(k).read_text())["key"] == k
    assert sorted(r.output_tokens for r in gw.records) == list(range(40))


def _live(handler, attempts=3):
    sleeps = []
    backend = LiveBackend("http://model.test/v1/chat", "tok", "m", attempts=attempts, transport=httpx.MockTransport(handler), sleep=sleeps.append)
    return backend, sleeps


def _ok(text="{}", tokens=5):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}], "usage": {"completion_tokens": tokens}})


def test_live_request_shape():
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return _ok('{"x": 1}', 9)

    backend, _ = _live(handler)
    r = backend.complete(req("hi", "A"))
    assert (r.text, r.output_tokens, r.backend) == ('{"x": 1}', 9, "live")
    assert seen["auth"] == "Bearer tok"
    body = seen["body"]
    assert (body["temperature"], body["top_p"], body["model"]) == (0.0, 1.0, "m")
    assert body["response_format"] == {"type": "json_object"}


def test_live_retries_with_backoff_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503) if len(calls) < 3 else _ok()

    backend, sleeps = _live(handler)
    backend.complete(req())
    assert len(calls) == 3 and sleeps == [1.0, 2.0]


def test_live_gives_up_after_three_attempts():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(429)

    backend, _ = _live(handler)
    with pytest.raises(EndpointFailure):
        backend.complete(req())
    assert len(calls) == 3


def test_live_malformed_body_is_endpoint_failure():
    backend, _ = _live(lambda request: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(EndpointFailure):
        backend.complete(req())


def test_live_requires_credentials():
    with pytest.raises(ConfigInvalid, match="VULNHYP_ENDPOINT"):
        build_gateway("live", env={})
    with pytest.raises(ConfigInvalid, match="VULNHYP_API_KEY"):
        build_gateway("live", env={"VULNHYP_ENDPOINT": "http://x"})


def test_build_gateway_guards():
    with pytest.raises(ConfigInvalid):
        build_gateway("mock", env={})
    with pytest.raises(ConfigInvalid):
        build_gateway("replay", env={})
    with pytest.raises(ConfigInvalid):
        build_gateway("psychic", env={})


def test_load_script_validates(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps([{"agent_id": "A", "text": "t", "output_tokens": 2}]))
    assert load_script(p) == [ScriptEntry("A", "t", 2)]
    p.write_text(json.dumps([{"agent_id": "A", "text": "t"}]))
    with pytest.raises(ConfigInvalid):
        load_script(p)


def test_accounting_examples():
    a = accounting([(9, 100), (8, 50)])
    assert (a.calls, a.output_tokens, a.avg_calls) == (17, 150, Fraction(17, 2))
    empty = accounting([])
    assert (empty.calls, empty.avg_calls, empty.avg_output_tokens) == (0, None, None)
    assert empty.to_dict()["avg_calls"] is None

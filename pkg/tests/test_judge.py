import json
import threading
import time

import httpx
import pytest

from perceptbench.errors import (
    CacheCorrupt,
    ConfigError,
    EncodingError,
    ImageTooLarge,
    JudgeFailure,
    MissingCredential,
    MissingLatentScore,
    RateLimited,
    TransportError,
)
from perceptbench.judge import (
    CacheRecord,
    HttpBackend,
    JudgeConfig,
    PairJudge,
    SimulatedBackend,
    VerdictCache,
    decode_image_parts,
    encode_request,
    judge_pair,
    simulated_judge,
)
from perceptbench.principles import PRINCIPLES, Principle
from perceptbench.prompt import Side, default_template, format_verdicts
from perceptbench.schedule import PairTask

from conftest import png_bytes

IMG = png_bytes()
IMAGES = (IMG, png_bytes(colour=(255, 0, 0)))
PAIR = PairTask("A", "B")


def flat(a, b):
    return {"A": {p: a for p in PRINCIPLES}, "B": {p: b for p in PRINCIPLES}}


class CountingBackend:
    """Instrumented fake: answers in grammar, tracks calls and in-flight peak."""

    def __init__(self, responses=None, delay=0.0):
        self.calls = 0
        self.texts = []
        self.responses = list(responses or [])
        self.delay = delay
        self.in_flight = 0
        self.peak = 0
        self._lock = threading.Lock()

    def complete(self, prompt, text, images):
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.peak = max(self.peak, self.in_flight)
            self.texts.append(text)
        try:
            if self.delay:
                time.sleep(self.delay)
            if self.responses:
                return self.responses.pop(0)
            pair = prompt.pair
            latent = {pair.first: {p: 0.9 for p in PRINCIPLES}, pair.second: {p: 0.1 for p in PRINCIPLES}}
            return format_verdicts(simulated_judge(latent, 0.0, 0, pair))
        finally:
            with self._lock:
                self.in_flight -= 1


def test_config_invariants():
    assert JudgeConfig().temperature == 0.01
    assert JudgeConfig().max_image_dimension == 8000
    for bad in ({"temperature": -1}, {"concurrency_limit": 0}, {"max_image_dimension": 0}, {"backend": "x"}, {"noise_p": 0.7}):
        with pytest.raises(ConfigError):
            JudgeConfig(**bad)


def test_simulated_noise_free_argmax():
    latent = {"A": {Principle.VISUAL_CLUTTER: 0.9}, "B": {Principle.VISUAL_CLUTTER: 0.1}}
    latent["A"].update({p: 0.5 for p in PRINCIPLES if p is not Principle.VISUAL_CLUTTER})
    latent["B"].update({p: 0.5 for p in PRINCIPLES if p is not Principle.VISUAL_CLUTTER})
    for seed in range(20):
        assert simulated_judge(latent, 0.0, seed, PAIR).verdicts[Principle.VISUAL_CLUTTER].winner is Side.FIRST
        assert simulated_judge(latent, 0.0, seed, PairTask("B", "A")).winner_id(Principle.VISUAL_CLUTTER) == "A"


def test_simulated_tie_goes_first():
    vs = simulated_judge(flat(0.4, 0.4), 0.0, 5, PAIR)
    assert all(v.winner is Side.FIRST for v in vs.verdicts.values())


def test_simulated_seeded_determinism():
    assert simulated_judge(flat(0.6, 0.4), 0.3, 9, PAIR) == simulated_judge(flat(0.6, 0.4), 0.3, 9, PAIR)


def test_simulated_flip_rate_monte_carlo():
    # flip model at p = 0.5: A should win about half the time
    wins = sum(
        simulated_judge(flat(0.9, 0.1), 0.5, seed, PAIR).verdicts[Principle.VISUAL_CLUTTER].winner is Side.FIRST
        for seed in range(10_000)
    )
    assert abs(wins / 10_000 - 0.5) <= 0.02


def test_simulated_missing_latent():
    with pytest.raises(MissingLatentScore):
        simulated_judge({"A": {p: 1 for p in PRINCIPLES}}, 0.0, 0, PAIR)
    with pytest.raises(MissingLatentScore):
        simulated_judge({"A": {Principle.CLOSURE: 1}, "B": {p: 1 for p in PRINCIPLES}}, 0.0, 0, PAIR)


def _has_cycle(nodes, beats):
    # Any cycle in a tournament implies a 3-cycle; check all triples.
    from itertools import permutations

    return any(beats[(a, b)] and beats[(b, c)] and beats[(c, a)] for a, b, c in permutations(nodes, 3))


def test_noise_free_tournament_is_transitive():
    import random

    rnd = random.Random(3)
    nodes = [f"n{k}" for k in range(7)]
    latent = {n: {p: rnd.random() for p in PRINCIPLES} for n in nodes}
    for p in PRINCIPLES:
        beats = {}
        for a in nodes:
            for b in nodes:
                if a != b:
                    beats[(a, b)] = simulated_judge(latent, 0.0, 1, PairTask(a, b)).winner_id(p) == a
        assert not _has_cycle(nodes, beats)


def test_encode_request_parts():
    one = png_bytes(1, 1)
    two = png_bytes(1, 1, (9, 9, 9))
    req = encode_request("hello", (one, two), "m", 0.01)
    parts = req["messages"][0]["content"]
    assert parts[0] == {"type": "text", "text": "hello"}
    assert [p["type"] for p in parts[1:]] == ["image_url", "image_url"]
    assert decode_image_parts(req) == [one, two]
    assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")
    assert req["temperature"] == 0.01 and req["model"] == "m"


def test_encode_request_empty_payload():
    with pytest.raises(EncodingError):
        encode_request("x", (b"", IMG), "m", 0.0)


def test_image_too_large():
    cfg = JudgeConfig(max_image_dimension=8000)
    big = png_bytes(9000, 200)
    backend = CountingBackend()
    with pytest.raises(ImageTooLarge):
        judge_pair(cfg, default_template(), PAIR, (big, IMG), backend=backend)
    assert backend.calls == 0


def test_cache_idempotence(tmp_path):
    cache = VerdictCache(tmp_path / "v.jsonl")
    backend = CountingBackend()
    cfg = JudgeConfig()
    first = judge_pair(cfg, default_template(), PAIR, IMAGES, backend=backend, cache=cache)
    second = judge_pair(cfg, default_template(), PAIR, IMAGES, backend=backend, cache=cache)
    assert first == second and backend.calls == 1
    # reload from disk: still a hit
    third = judge_pair(cfg, default_template(), PAIR, IMAGES, backend=backend, cache=VerdictCache(tmp_path / "v.jsonl"))
    assert third == first and backend.calls == 1
    assert third.model_id == cfg.effective_model_id


def test_cache_key_tracks_prompt_and_model(tmp_path):
    cache = VerdictCache(tmp_path / "v.jsonl")
    backend = CountingBackend()
    t = default_template()
    judge_pair(JudgeConfig(), t, PAIR, IMAGES, backend=backend, cache=cache)
    judge_pair(JudgeConfig(temperature=0.5), t, PAIR, IMAGES, backend=backend, cache=cache)
    judge_pair(JudgeConfig(), t, PairTask("B", "A"), IMAGES, backend=backend, cache=cache)
    from dataclasses import replace

    t2 = replace(t, role_preamble="A different role.")
    judge_pair(JudgeConfig(), t2, PAIR, IMAGES, backend=backend, cache=cache)
    assert backend.calls == 4
    assert len(cache) == 4


def test_retry_on_parse_failure_then_success(tmp_path):
    good = format_verdicts(simulated_judge(flat(1, 0), 0, 0, PAIR))
    backend = CountingBackend(["garbage", good])
    cache = VerdictCache(tmp_path / "v.jsonl")
    judge = PairJudge(JudgeConfig(max_retries=2), default_template(), backend, cache)
    vs, cached = judge.judge(PAIR, IMAGES)
    assert not cached and backend.calls == 2
    assert "could not be parsed" in backend.texts[1]
    assert cache.get(judge.key_for(PAIR)).attempts == 2


def test_persistent_garbage_is_judge_failure(tmp_path):
    backend = CountingBackend(["nope"] * 10)
    cache = VerdictCache(tmp_path / "v.jsonl")
    with pytest.raises(JudgeFailure):
        judge_pair(JudgeConfig(max_retries=2), default_template(), PAIR, IMAGES, backend=backend, cache=cache)
    assert backend.calls == 3
    assert len(cache) == 0


def test_concurrency_limit_respected():
    backend = CountingBackend(delay=0.02)
    judge = PairJudge(JudgeConfig(concurrency_limit=3), default_template(), backend)
    pairs = [PairTask(f"x{i}", f"y{i}") for i in range(24)]
    threads = [threading.Thread(target=judge.judge, args=(p, IMAGES)) for p in pairs]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert backend.calls == 24
    assert backend.peak <= 3
    assert backend.peak >= 2


def test_cache_truncated_tail_recovery(tmp_path):
    path = tmp_path / "v.jsonl"
    cache = VerdictCache(path)
    vs = simulated_judge(flat(1, 0), 0, 0, PAIR)
    cache.put(CacheRecord("k1", vs, 1))
    cache.put(CacheRecord("k2", vs, 1))
    with open(path, "a") as fh:
        fh.write('{"key": "k3", "verd')
    again = VerdictCache(path)
    assert len(again) == 2 and "k3" not in again
    again.put(CacheRecord("k3", vs, 1))
    assert len(VerdictCache(path)) == 3


def test_cache_corrupt_middle_line(tmp_path):
    path = tmp_path / "v.jsonl"
    vs = simulated_judge(flat(1, 0), 0, 0, PAIR)
    path.write_text("garbage\n" + CacheRecord("k", vs, 1).to_json() + "\n")
    with pytest.raises(CacheCorrupt):
        VerdictCache(path)


def test_cache_append_only_single_record_per_key(tmp_path):
    path = tmp_path / "v.jsonl"
    cache = VerdictCache(path)
    vs = simulated_judge(flat(1, 0), 0, 0, PAIR)
    assert cache.put(CacheRecord("k", vs, 1))
    assert not cache.put(CacheRecord("k", vs, 2))
    assert len(path.read_text().splitlines()) == 1


def test_simulated_backend_via_judge_pair():
    cfg = JudgeConfig(noise_p=0.0, seed=1)
    vs = judge_pair(cfg, default_template(), PAIR, IMAGES, latent=flat(0.2, 0.8))
    assert all(vs.winner_id(p) == "B" for p in PRINCIPLES)


# --- live HTTP backend over a mock transport -------------------------------------------


def _ok_body():
    text = format_verdicts(simulated_judge(flat(1, 0), 0, 0, PAIR))
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def live_config(**kw):
    base = dict(backend="live", endpoint_url="https://judge.example/v1/chat/completions", backoff_base=0.0)
    base.update(kw)
    return JudgeConfig(**base)


def test_live_missing_credential(monkeypatch):
    monkeypatch.delenv("JUDGE_API_KEY", raising=False)
    with pytest.raises(MissingCredential):
        HttpBackend(live_config())


def test_live_request_shape(monkeypatch):
    monkeypatch.setenv("JUDGE_API_KEY", "sekret")
    seen = []

    def handler(request):
        seen.append(request)
        return httpx.Response(200, json=_ok_body())

    backend = HttpBackend(live_config(), client=httpx.Client(transport=httpx.MockTransport(handler)))
    vs = judge_pair(live_config(), default_template(), PAIR, IMAGES, backend=backend)
    assert vs.winner_id(Principle.VISUAL_CLUTTER) == "A"
    body = json.loads(seen[0].content)
    assert seen[0].headers["authorization"] == "Bearer sekret"
    assert body["temperature"] == 0.01
    assert decode_image_parts(body) == list(IMAGES)


def test_live_rate_limit_then_success(monkeypatch):
    monkeypatch.setenv("JUDGE_API_KEY", "k")
    replies = [httpx.Response(429, headers={"retry-after": "0.5"}), httpx.Response(200, json=_ok_body())]
    sleeps = []
    client = httpx.Client(transport=httpx.MockTransport(lambda r: replies.pop(0)))
    backend = HttpBackend(live_config(), client=client, sleep=sleeps.append)
    judge_pair(live_config(), default_template(), PAIR, IMAGES, backend=backend)
    assert sleeps == [0.5]


def test_live_rate_limit_exhausted(monkeypatch):
    monkeypatch.setenv("JUDGE_API_KEY", "k")
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(429)))
    backend = HttpBackend(live_config(max_retries=1), client=client, sleep=lambda s: None)
    with pytest.raises(RateLimited):
        judge_pair(live_config(max_retries=1), default_template(), PAIR, IMAGES, backend=backend)


def test_live_network_error(monkeypatch):
    monkeypatch.setenv("JUDGE_API_KEY", "k")

    def boom(request):
        raise httpx.ConnectError("refused", request=request)

    calls = []
    client = httpx.Client(transport=httpx.MockTransport(lambda r: (calls.append(1), boom(r))[1]))
    backend = HttpBackend(live_config(max_retries=2), client=client, sleep=lambda s: None)
    with pytest.raises(TransportError):
        backend.complete(None, "x", IMAGES)
    assert len(calls) == 3


def test_live_client_error_not_retried(monkeypatch):
    monkeypatch.setenv("JUDGE_API_KEY", "k")
    calls = []
    client = httpx.Client(transport=httpx.MockTransport(lambda r: (calls.append(1), httpx.Response(400, text="bad"))[1]))
    backend = HttpBackend(live_config(), client=client, sleep=lambda s: None)
    with pytest.raises(TransportError):
        backend.complete(None, "x", IMAGES)
    assert len(calls) == 1


def test_live_anthropic_style_body(monkeypatch):
    monkeypatch.setenv("JUDGE_API_KEY", "k")
    text = _ok_body()["choices"][0]["message"]["content"]
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"content": [{"type": "text", "text": text}]})))
    assert HttpBackend(live_config(), client=client).complete(None, "x", IMAGES) == text


def test_debug_wire_redacts_images_and_credential(monkeypatch, caplog):
    monkeypatch.setenv("JUDGE_API_KEY", "sekret-value")
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200, json=_ok_body())))
    backend = HttpBackend(live_config(debug_wire=True), client=client)
    import base64

    with caplog.at_level("DEBUG", logger="perceptbench.wire"):
        backend.complete(None, "prompt", IMAGES)
    logged = caplog.text
    assert "redacted" in logged
    assert base64.b64encode(IMAGES[0]).decode() not in logged
    assert "sekret-value" not in logged

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from cofnlu.backend import (
    AuthFailure,
    BackendError,
    CompletionRequest,
    CompletionResponse,
    HttpChatBackend,
    MalformedResponse,
    MockBackend,
    RateLimited,
    RecordingBackend,
    ReplayBackend,
    ReplayMiss,
    TokenBucket,
    read_archive,
    replay_key,
)


def req(prompt="hello", n=2, temperature=0.7, max_tokens=64, model="m"):
    return CompletionRequest(prompt=prompt, temperature=temperature, n=n, max_tokens=max_tokens, model=model)


class TestRequestTypes:
    def test_invalid_n(self):
        with pytest.raises(ValueError):
            req(n=0)

    def test_invalid_temperature(self):
        with pytest.raises(ValueError):
            req(temperature=-0.1)

    def test_response_length(self):
        r = CompletionResponse(completions=("a", "b"))
        assert len(r.completions) == 2


class TestReplayKey:
    def test_stable_value(self):
        # Frozen so a cross-platform archive never silently invalidates.
        assert replay_key(req()) == "b4a288cfb50582d3e6c23db403ec4956b8e9dc8b9e4f3908f05de0d9aa06227d"

    def test_sensitive_to_every_field(self):
        base = replay_key(req())
        assert replay_key(req(prompt="other")) != base
        assert replay_key(req(n=3)) != base
        assert replay_key(req(temperature=0.0)) != base
        assert replay_key(req(max_tokens=65)) != base
        assert replay_key(req(model="m2")) != base


class TestMock:
    def test_static_fills_n(self):
        backend = MockBackend.static("hi")
        assert backend.complete(req(n=3)).completions == ("hi", "hi", "hi")

    def test_script_list_padded_and_truncated(self):
        backend = MockBackend(lambda r: ["a", "b", "c", "d"])
        assert backend.complete(req(n=2)).completions == ("a", "b")
        backend = MockBackend(lambda r: ["a"])
        assert backend.complete(req(n=3)).completions == ("a", "a", "a")

    def test_rules(self):
        backend = MockBackend.from_rules([("weather", "sunny"), ("", "fallback")])
        assert backend.complete(req(prompt="what weather", n=1)).completions == ("sunny",)
        assert backend.complete(req(prompt="other", n=1)).completions == ("fallback",)

    def test_rules_file(self, tmp_path):
        path = tmp_path / "rules.jsonl"
        path.write_text('{"match": "abc", "completions": ["yes"]}\n')
        backend = MockBackend.from_rules_file(path, default="no")
        assert backend.complete(req(prompt="xx abc yy", n=1)).completions == ("yes",)
        assert backend.complete(req(prompt="zz", n=1)).completions == ("no",)

    def test_requests_recorded(self):
        backend = MockBackend.static("x")
        backend.complete(req(prompt="p1", n=1))
        backend.complete(req(prompt="p2", n=1))
        assert [r.prompt for r in backend.requests] == ["p1", "p2"]


class TestRecordReplay:
    def test_round_trip(self, tmp_path):
        archive = tmp_path / "session.jsonl"
        recorder = RecordingBackend(MockBackend.static("answer"), archive)
        first = recorder.complete(req(prompt="q1"))
        recorder.complete(req(prompt="q2"))

        replay = ReplayBackend(archive)
        assert replay.complete(req(prompt="q1")).completions == first.completions
        assert replay.complete(req(prompt="q2")).completions == ("answer", "answer")

    def test_replay_miss(self, tmp_path):
        archive = tmp_path / "session.jsonl"
        RecordingBackend(MockBackend.static("a"), archive).complete(req(prompt="known"))
        replay = ReplayBackend(archive)
        with pytest.raises(ReplayMiss):
            replay.complete(req(prompt="never seen"))

    def test_archive_header_checked(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"something": "else"}\n')
        with pytest.raises(MalformedResponse):
            ReplayBackend(bad)

    def test_empty_run_archive_has_only_header(self, tmp_path):
        archive = tmp_path / "empty.jsonl"
        RecordingBackend(MockBackend.static("a"), archive)
        assert read_archive(archive) == {}
        lines = archive.read_text().splitlines()
        assert len(lines) == 1

    def test_duplicate_requests_stored_once(self, tmp_path):
        archive = tmp_path / "dup.jsonl"
        recorder = RecordingBackend(MockBackend.static("a"), archive)
        recorder.complete(req(prompt="same"))
        recorder.complete(req(prompt="same"))
        assert len(archive.read_text().splitlines()) == 2  # header + one record

    def test_tampering_changes_only_affected_key(self, tmp_path):
        archive = tmp_path / "session.jsonl"
        recorder = RecordingBackend(MockBackend.static("good"), archive)
        recorder.complete(req(prompt="q1"))
        recorder.complete(req(prompt="q2"))
        lines = archive.read_text().splitlines()
        record = json.loads(lines[1])
        record["completions"] = ["tampered"] * len(record["completions"])
        lines[1] = json.dumps(record)
        archive.write_text("\n".join(lines) + "\n")
        replay = ReplayBackend(archive)
        assert replay.complete(req(prompt="q1")).completions == ("tampered", "tampered")
        assert replay.complete(req(prompt="q2")).completions == ("good", "good")


class TestTokenBucket:
    def test_blocks_until_refill(self):
        clock = {"t": 0.0}
        sleeps = []

        def fake_sleep(s):
            sleeps.append(s)
            clock["t"] += s

        bucket = TokenBucket(rate_per_second=2.0, capacity=1, clock=lambda: clock["t"], sleep=fake_sleep)
        bucket.acquire()
        bucket.acquire()
        assert sleeps and sleeps[0] == pytest.approx(0.5)

    def test_no_wait_when_capacity_available(self):
        sleeps = []
        bucket = TokenBucket(rate_per_second=10.0, capacity=5, clock=lambda: 0.0, sleep=sleeps.append)
        for _ in range(5):
            bucket.acquire()
        assert sleeps == []


class _StubHandler(BaseHTTPRequestHandler):
    behavior = {"failures": 0, "status": 200, "auth": False, "bad_json": False}
    seen: list[dict] = []

    def do_POST(self):
        cls = type(self)
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        cls.seen.append({"path": self.path, "body": body, "auth": self.headers.get("Authorization")})
        if cls.behavior["auth"] and self.headers.get("Authorization") != "Bearer good-key":
            self.send_response(401)
            self.end_headers()
            return
        if cls.behavior["failures"] > 0:
            cls.behavior["failures"] -= 1
            self.send_response(cls.behavior.get("failure_status", 500))
            self.end_headers()
            return
        if cls.behavior["bad_json"]:
            payload = b"not json"
        else:
            choices = [
                {"message": {"content": f"completion {i} for n={body['n']}"}} for i in range(body["n"])
            ]
            payload = json.dumps({"choices": choices, "usage": {"prompt_tokens": 5, "completion_tokens": 7}}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    _StubHandler.behavior = {"failures": 0, "status": 200, "auth": False, "bad_json": False}
    _StubHandler.seen = []
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    thread.join(timeout=2)


def make_backend(url, **kwargs):
    defaults = dict(max_retries=3, backoff_base=0.0, requests_per_second=1000.0, sleep=lambda s: None)
    defaults.update(kwargs)
    return HttpChatBackend(base_url=url, api_key="good-key", **defaults)


class TestHttpBackend:
    def test_happy_path_returns_n_completions(self, stub_server):
        backend = make_backend(stub_server)
        response = backend.complete(req(prompt="the exact prompt", n=3))
        assert len(response.completions) == 3
        assert response.prompt_tokens == 5
        sent = _StubHandler.seen[0]["body"]
        assert sent["messages"] == [{"role": "user", "content": "the exact prompt"}]
        assert sent["n"] == 3 and sent["temperature"] == 0.7 and sent["max_tokens"] == 64
        assert _StubHandler.seen[0]["path"].endswith("/chat/completions")

    def test_retries_transient_then_succeeds(self, stub_server):
        _StubHandler.behavior["failures"] = 2
        backend = make_backend(stub_server)
        response = backend.complete(req(n=1))
        assert len(response.completions) == 1
        assert len(_StubHandler.seen) == 3

    def test_rate_limited_after_budget(self, stub_server):
        _StubHandler.behavior["failures"] = 99
        _StubHandler.behavior["failure_status"] = 429
        backend = make_backend(stub_server, max_retries=2)
        with pytest.raises(RateLimited):
            backend.complete(req(n=1))
        assert len(_StubHandler.seen) == 3  # initial try + 2 retries

    def test_persistent_5xx_raises_backend_error(self, stub_server):
        _StubHandler.behavior["failures"] = 99
        backend = make_backend(stub_server, max_retries=1)
        with pytest.raises(BackendError):
            backend.complete(req(n=1))

    def test_auth_failure_not_retried(self, stub_server):
        _StubHandler.behavior["auth"] = True
        backend = HttpChatBackend(
            base_url=stub_server, api_key="wrong", max_retries=3, backoff_base=0.0,
            requests_per_second=1000.0, sleep=lambda s: None,
        )
        with pytest.raises(AuthFailure):
            backend.complete(req(n=1))
        assert len(_StubHandler.seen) == 1

    def test_malformed_body(self, stub_server):
        _StubHandler.behavior["bad_json"] = True
        backend = make_backend(stub_server)
        with pytest.raises(MalformedResponse):
            backend.complete(req(n=1))

    def test_missing_base_url(self, monkeypatch):
        monkeypatch.delenv("LLM_BASE_URL", raising=False)
        with pytest.raises(BackendError):
            HttpChatBackend(base_url=None)

    def test_env_configuration(self, stub_server, monkeypatch):
        monkeypatch.setenv("LLM_BASE_URL", stub_server)
        monkeypatch.setenv("LLM_API_KEY", "good-key")
        backend = HttpChatBackend(requests_per_second=1000.0, sleep=lambda s: None)
        assert backend.complete(req(n=1)).completions
        assert _StubHandler.seen[0]["auth"] == "Bearer good-key"

    def test_record_wraps_live(self, stub_server, tmp_path):
        archive = tmp_path / "live.jsonl"
        backend = RecordingBackend(make_backend(stub_server), archive)
        live = backend.complete(req(prompt="record me", n=2))
        replay = ReplayBackend(archive)
        assert replay.complete(req(prompt="record me", n=2)).completions == live.completions

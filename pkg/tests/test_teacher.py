import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import pytest

from octoloop.explore import run_episode, write_episode
from octoloop.teacher import (
    API_KEY_ENV,
    AuthError,
    EmptyCompletion,
    HttpTeacher,
    RateLimited,
    ReplayMismatch,
    ReplayTeacher,
    TeacherConfig,
    TransportError,
)


def completion(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def make(handler, **cfg):
    sleeps = []
    config = TeacherConfig(kind="http", endpoint_url="https://llm.test/v1", **cfg)
    t = HttpTeacher(config, api_key="k-123", client=httpx.Client(transport=httpx.MockTransport(handler)),
                    sleep=sleeps.append)
    return t, sleeps


def test_request_shape():
    seen = {}

    def handler(req):
        seen["url"] = str(req.url)
        seen["auth"] = req.headers["authorization"]
        seen["body"] = json.loads(req.content)
        return httpx.Response(200, json=completion("hello"))

    t, sleeps = make(handler, model_name="m-1", temperature=0.3)
    assert t.ask("SYS", "ENV") == "hello"
    assert seen["url"] == "https://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer k-123"
    assert seen["body"] == {"model": "m-1", "temperature": 0.3, "messages": [
        {"role": "system", "content": "SYS"}, {"role": "user", "content": "ENV"}]}
    assert sleeps == [] and t.retries == 0


def test_invalid_key():
    t, sleeps = make(lambda req: httpx.Response(401, json={"error": "bad key"}))
    with pytest.raises(AuthError):
        t.ask("s", "e")
    assert sleeps == []


def test_missing_key(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    t = HttpTeacher(TeacherConfig(kind="http", endpoint_url="https://x"),
                    client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200))))
    with pytest.raises(AuthError):
        t.ask("s", "e")


def test_key_from_environment(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "env-key")
    assert HttpTeacher(TeacherConfig(kind="http", endpoint_url="https://x")).api_key == "env-key"


def test_two_timeouts_then_success():
    calls = []

    def handler(req):
        calls.append(1)
        if len(calls) <= 2:
            raise httpx.ReadTimeout("slow", request=req)
        return httpx.Response(200, json=completion("ok"))

    t, sleeps = make(handler)
    assert t.ask("s", "e") == "ok"
    assert t.retries == 2 and sleeps == [1.0, 2.0]


def test_rate_limited_after_retries():
    t, sleeps = make(lambda req: httpx.Response(429), max_retries=3)
    with pytest.raises(RateLimited):
        t.ask("s", "e")
    assert sleeps == [1.0, 2.0, 4.0]


def test_server_errors_exhaust():
    t, _ = make(lambda req: httpx.Response(503), max_retries=1)
    with pytest.raises(TransportError):
        t.ask("s", "e")


def test_empty_completion():
    t, _ = make(lambda req: httpx.Response(200, json=completion("  ")))
    with pytest.raises(EmptyCompletion):
        t.ask("s", "e")


def test_concurrency_cap():
    live, peak, lock = [0], [0], threading.Lock()

    def handler(req):
        with lock:
            live[0] += 1
            peak[0] = max(peak[0], live[0])
        time.sleep(0.02)
        with lock:
            live[0] -= 1
        return httpx.Response(200, json=completion("x"))

    t, _ = make(handler, n_parallel=2)
    threads = [threading.Thread(target=t.ask, args=("s", "e")) for _ in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert 1 <= peak[0] <= 2


class _Stub(BaseHTTPRequestHandler):
    replies = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        status, text = self.replies.pop(0)
        payload = json.dumps(completion(text if text else body["messages"][1]["content"].upper())).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def test_local_server_round_trip():
    _Stub.replies = [(500, "x"), (200, "")]
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Stub)
    th = threading.Thread(target=server.serve_forever, daemon=True)
    th.start()
    try:
        cfg = TeacherConfig(kind="http", endpoint_url=f"http://127.0.0.1:{server.server_port}/v1", timeout=5)
        t = HttpTeacher(cfg, api_key="k", sleep=lambda s: None)
        assert t.ask("sys", "ping") == "PING"
        assert t.retries == 1
    finally:
        server.shutdown()


def test_replay_reproduces_episode(tmp_path, bacon):
    from octoloop.explore import OracleTeacher

    ep = run_episode(bacon, OracleTeacher(bacon), 3)
    _, transcript = write_episode(bacon, ep, tmp_path)
    again = run_episode(bacon, ReplayTeacher.from_file(transcript), 3)
    assert [s.response for s in again.steps] == [s.response for s in ep.steps]
    assert again.final_hash == ep.final_hash and again.outcome == 1


def test_replay_mismatch():
    t = ReplayTeacher([{"env_msg": "a", "response": "r"}])
    with pytest.raises(ReplayMismatch):
        t.ask("s", "b")
    with pytest.raises(ReplayMismatch):
        ReplayTeacher([]).ask("s", "a")


def test_http_episode_marked_invalid(bacon):
    t, _ = make(lambda req: httpx.Response(503), max_retries=0)
    ep = run_episode(bacon, t, 0)
    assert not ep.valid and ep.outcome == 0 and "TransportError" in ep.invalid_reason


def test_config_validation():
    with pytest.raises(ValueError):
        TeacherConfig(kind="carrier-pigeon")
    with pytest.raises(ValueError):
        HttpTeacher(TeacherConfig(kind="http"))

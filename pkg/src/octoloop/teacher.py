"""Teachers answer environment messages: planner oracle, remote chat endpoint, or replay."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import httpx

from .world import WorldState

log = logging.getLogger(__name__)

API_KEY_ENV = "OCTO_TEACHER_API_KEY"
TEACHER_KINDS = ("oracle", "http", "replay")
BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0


class TeacherError(RuntimeError):
    """The teacher could not produce a response; the episode is invalid."""


class TransportError(TeacherError):
    pass


class AuthError(TeacherError):
    pass


class RateLimited(TeacherError):
    pass


class EmptyCompletion(TeacherError):
    pass


class ReplayMismatch(TeacherError):
    pass


@dataclass
class TeacherConfig:
    kind: str = "oracle"
    endpoint_url: str = ""
    model_name: str = "gpt-4-32k"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    n_parallel: int = 4
    transcript: str = ""

    def __post_init__(self) -> None:
        if self.kind not in TEACHER_KINDS:
            raise ValueError(f"unknown teacher kind {self.kind!r}")


class HttpTeacher:
    """Client for a chat-completions compatible endpoint."""

    kind = "http"

    def __init__(
        self,
        config: TeacherConfig,
        api_key: str | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not config.endpoint_url:
            raise ValueError("http teacher needs endpoint_url")
        self.config = config
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.client = client or httpx.Client(timeout=config.timeout)
        self.sleep = sleep
        self.retries = 0
        self._slots = threading.BoundedSemaphore(max(1, config.n_parallel))

    @property
    def url(self) -> str:
        base = self.config.endpoint_url.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"

    def body(self, system_msg: str, env_msg: str) -> dict[str, Any]:
        return {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": system_msg},
                {"role": "user", "content": env_msg},
            ],
            "temperature": self.config.temperature,
        }

    def ask(self, system_msg: str, env_msg: str, world: WorldState | None = None) -> str:
        if not self.api_key:
            raise AuthError(f"no API key in ${API_KEY_ENV}")
        payload = self.body(system_msg, env_msg)
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last: TeacherError | None = None
        with self._slots:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    delay = BACKOFF_BASE * BACKOFF_FACTOR ** (attempt - 1)
                    self.retries += 1
                    log.warning("teacher retry %d/%d in %.1fs: %s", attempt, self.config.max_retries, delay, last)
                    self.sleep(delay)
                try:
                    resp = self.client.post(self.url, json=payload, headers=headers, timeout=self.config.timeout)
                except httpx.TimeoutException as e:
                    last = TransportError(f"timeout: {e}")
                    continue
                except httpx.HTTPError as e:
                    last = TransportError(f"transport failure: {e}")
                    continue
                if resp.status_code in (401, 403):
                    raise AuthError(f"endpoint rejected credentials ({resp.status_code})")
                if resp.status_code == 429:
                    last = RateLimited("rate limited (429)")
                    continue
                if resp.status_code >= 500:
                    last = TransportError(f"server error {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise TransportError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
                try:
                    content = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as e:
                    raise TransportError(f"malformed completion payload: {e}") from e
                if not content or not content.strip():
                    raise EmptyCompletion("completion had no content")
                return content
        assert last is not None
        raise last


class ReplayTeacher:
    """Returns recorded responses in order, checking the prompts match."""

    kind = "replay"

    def __init__(self, records: list[dict[str, Any]], strict: bool = True):
        self.records = records
        self.strict = strict
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path, strict: bool = True) -> ReplayTeacher:
        lines = Path(path).read_text("utf-8").splitlines()
        return cls([json.loads(x) for x in lines if x.strip()], strict)

    def ask(self, system_msg: str, env_msg: str, world: WorldState | None = None) -> str:
        if self.calls >= len(self.records):
            raise ReplayMismatch(f"transcript exhausted after {self.calls} responses")
        rec = self.records[self.calls]
        self.calls += 1
        if self.strict and "env_msg" in rec and rec["env_msg"] != env_msg:
            raise ReplayMismatch(f"environment message differs from transcript at call {self.calls}")
        return rec["response"]


def make_teacher(config: TeacherConfig, task=None, seed: int = 0):
    if config.kind == "oracle":
        from .explore import OracleTeacher

        if task is None:
            raise ValueError("oracle teacher needs the task")
        return OracleTeacher(task, temperature=config.temperature, seed=seed)
    if config.kind == "http":
        return HttpTeacher(config)
    return ReplayTeacher.from_file(config.transcript)


def teacher_ask(config: TeacherConfig, system_msg: str, env_msg: str,
                world: WorldState | None = None, task=None, seed: int = 0) -> str:
    return make_teacher(config, task, seed).ask(system_msg, env_msg, world)

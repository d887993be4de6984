"""Language-model backends behind one contract.

Every model interaction (decompose, generate, paraphrase, compress) goes
through :func:`ModelContract.complete`.  Three backends:

- :class:`ScriptedModel` — rule table loaded from a fixture file; first
  rule whose role and substring conditions match the prompt wins.  Fully
  deterministic; the whole test suite runs on it.
- :class:`ReplayModel` — plays back a recorded session in order, checking
  each request digest.
- :class:`RemoteModel` — chat-completion HTTP endpoint with timeout and
  retries (``MEMO_MODEL_URL`` / ``MEMO_MODEL_TOKEN``).

:class:`RecordingModel` wraps any backend and exports a replayable session.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import yaml

DIGEST_VERSION = "v1"


class ModelError(Exception):
    pass


class FixtureMissingError(ModelError):
    pass


class ReplayExhaustedError(ModelError):
    pass


class ReplayMismatchError(ModelError):
    pass


class RemoteTimeoutError(ModelError):
    pass


@dataclass(frozen=True)
class ModelRequest:
    role_tag: str  # decompose | generate | paraphrase | compress
    messages: tuple  # of (speaker, text)
    budget: int = 8000

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a model request needs at least one message")

    def prompt_text(self) -> str:
        return "\n".join(text for _speaker, text in self.messages)


@dataclass(frozen=True)
class ModelResponse:
    text: str
    backend_id: str
    latency: float = 0.0
    truncated: bool = False


class ModelContract(Protocol):
    def complete(self, req: ModelRequest) -> ModelResponse: ...


def request_digest(req: ModelRequest) -> str:
    """Stable across platforms: whitespace-normalized, versioned hashing."""
    parts = [req.role_tag]
    for speaker, text in req.messages:
        parts.append(speaker)
        parts.append(re.sub(r"\s+", " ", text).strip())
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()
    return f"{DIGEST_VERSION}:{h}"


def _finish(text: str, backend_id: str, budget: int) -> ModelResponse:
    if len(text) > budget:
        return ModelResponse(text[:budget], backend_id, truncated=True)
    return ModelResponse(text, backend_id)


# ---------------------------------------------------------------------------
# Scripted backend


@dataclass(frozen=True)
class ScriptRule:
    role: str
    contains: tuple = ()
    not_contains: tuple = ()
    response: str = ""

    def matches(self, req: ModelRequest) -> bool:
        if self.role != req.role_tag:
            return False
        prompt = req.prompt_text()
        return all(s in prompt for s in self.contains) and not any(
            s in prompt for s in self.not_contains
        )


class ScriptedModel:
    """Deterministic fixture lookup.  Raises :class:`FixtureMissingError`
    when no rule matches, so missing coverage fails loudly."""

    backend_id = "scripted"

    def __init__(self, rules: Sequence[ScriptRule]):
        self.rules = list(rules)

    @classmethod
    def from_file(cls, path) -> "ScriptedModel":
        data = yaml.safe_load(Path(path).read_text())
        return cls(cls._parse_rules(data))

    @classmethod
    def from_files(cls, paths) -> "ScriptedModel":
        rules = []
        for path in paths:
            rules.extend(cls._parse_rules(yaml.safe_load(Path(path).read_text())))
        return cls(rules)

    @staticmethod
    def _parse_rules(data) -> list:
        rules = []
        for item in data.get("rules", []):
            response = item["response"]
            if not isinstance(response, str):
                response = json.dumps(response)
            rules.append(
                ScriptRule(
                    role=item["role"],
                    contains=tuple(item.get("contains", [])),
                    not_contains=tuple(item.get("not_contains", [])),
                    response=response,
                )
            )
        return rules

    def complete(self, req: ModelRequest) -> ModelResponse:
        for rule in self.rules:
            if rule.matches(req):
                return _finish(rule.response, self.backend_id, req.budget)
        raise FixtureMissingError(
            f"no scripted fixture for role={req.role_tag!r}; "
            f"prompt starts: {req.prompt_text()[:160]!r}"
        )


# ---------------------------------------------------------------------------
# Recording and replay


class RecordingModel:
    """Wraps any backend, persisting (digest, response) pairs in order."""

    def __init__(self, inner):
        self.inner = inner
        self.backend_id = f"recording({getattr(inner, 'backend_id', '?')})"
        self._records: list = []
        self._lock = threading.Lock()

    def complete(self, req: ModelRequest) -> ModelResponse:
        resp = self.inner.complete(req)
        with self._lock:
            self._records.append(
                {"digest": request_digest(req), "role": req.role_tag, "response": resp.text}
            )
        return resp

    @property
    def records(self) -> list:
        return list(self._records)

    def export(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as f:
            for rec in self._records:
                f.write(json.dumps(rec) + "\n")


class ReplayModel:
    """Serves a recorded session back in order, verifying digests."""

    backend_id = "replay"

    def __init__(self, records: Sequence[dict]):
        self._records = list(records)
        self._pos = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "ReplayModel":
        records = [
            json.loads(line)
            for line in Path(path).read_text().splitlines()
            if line.strip()
        ]
        return cls(records)

    def complete(self, req: ModelRequest) -> ModelResponse:
        with self._lock:
            if self._pos >= len(self._records):
                raise ReplayExhaustedError(
                    f"replay exhausted after {len(self._records)} responses"
                )
            rec = self._records[self._pos]
            digest = request_digest(req)
            if rec["digest"] != digest:
                raise ReplayMismatchError(
                    f"request {self._pos} digest {digest} does not match "
                    f"recorded {rec['digest']} (role={req.role_tag})"
                )
            self._pos += 1
        return _finish(rec["response"], self.backend_id, req.budget)


# ---------------------------------------------------------------------------
# Remote backend


class RemoteModel:
    """Chat-completion JSON over HTTP: POST {messages: [{role, content}]}
    -> {text: ...}.  Retries on timeout, then surfaces the error so the
    caller's fallback path can take over."""

    def __init__(
        self,
        url: Optional[str] = None,
        token: Optional[str] = None,
        timeout: float = 30.0,
        retries: int = 2,
        client=None,
    ):
        import httpx

        self.url = url or os.environ.get("MEMO_MODEL_URL", "")
        if not self.url:
            raise ModelError("no model URL configured (set MEMO_MODEL_URL)")
        self.token = token or os.environ.get("MEMO_MODEL_TOKEN", "")
        self.timeout = timeout
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout)
        self.backend_id = f"remote:{self.url}"

    def complete(self, req: ModelRequest) -> ModelResponse:
        import httpx

        payload = {
            "messages": [{"role": speaker, "content": text} for speaker, text in req.messages],
        }
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last_exc = None
        for _attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=payload, headers=headers)
                resp.raise_for_status()
                return _finish(resp.json()["text"], self.backend_id, req.budget)
            except httpx.TimeoutException as exc:
                last_exc = exc
            except Exception as exc:  # noqa: BLE001
                raise ModelError(f"model request failed: {exc}") from exc
        raise RemoteTimeoutError(
            f"model request timed out after {self.retries + 1} attempts"
        ) from last_exc

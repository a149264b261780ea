"""Pluggable model backend with deterministic record/replay.

A backend maps a ModelRequest to a single ModelTurn (either a tool call or
final text). The replay backend serves recorded turns from a cassette keyed
by a stable request fingerprint; an unrecorded fingerprint is an error,
never an improvisation. A live HTTP adapter (chat-with-tools wire format)
sits behind the same contract and is configured purely via environment
variables, so nothing in the pipeline knows which kind it talks to.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    BackendUnavailable,
    BudgetExceeded,
    CassetteMiss,
    InvalidArgument,
    StorageError,
)

TOOL_CALL = "tool_call"
FINAL_TEXT = "final_text"

# injected digests carry timestamps; strip them so re-runs replay cleanly
_ISO_TS_RE = re.compile(
    r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:Z|[+-]\d{2}:\d{2})?"
)
_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class Budget:
    max_turns: int = 12
    max_tool_calls: int = 24

    def __post_init__(self):
        if self.max_turns < 0 or self.max_tool_calls < 0:
            raise InvalidArgument("budget values must be non-negative")


@dataclass(frozen=True)
class ModelTurn:
    kind: str
    tool_name: str | None = None
    arguments: dict | None = None
    text: str | None = None

    def __post_init__(self):
        if self.kind == TOOL_CALL:
            if not self.tool_name or self.arguments is None or self.text is not None:
                raise InvalidArgument("tool_call turn needs tool_name+arguments only")
        elif self.kind == FINAL_TEXT:
            if self.text is None or self.tool_name or self.arguments is not None:
                raise InvalidArgument("final_text turn needs text only")
        else:
            raise InvalidArgument(f"unknown turn kind {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == TOOL_CALL:
            return {"kind": self.kind, "tool_name": self.tool_name, "arguments": self.arguments}
        return {"kind": self.kind, "text": self.text}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelTurn":
        return cls(
            kind=data["kind"],
            tool_name=data.get("tool_name"),
            arguments=data.get("arguments"),
            text=data.get("text"),
        )


@dataclass(frozen=True)
class ModelRequest:
    prompt: str
    tool_schemas: tuple = ()
    conversation: tuple = ()
    budget: Budget = field(default_factory=Budget)
    turn_index: int = 0

    def __post_init__(self):
        names = [schema.name for schema in self.tool_schemas]
        if len(names) != len(set(names)):
            raise InvalidArgument("tool schema names must be unique")


def normalize_prompt(text: str) -> str:
    return _WS_RE.sub(" ", _ISO_TS_RE.sub("<ts>", text)).strip()


def fingerprint(request: ModelRequest) -> str:
    key = json.dumps(
        [
            normalize_prompt(request.prompt),
            sorted(schema.name for schema in request.tool_schemas),
            request.turn_index,
        ],
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


def _check_budget(request: ModelRequest) -> None:
    if request.budget.max_turns <= 0:
        raise BudgetExceeded(
            "model turn budget exhausted", max_turns=request.budget.max_turns
        )


class Cassette:
    """Recorded turns keyed by request fingerprint. File format: JSON lines."""

    def __init__(self, entries: dict[str, ModelTurn] | None = None):
        self.entries: dict[str, ModelTurn] = dict(entries or {})

    @classmethod
    def load(cls, path: Path | str) -> "Cassette":
        path = Path(path)
        entries: dict[str, ModelTurn] = {}
        if not path.is_file():
            raise StorageError(f"cassette not found: {path}")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                turn = ModelTurn.from_dict(row["turn"])
                fp = row["fingerprint"]
            except (json.JSONDecodeError, KeyError, TypeError, InvalidArgument) as exc:
                raise StorageError(f"cassette {path} line {lineno}: {exc}") from None
            if fp in entries and entries[fp] != turn:
                raise StorageError(
                    f"cassette {path} line {lineno}: conflicting turns for one fingerprint"
                )
            entries[fp] = turn
        return cls(entries)

    def lookup(self, fp: str) -> ModelTurn | None:
        return self.entries.get(fp)


class ReplayBackend:
    def __init__(self, cassette: Cassette):
        self.cassette = cassette

    def complete(self, request: ModelRequest) -> ModelTurn:
        _check_budget(request)
        fp = fingerprint(request)
        turn = self.cassette.lookup(fp)
        if turn is None:
            raise CassetteMiss(
                f"no recorded turn for fingerprint {fp} (turn {request.turn_index})",
                fingerprint=fp,
                turn_index=request.turn_index,
            )
        return turn


class RecordingBackend:
    """Wraps a live backend and persists every turn for later replay."""

    def __init__(self, inner, cassette_path: Path | str):
        self.inner = inner
        self.path = Path(cassette_path)
        self._seen: dict[str, ModelTurn] = {}
        if self.path.is_file():
            self._seen = Cassette.load(self.path).entries
        else:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.touch()
            except OSError as exc:
                raise StorageError(f"cassette path not writable: {exc}") from exc

    def complete(self, request: ModelRequest) -> ModelTurn:
        turn = self.inner.complete(request)
        fp = fingerprint(request)
        prior = self._seen.get(fp)
        if prior is not None:
            if prior != turn:
                raise StorageError(
                    f"non-deterministic backend: fingerprint {fp} produced two different turns"
                )
            return turn
        row = {"fingerprint": fp, "turn_index": request.turn_index, "turn": turn.to_dict()}
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
        except OSError as exc:
            raise StorageError(f"cassette append failed: {exc}") from exc
        self._seen[fp] = turn
        return turn


def record_mode(live_backend, cassette_path: Path | str) -> RecordingBackend:
    return RecordingBackend(live_backend, cassette_path)


ENV_API_BASE = "TSADRAFT_API_BASE"
ENV_API_KEY = "TSADRAFT_API_KEY"
ENV_MODEL = "TSADRAFT_MODEL"


class HttpBackend:
    """Chat-with-tools adapter for an OpenAI-compatible HTTP endpoint.

    Endpoint and credentials come from TSADRAFT_API_BASE / TSADRAFT_API_KEY /
    TSADRAFT_MODEL. Decoding is pinned to temperature 0 so providers that
    honor it behave deterministically.
    """

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 model: str | None = None, timeout: float = 60.0):
        self.base_url = (base_url or os.environ.get(ENV_API_BASE, "")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.timeout = timeout
        if not self.base_url or not self.model:
            raise BackendUnavailable(
                f"live backend needs {ENV_API_BASE} and {ENV_MODEL} set"
            )

    def _messages(self, request: ModelRequest) -> list[dict]:
        messages = [{"role": "user", "content": request.prompt}]
        for entry in request.conversation:
            if entry.get("kind") == TOOL_CALL:
                messages.append(
                    {
                        "role": "assistant",
                        "content": None,
                        "tool_calls": [
                            {
                                "id": entry.get("call_id", "call-0"),
                                "type": "function",
                                "function": {
                                    "name": entry["tool_name"],
                                    "arguments": json.dumps(entry["arguments"]),
                                },
                            }
                        ],
                    }
                )
            elif entry.get("kind") == "tool_result":
                messages.append(
                    {
                        "role": "tool",
                        "tool_call_id": entry.get("call_id", "call-0"),
                        "content": json.dumps(entry["content"], ensure_ascii=False),
                    }
                )
        return messages

    def _tools(self, request: ModelRequest) -> list[dict]:
        tools = []
        for schema in request.tool_schemas:
            tools.append(
                {
                    "type": "function",
                    "function": {
                        "name": schema.name,
                        "description": schema.description,
                        "parameters": schema.json_parameters(),
                    },
                }
            )
        return tools

    def complete(self, request: ModelRequest) -> ModelTurn:
        import httpx

        _check_budget(request)
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": self._messages(request),
        }
        tools = self._tools(request)
        if tools:
            body["tools"] = tools
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = httpx.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            payload = response.json()
        except httpx.HTTPStatusError as exc:
            raise BackendUnavailable(
                f"provider returned HTTP {exc.response.status_code}",
                status=exc.response.status_code,
                retryable=exc.response.status_code in (429, 500, 502, 503),
            ) from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"provider transport failure: {exc}", retryable=True) from exc
        try:
            message = payload["choices"][0]["message"]
        except (KeyError, IndexError, TypeError):
            raise BackendUnavailable("malformed provider response") from None
        calls = message.get("tool_calls") or []
        if calls:
            fn = calls[0]["function"]
            try:
                arguments = json.loads(fn.get("arguments") or "{}")
            except json.JSONDecodeError:
                arguments = {}
            return ModelTurn(kind=TOOL_CALL, tool_name=fn["name"], arguments=arguments)
        return ModelTurn(kind=FINAL_TEXT, text=message.get("content") or "")


def consume_turn(request: ModelRequest) -> ModelRequest:
    """Next-turn request skeleton: budget decremented, index advanced."""
    return replace(
        request,
        budget=Budget(request.budget.max_turns - 1, request.budget.max_tool_calls),
        turn_index=request.turn_index + 1,
    )

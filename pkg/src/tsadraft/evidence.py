"""Persistent tool memory: provenance-tagged evidence with full CRUD.

Every tool result is recorded here with immutable provenance and a
session-scoped numeric id. Persistence is an append-only journal of store
events (length-prefixed JSON) plus optional checkpoint snapshots; deletes
are soft, so citation audits keep working after evidence is retired.

Journal framing: ``<decimal byte length>\\n<json bytes>\\n``. A record is
committed once fully written and flushed; a truncated tail (crash) is
detected on open and discarded, never treated as data.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import InvalidProvenance, NotFound, ProvenanceImmutable, StateCorrupt, StorageError

JOURNAL_NAME = "evidence.journal"
CHECKPOINT_NAME = "evidence.checkpoint.json"

_PROVENANCE_FIELDS = (
    "invoking_agent",
    "tool_name",
    "query",
    "pipeline_stage",
    "source_database",
    "retrieved_at",
)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_hash(payload: dict) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def payload_text(payload) -> str:
    """Flattened string content of a payload, for substring queries and
    sentence-level heuristics. Each piece is terminated as a sentence so
    one field's value never bleeds into the next."""
    parts: list[str] = []

    def walk(value):
        if isinstance(value, str):
            parts.append(value)
        elif isinstance(value, dict):
            for key in sorted(value):
                walk(value[key])
        elif isinstance(value, (list, tuple)):
            for item in value:
                walk(item)
        elif value is not None:
            parts.append(str(value))

    walk(payload)
    chunks = []
    for part in parts:
        part = part.strip()
        if part and part[-1] not in ".!?":
            part += "."
        if part:
            chunks.append(part)
    return " ".join(chunks)


def wall_clock_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Provenance:
    invoking_agent: str
    tool_name: str
    query: dict
    pipeline_stage: str
    source_database: str
    retrieved_at: str

    def __post_init__(self):
        for name in _PROVENANCE_FIELDS:
            value = getattr(self, name)
            if name == "query":
                if value is None:
                    raise InvalidProvenance("provenance query must be present")
                continue
            if not value:
                raise InvalidProvenance(f"provenance field {name!r} must be non-empty")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in _PROVENANCE_FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> "Provenance":
        return cls(**{name: data[name] for name in _PROVENANCE_FIELDS})


@dataclass(frozen=True)
class EvidenceRecord:
    id: int
    global_id: str
    provenance: Provenance
    payload: dict
    content_hash: str
    created_at: str
    invalidated: bool = False
    invalidated_reason: str | None = None
    revision: int = 1
    prior_hashes: tuple[tuple[int, str], ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "global_id": self.global_id,
            "provenance": self.provenance.to_dict(),
            "payload": self.payload,
            "content_hash": self.content_hash,
            "created_at": self.created_at,
            "invalidated": self.invalidated,
            "invalidated_reason": self.invalidated_reason,
            "revision": self.revision,
            "prior_hashes": [list(p) for p in self.prior_hashes],
        }


class EvidenceStore:
    """Single-writer, multi-reader evidence store for one assessment.

    Writes are serialized internally; readers observe only fully committed
    records (the in-memory view is updated after the journal append).
    """

    def __init__(
        self,
        directory: Path | str,
        assessment_id: str,
        clock=None,
        sync: bool = True,
        checkpoint_every: int = 0,
    ):
        self.directory = Path(directory)
        self.assessment_id = assessment_id
        self._clock = clock or wall_clock_now
        self._sync = sync
        self._checkpoint_every = checkpoint_every
        self._lock = threading.Lock()
        self._records: dict[int, EvidenceRecord] = {}
        self._next_id = 1
        self._events_since_checkpoint = 0
        self._closed = False
        self.directory.mkdir(parents=True, exist_ok=True)
        self._journal_path = self.directory / JOURNAL_NAME
        self._recover()
        self._fh = open(self._journal_path, "ab")

    # -- recovery / replay ------------------------------------------------

    def _recover(self) -> None:
        start_offset = 0
        checkpoint_path = self.directory / CHECKPOINT_NAME
        if checkpoint_path.is_file():
            snap = json.loads(checkpoint_path.read_text(encoding="utf-8"))
            for rec in snap["records"]:
                self._records[rec["id"]] = EvidenceRecord(
                    id=rec["id"],
                    global_id=rec["global_id"],
                    provenance=Provenance.from_dict(rec["provenance"]),
                    payload=rec["payload"],
                    content_hash=rec["content_hash"],
                    created_at=rec["created_at"],
                    invalidated=rec["invalidated"],
                    invalidated_reason=rec.get("invalidated_reason"),
                    revision=rec["revision"],
                    prior_hashes=tuple(tuple(p) for p in rec.get("prior_hashes", [])),
                )
            self._next_id = snap["next_id"]
            start_offset = snap["journal_offset"]
        if not self._journal_path.exists():
            self._journal_path.touch()
            return
        full = self._journal_path.read_bytes()
        if start_offset > len(full):
            raise StateCorrupt(
                f"checkpoint offset {start_offset} beyond journal size {len(full)}"
            )
        events, rel_offset, partial = _parse_bytes(
            full[start_offset:], self._journal_path, start_offset
        )
        for event in events:
            self._apply(event)
        if partial:
            # crash artifact: drop the unacknowledged tail
            good = start_offset + rel_offset
            with open(self._journal_path, "r+b") as fh:
                fh.truncate(good)

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "put":
            rec = EvidenceRecord(
                id=event["id"],
                global_id=f"{self.assessment_id}:{event['id']}",
                provenance=Provenance.from_dict(event["provenance"]),
                payload=event["payload"],
                content_hash=event["content_hash"],
                created_at=event["created_at"],
            )
            self._records[rec.id] = rec
            self._next_id = max(self._next_id, rec.id + 1)
        elif kind == "update":
            old = self._records[event["id"]]
            self._records[event["id"]] = EvidenceRecord(
                id=old.id,
                global_id=old.global_id,
                provenance=old.provenance,
                payload=event["payload"],
                content_hash=event["content_hash"],
                created_at=old.created_at,
                invalidated=old.invalidated,
                invalidated_reason=old.invalidated_reason,
                revision=event["revision"],
                prior_hashes=old.prior_hashes + ((old.revision, old.content_hash),),
            )
        elif kind == "invalidate":
            old = self._records[event["id"]]
            self._records[event["id"]] = EvidenceRecord(
                id=old.id,
                global_id=old.global_id,
                provenance=old.provenance,
                payload=old.payload,
                content_hash=old.content_hash,
                created_at=old.created_at,
                invalidated=True,
                invalidated_reason=event.get("reason"),
                revision=old.revision,
                prior_hashes=old.prior_hashes,
            )
        else:
            raise StateCorrupt(f"unknown journal event kind {kind!r}")

    def _append(self, event: dict) -> None:
        if self._closed:
            raise StorageError("store is closed")
        body = canonical_json(event).encode("utf-8")
        frame = str(len(body)).encode("ascii") + b"\n" + body + b"\n"
        try:
            self._fh.write(frame)
            self._fh.flush()
            if self._sync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise StorageError(f"journal append failed: {exc}") from exc
        self._events_since_checkpoint += 1
        if self._checkpoint_every and self._events_since_checkpoint >= self._checkpoint_every:
            self.checkpoint()

    # -- CRUD --------------------------------------------------------------

    def put(self, provenance: Provenance, payload: dict) -> EvidenceRecord:
        with self._lock:
            rid = self._next_id
            event = {
                "event": "put",
                "id": rid,
                "provenance": provenance.to_dict(),
                "payload": payload,
                "content_hash": content_hash(payload),
                "created_at": self._clock(),
            }
            self._append(event)
            self._apply(event)
            return self.get(rid)

    def get(self, record_id: int) -> EvidenceRecord:
        rec = self._records.get(record_id)
        if rec is None:
            raise NotFound(f"no evidence record with id {record_id}")
        return copy.deepcopy(rec)

    def update(self, record_id: int, payload_patch: dict) -> EvidenceRecord:
        if "provenance" in payload_patch or any(
            key in _PROVENANCE_FIELDS for key in payload_patch
        ):
            raise ProvenanceImmutable(
                "updates may touch the payload only; provenance is immutable"
            )
        with self._lock:
            old = self._records.get(record_id)
            if old is None:
                raise NotFound(f"no evidence record with id {record_id}")
            new_payload = dict(old.payload)
            new_payload.update(copy.deepcopy(payload_patch))
            event = {
                "event": "update",
                "id": record_id,
                "payload": new_payload,
                "content_hash": content_hash(new_payload),
                "revision": old.revision + 1,
            }
            self._append(event)
            self._apply(event)
            return self.get(record_id)

    def invalidate(self, record_id: int, reason: str) -> EvidenceRecord:
        with self._lock:
            old = self._records.get(record_id)
            if old is None:
                raise NotFound(f"no evidence record with id {record_id}")
            if not old.invalidated:
                event = {"event": "invalidate", "id": record_id, "reason": reason}
                self._append(event)
                self._apply(event)
            return self.get(record_id)

    def query(self, filter: dict | None = None) -> list[EvidenceRecord]:
        filter = filter or {}
        text = filter.get("text")
        needle = text.lower() if text else None
        out = []
        for rid in sorted(self._records):
            rec = self._records[rid]
            if filter.get("tool_name") and rec.provenance.tool_name != filter["tool_name"]:
                continue
            if (
                filter.get("invoking_agent")
                and rec.provenance.invoking_agent != filter["invoking_agent"]
            ):
                continue
            if (
                filter.get("pipeline_stage")
                and rec.provenance.pipeline_stage != filter["pipeline_stage"]
            ):
                continue
            if needle and needle not in payload_text(rec.payload).lower():
                continue
            out.append(copy.deepcopy(rec))
        return out

    # -- misc ----------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def max_id(self) -> int:
        return self._next_id - 1

    def journal_position(self) -> int:
        self._fh.flush()
        return self._fh.tell()

    def checkpoint(self) -> None:
        snap = {
            "assessment_id": self.assessment_id,
            "next_id": self._next_id,
            "journal_offset": self.journal_position(),
            "records": [self._records[rid].to_dict() for rid in sorted(self._records)],
        }
        target = self.directory / CHECKPOINT_NAME
        tmp = target.with_suffix(".tmp")
        tmp.write_text(json.dumps(snap, indent=1), encoding="utf-8")
        os.replace(tmp, target)
        self._events_since_checkpoint = 0

    def as_tool_descriptor(self):
        """Expose lookup-by-id as a tool so agents can query memory mid-run."""
        from .gateway import ToolParam, ToolSchema

        return ToolSchema(
            name="evidence_lookup",
            description=(
                "Look up a previously retrieved evidence record by its numeric id; "
                "returns the stored payload and full provenance."
            ),
            parameters=(ToolParam("id", "integer", "numeric evidence id", required=True),),
            domain_tags=("all",),
        )

    def lookup_tool_result(self, record_id: int) -> dict:
        """Structured result for the evidence_lookup tool (not-found safe)."""
        try:
            rec = self.get(int(record_id))
        except (NotFound, ValueError, TypeError):
            return {"found": False, "error": "not-found", "id": record_id}
        return {
            "found": True,
            "id": rec.id,
            "global_id": rec.global_id,
            "payload": rec.payload,
            "provenance": rec.provenance.to_dict(),
            "invalidated": rec.invalidated,
            "revision": rec.revision,
        }

    def close(self) -> None:
        if not self._closed:
            self._fh.close()
            self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_bytes(data: bytes, path: Path, base_offset: int) -> tuple[list[dict], int, bool]:
    events: list[dict] = []
    offset = 0
    size = len(data)
    while offset < size:
        newline = data.find(b"\n", offset)
        if newline == -1:
            return events, offset, True
        length_bytes = data[offset:newline]
        if not length_bytes.isdigit():
            raise StateCorrupt(
                f"journal {path} corrupt at offset {base_offset + offset}: bad length prefix"
            )
        length = int(length_bytes)
        body_start = newline + 1
        body_end = body_start + length
        if body_end + 1 > size:
            return events, offset, True
        if data[body_end : body_end + 1] != b"\n":
            raise StateCorrupt(
                f"journal {path} corrupt at offset {base_offset + offset}: missing terminator"
            )
        try:
            events.append(json.loads(data[body_start:body_end].decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise StateCorrupt(
                f"journal {path} corrupt at offset {base_offset + offset}: {exc}"
            ) from None
        offset = body_end + 1
    return events, offset, False

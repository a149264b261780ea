"""Human-in-the-loop review: section edits, appends, document uploads, and
targeted agent reinvocation, with conversational memory across iterations
and deterministic preference mining.

Every action's result passes through the same post-execution hooks as
pipeline output, so there is no unvalidated path into the report. Staleness
is flagged, never auto-regenerated: downstream sections keep rendering
until a human decides to refresh them.
"""

from __future__ import annotations

import csv
import io
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

from .domain import Domain, Producer, SectionDraft, SectionStatus
from .errors import (
    InvalidArgument,
    NotFound,
    SectionFailed,
    SequentialViolation,
    StorageError,
    TsaError,
    UnsupportedMedia,
)
from .evidence import EvidenceStore, Provenance, wall_clock_now
from .gateway import ToolGateway
from .grounding import SectionVerification, extract_claims, verify_section
from .hooks import BLOCK, HookContext, PipelineLock, load_denylist
from .hooks import post_execute as run_post_hooks
from .hooks import pre_execute as run_pre_hooks
from .memory import DependencyGraph, load_digests
from .orchestrator import (
    COMPLETED,
    INTERRUPTED,
    MEMORY_LOG,
    RUNNING,
    SECTIONS_DIR,
    Assessment,
    _agent_loop,
    _make_clock,
    _plan_from_snapshot,
    _Transcript,
    acquire_lease,
    release_lease,
)
from .config import build_registry

EDIT = "edit"
APPEND = "append"
UPLOAD = "upload"
REINVOKE = "reinvoke"

_KINDS = (EDIT, APPEND, UPLOAD, REINVOKE)


@dataclass(frozen=True)
class RefinementAction:
    kind: str
    section_id: str
    payload: object
    actor: str = "reviewer"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidArgument(f"unknown refinement action kind {self.kind!r}")
        if self.payload in (None, ""):
            raise InvalidArgument("refinement payload must be non-empty")
        Domain(self.section_id)


class ConversationMemory:
    """Append-only turn log, one JSON object per line."""

    def __init__(self, path: Path):
        self.path = path

    def record(self, actor: str, summary: str) -> dict:
        turn = {"actor": actor, "summary": summary, "ts": wall_clock_now()}
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(turn, ensure_ascii=False) + "\n")
        return turn

    def turns(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                out.append(json.loads(line))
        return out

    def digest(self, limit: int = 10) -> str:
        turns = self.turns()[-limit:]
        if not turns:
            return ""
        lines = ["Conversation memory:"]
        lines.extend(f"- {t['actor']}: {t['summary']}" for t in turns)
        return "\n".join(lines)


@dataclass(frozen=True)
class PreferenceDelta:
    directives: dict
    evidence: tuple[int, ...]
    status: str = "proposed"

    def to_dict(self) -> dict:
        return {
            "directives": dict(self.directives),
            "evidence": list(self.evidence),
            "status": self.status,
        }


@dataclass
class ApplyResult:
    section: SectionDraft | None
    verification: SectionVerification | None
    evidence_ids: list[int] = field(default_factory=list)
    stale: dict = field(default_factory=dict)


def _ensure_actionable(assessment: Assessment, action: RefinementAction) -> None:
    state = assessment.state
    if state.status == RUNNING:
        raise SequentialViolation(
            "pipeline is running; refinement must wait for it to finish"
        )
    if state.status == INTERRUPTED:
        failed_at = (state.failure or {}).get("section") or state.current
        if failed_at and action.section_id != failed_at and action.kind != UPLOAD:
            raise SequentialViolation(
                f"pipeline is interrupted at section {failed_at!r}; only that"
                " section accepts refinement now"
            )


def apply(directory: Path | str, action: RefinementAction, backend,
          judge=None) -> ApplyResult:
    assessment = Assessment.open(directory)
    _ensure_actionable(assessment, action)
    token = acquire_lease(assessment.directory)
    plan_ = _plan_from_snapshot(assessment)
    clock = _make_clock(plan_.config, assessment.state.clock)
    memory = ConversationMemory(assessment.directory / MEMORY_LOG)
    store = EvidenceStore(assessment.directory, plan_.assessment_id, clock=clock.now)
    try:
        if action.kind == UPLOAD:
            result = _apply_upload(assessment, action, store, memory, clock)
        elif action.kind == REINVOKE:
            result = _apply_reinvoke(
                assessment, action, plan_, store, backend, judge, clock, memory
            )
        else:
            result = _apply_text_change(
                assessment, action, plan_, store, backend, judge, clock, memory
            )
        result.stale = staleness(assessment.state.section_meta, plan_.graph)
        return result
    finally:
        store.close()
        release_lease(assessment.directory, token)


def _hook_context(assessment, plan_, domain, store, backend, judge,
                  composed=None, user_text="") -> HookContext:
    from .orchestrator import _compose_for

    if composed is None:
        composed, user_text = _compose_for(plan_, plan_.skills[domain])
    compression = plan_.config.get("compression") or {}
    denylist_path = plan_.config.get("denylist")
    denylist = (
        load_denylist(denylist_path)
        if denylist_path and Path(denylist_path).exists()
        else ()
    )
    return HookContext(
        section_id=domain,
        composed_prompt=composed,
        workspace_root=assessment.directory,
        store=store,
        digests=load_digests(assessment.digests_dir),
        graph=plan_.graph,
        skill=plan_.skills[domain],
        lock=PipelineLock(),
        compression_backend=backend,
        user_text=user_text,
        output_path=f"{SECTIONS_DIR}/{domain}.json",
        denylist=denylist,
        tau=plan_.config.get("tau", 0.5),
        judge=judge,
        compression_ratio=compression.get("ratio", 0.4),
        compression_floor=compression.get("floor_tokens", 200),
        digest_dir=assessment.digests_dir,
    )


def _finalize(assessment, plan_, domain, draft, ctx, clock, started,
              action, memory_note) -> ApplyResult:
    from .orchestrator import _checkpoint

    ctx.checkpoint = lambda: _checkpoint(
        assessment, plan_, domain, draft, ctx, clock, started
    )
    outcome = run_post_hooks(draft, ctx)
    assessment.emit_hook("post", domain, outcome)
    if outcome.verdict == BLOCK:
        violation = outcome.violations[0]
        raise SectionFailed(
            f"refinement of section {domain} rejected: {violation.message}",
            cause_code=violation.code,
            section=domain,
        )
    assessment.emit(
        "refinement_applied",
        section=domain,
        action=action.kind,
        actor=action.actor,
        revision=draft.revision,
        wall_seconds=round(time.monotonic() - started, 3),
    )
    assessment.save_state()
    ConversationMemory(assessment.directory / MEMORY_LOG).record(
        action.actor, memory_note
    )
    return ApplyResult(section=draft, verification=outcome.verification)


def _apply_text_change(assessment, action, plan_, store, backend, judge,
                       clock, memory) -> ApplyResult:
    started = time.monotonic()
    domain = action.section_id
    old = assessment.read_section(domain)
    text = str(action.payload)
    if action.kind == EDIT:
        if text == old.body:
            verification = verify_section(
                old, store, judge=judge, tau=plan_.config.get("tau", 0.5)
            )
            return ApplyResult(section=old, verification=verification)
        new_body = text
        note = f"edited section {domain}"
    else:
        new_body = old.body.rstrip("\n") + "\n\n" + text
        note = f"appended to section {domain}"
    draft = old.advance(
        SectionStatus.USER_EDITED,
        body=new_body,
        claims=tuple(extract_claims(new_body)),
        revision=old.revision + 1,
        produced_by=Producer.HUMAN,
    )
    ctx = _hook_context(assessment, plan_, domain, store, backend, judge)
    return _finalize(
        assessment, plan_, domain, draft, ctx, clock, started, action, note
    )


def _apply_reinvoke(assessment, action, plan_, store, backend, judge, clock,
                    memory) -> ApplyResult:
    started = time.monotonic()
    domain = action.section_id
    old = assessment.read_section(domain)
    instruction = str(action.payload)
    from .orchestrator import _compose_for

    composed, user_text = _compose_for(plan_, plan_.skills[domain])
    extra_parts = []
    memory_digest = memory.digest()
    if memory_digest:
        extra_parts.append(memory_digest)
    extra_parts.append(f"Revision instruction: {instruction}")
    ctx = _hook_context(
        assessment, plan_, domain, store, backend, judge,
        composed=composed, user_text=user_text + "\n" + instruction,
    )
    gateway = ToolGateway(store, clock=clock.now)
    try:
        gateway.connect(build_registry(plan_.config))
        pre = run_pre_hooks(ctx)
        assessment.emit_hook("pre", domain, pre)
        if pre.verdict == BLOCK:
            violation = pre.violations[0]
            raise SectionFailed(
                f"reinvoke of section {domain} blocked: {violation.message}",
                cause_code=violation.code,
                section=domain,
            )
        revision = old.revision + 1
        transcript = _Transcript(assessment.transcript_path(domain, revision))
        try:
            body = _agent_loop(
                assessment, plan_, domain, ctx, backend, gateway, transcript,
                "\n".join(extra_parts),
            )
        except StorageError:
            raise
        except TsaError as exc:
            raise SectionFailed(
                f"reinvoke of section {domain} failed: {exc}",
                cause_code=exc.code,
                section=domain,
            )
        draft = old.advance(
            SectionStatus.REVISED,
            body=body,
            claims=tuple(extract_claims(body)),
            revision=revision,
            produced_by=Producer.AGENT,
        )
        return _finalize(
            assessment, plan_, domain, draft, ctx, clock, started, action,
            f"reinvoked section {domain}: {instruction}",
        )
    finally:
        ctx.lock.release(domain)
        gateway.close()


# -- uploads ------------------------------------------------------------------------

_TEXT_SUFFIXES = {".txt", ".md"}
_TABLE_SUFFIXES = {".csv", ".tsv"}


def ingest_document(filename: str, content: str) -> list[dict]:
    """Split an uploaded document into evidence payloads."""
    suffix = Path(filename).suffix.lower()
    if suffix in _TEXT_SUFFIXES:
        chunks = [p.strip() for p in re.split(r"\n\s*\n", content) if p.strip()]
        return [
            {"text": chunk, "source_document": filename, "chunk": i}
            for i, chunk in enumerate(chunks, start=1)
        ]
    if suffix in _TABLE_SUFFIXES:
        delimiter = "\t" if suffix == ".tsv" else ","
        reader = csv.DictReader(io.StringIO(content), delimiter=delimiter)
        rows = [
            {**{k: v for k, v in row.items() if k}, "source_document": filename}
            for row in reader
        ]
        if not rows:
            raise UnsupportedMedia(f"no rows found in tabular document {filename}")
        return rows
    if suffix == ".json":
        try:
            data = json.loads(content)
        except json.JSONDecodeError as exc:
            raise UnsupportedMedia(f"document {filename} is not valid JSON: {exc}")
        if isinstance(data, list) and all(isinstance(x, dict) for x in data):
            return [{**x, "source_document": filename} for x in data]
        if isinstance(data, dict):
            return [{**data, "source_document": filename}]
        raise UnsupportedMedia(
            f"JSON document {filename} must be an object or a list of objects"
        )
    raise UnsupportedMedia(
        f"unsupported document format {suffix or '(none)'};"
        " accepted: .txt .md .csv .tsv .json"
    )


def _apply_upload(assessment, action, store, memory, clock) -> ApplyResult:
    payload = action.payload
    if not isinstance(payload, dict) or "filename" not in payload:
        raise InvalidArgument("upload payload needs filename and content")
    filename = payload["filename"]
    content = payload.get("content", "")
    if isinstance(content, bytes):
        try:
            content = content.decode("utf-8")
        except UnicodeDecodeError:
            raise UnsupportedMedia(
                f"document {filename} is not UTF-8 text; binary formats are"
                " not accepted"
            )
    chunks = ingest_document(filename, content)
    ids = []
    for chunk in chunks:
        record = store.put(
            Provenance(
                invoking_agent="refinement",
                tool_name="document_upload",
                query={"filename": filename},
                pipeline_stage="refinement",
                source_database="user-upload",
                retrieved_at=clock.now(),
            ),
            chunk,
        )
        ids.append(record.id)
    state = assessment.state
    state.clock = clock.counter
    assessment.emit(
        "refinement_applied",
        section=action.section_id,
        action=UPLOAD,
        actor=action.actor,
        evidence_ids=ids,
    )
    assessment.save_state()
    memory.record(
        action.actor,
        f"uploaded {filename} ({len(ids)} evidence records)",
    )
    try:
        section = assessment.read_section(action.section_id)
    except NotFound:
        section = None
    return ApplyResult(section=section, verification=None, evidence_ids=ids)


# -- staleness ----------------------------------------------------------------------


def staleness(section_meta: dict, graph: DependencyGraph) -> dict:
    """A section is stale iff any transitive upstream revision is newer than
    the revision recorded when the section was generated."""
    flags: dict[str, bool] = {}
    for domain, meta in section_meta.items():
        stale = False
        for upstream, basis in (meta.get("upstream_revisions") or {}).items():
            live = section_meta.get(upstream, {}).get("revision", 0)
            if live > basis:
                stale = True
                break
        flags[domain] = stale
    return flags


# -- preference mining ---------------------------------------------------------------

# (regex, directive key, value builder); the first group feeds the value
PREFERENCE_PATTERNS = (
    (re.compile(r"\blimit sources to (\d+)\b", re.I),
     "retrieval.max_sources", int),
    (re.compile(r"\blimit .*? to (\d+) words\b", re.I),
     "length.max_words", int),
    (re.compile(r"\balways include (.+)$", re.I),
     "style.always_include", str),
    (re.compile(r"\bavoid (.+)$", re.I),
     "style.avoid", str),
)

DEFAULT_REPEAT_THRESHOLD = 3


def capture_preferences(memory: ConversationMemory,
                        k: int = DEFAULT_REPEAT_THRESHOLD) -> list[PreferenceDelta]:
    hits: dict[tuple, list[int]] = {}
    for index, turn in enumerate(memory.turns()):
        text = turn.get("summary", "")
        for pattern, key, builder in PREFERENCE_PATTERNS:
            m = pattern.search(text)
            if m:
                value = builder(m.group(1).strip())
                hits.setdefault((key, value), []).append(index)
    deltas = []
    for (key, value), indices in sorted(hits.items(), key=lambda kv: str(kv[0])):
        if len(indices) >= k:
            deltas.append(
                PreferenceDelta(
                    directives={key: value}, evidence=tuple(indices)
                )
            )
    return deltas


def accept_preference(delta: PreferenceDelta, preferences_root: Path | str,
                      actor: str) -> Path:
    """Persist an accepted delta; it becomes part of the actor's Layer-3
    defaults for subsequent assessments."""
    root = Path(preferences_root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{actor}.json"
    existing = {}
    if path.exists():
        existing = json.loads(path.read_text(encoding="utf-8"))
    existing.update(delta.directives)
    path.write_text(
        json.dumps(existing, indent=1, sort_keys=True, ensure_ascii=False),
        encoding="utf-8",
    )
    return path


def load_accepted(preferences_root: Path | str | None, actor: str) -> dict:
    if not preferences_root:
        return {}
    path = Path(preferences_root) / f"{actor}.json"
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))

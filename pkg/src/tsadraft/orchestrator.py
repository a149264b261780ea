"""Pipeline engine: plans the 8-section run, executes each section agent
inside hook wrappers under context isolation, checkpoints after every
section, and resumes interrupted assessments from the last completed one.

Assessment directory layout (stable, read by the evaluator and the UI):

    config.json              frozen plan snapshot
    state.json               ExecutionState, atomically rewritten
    state.journal            progress events, one JSON object per line
    hooks.trace.jsonl        hook outcomes, one JSON object per line
    evidence.journal         evidence store journal
    evidence.checkpoint.json evidence store snapshot
    digests/<domain>.json    compressed section memory
    sections/<domain>.json   latest SectionDraft per section
    transcripts/<domain>.r<revision>.jsonl   raw agent conversations
    report.md, report.json   final export (written on completion)
    memory.jsonl             refinement conversation memory
    lease.json               runner lease (pid)

``state.journal`` and ``hooks.trace.jsonl`` share one strictly increasing
``seq`` counter; the progress-event stream is exactly the merge of the two
files, nothing is invented at the API layer.
"""

from __future__ import annotations

import copy
import json
import os
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .backend import TOOL_CALL, Budget, ModelRequest
from .config import build_registry
from .domain import (
    Domain,
    Producer,
    Report,
    SectionDraft,
    SectionId,
    SectionStatus,
    TargetQuery,
    canonical_section_order,
    report_to_markdown,
)
from .errors import (
    BudgetExceeded,
    ConfigurationError,
    InvalidArgument,
    NotFound,
    SectionFailed,
    SequentialViolation,
    SkillNotFound,
    StateCorrupt,
    StorageError,
    TsaError,
)
from .evidence import EvidenceStore, wall_clock_now
from .gateway import ToolGateway
from .grounding import extract_claims
from .hooks import (
    BLOCK,
    PASS,
    HookContext,
    PipelineLock,
    load_denylist,
    post_execute,
    pre_execute,
    runtime_monitor,
    violation_note,
)
from .instructions import (
    DEFAULT_SYSTEM_PROMPT,
    SkillModule,
    compose,
    load_all_skills,
    system_layer,
    user_layer,
)
from .memory import DependencyGraph, load_digests, load_graph
from .numerics import CITATION_RE

STATE_FILE = "state.json"
STATE_JOURNAL = "state.journal"
HOOK_TRACE = "hooks.trace.jsonl"
CONFIG_SNAPSHOT = "config.json"
REPORT_MD = "report.md"
REPORT_JSON = "report.json"
LEASE_FILE = "lease.json"
SECTIONS_DIR = "sections"
DIGESTS_DIR = "digests"
TRANSCRIPTS_DIR = "transcripts"
MEMORY_LOG = "memory.jsonl"

# test hook: exit hard once N sections are checkpointed, simulating a crash
ENV_KILL_AFTER = "TSADRAFT_KILL_AFTER"

LOGICAL_EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)

RUNNING = "running"
INTERRUPTED = "interrupted"
COMPLETED = "completed"
FAILED = "failed"


class LogicalClock:
    """Deterministic timestamps: 1-second steps from a fixed epoch.

    The counter is persisted in the execution state at every checkpoint,
    so a resumed run mints exactly the timestamps the uninterrupted run
    would have minted.
    """

    def __init__(self, counter: int = 0):
        self.counter = counter

    def now(self) -> str:
        ts = LOGICAL_EPOCH + timedelta(seconds=self.counter)
        self.counter += 1
        return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


class WallClock:
    counter = 0

    def now(self) -> str:
        return wall_clock_now()


def _make_clock(config: dict, counter: int):
    if config.get("clock") == "logical":
        return LogicalClock(counter)
    return WallClock()


# -- plan ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelinePlan:
    assessment_id: str
    target: TargetQuery
    sections: tuple[str, ...]
    graph: DependencyGraph
    skills: dict[str, SkillModule]
    config: dict

    def to_dict(self) -> dict:
        return {
            "assessment_id": self.assessment_id,
            "target": self.target.to_dict(),
            "sections": list(self.sections),
            "graph": self.graph.to_dict(),
            "skills": {d: s.version for d, s in sorted(self.skills.items())},
            "config": self.config,
        }


def plan(target: TargetQuery, config: dict) -> PipelinePlan:
    skills_by_domain = load_all_skills(config["skills_root"])
    for domain in Domain:
        if domain not in skills_by_domain:
            raise SkillNotFound(f"no skill module for domain {domain.value}")
    graph = load_graph(config.get("graph"))
    assessment_id = config.get("assessment_id") or (
        f"tsa-{target.identifier.lower()}-{uuid.uuid4().hex[:8]}"
    )
    return PipelinePlan(
        assessment_id=assessment_id,
        target=target,
        sections=tuple(s.domain.value for s in canonical_section_order()),
        graph=graph,
        skills={d.value: s for d, s in skills_by_domain.items()},
        config=copy.deepcopy(config),
    )


# -- execution state ----------------------------------------------------------------


@dataclass
class ExecutionState:
    assessment_id: str
    target: TargetQuery
    status: str = RUNNING
    completed: list[str] = field(default_factory=list)
    current: str | None = None
    seq: int = 0
    clock: int = 0
    journal_position: int = 0
    created_at: str = ""
    updated_at: str = ""
    failure: dict | None = None
    section_meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "assessment_id": self.assessment_id,
            "target": self.target.to_dict(),
            "status": self.status,
            "completed": list(self.completed),
            "current": self.current,
            "seq": self.seq,
            "clock": self.clock,
            "journal_position": self.journal_position,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "failure": self.failure,
            "section_meta": self.section_meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutionState":
        return cls(
            assessment_id=data["assessment_id"],
            target=TargetQuery.from_dict(data["target"]),
            status=data["status"],
            completed=list(data["completed"]),
            current=data.get("current"),
            seq=data["seq"],
            clock=data["clock"],
            journal_position=data["journal_position"],
            created_at=data["created_at"],
            updated_at=data["updated_at"],
            failure=data.get("failure"),
            section_meta=data.get("section_meta", {}),
        )


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class Assessment:
    """Handle on one assessment directory."""

    def __init__(self, directory: Path | str):
        self.directory = Path(directory).resolve()
        self.state_path = self.directory / STATE_FILE
        self.journal_path = self.directory / STATE_JOURNAL
        self.trace_path = self.directory / HOOK_TRACE
        self.sections_dir = self.directory / SECTIONS_DIR
        self.digests_dir = self.directory / DIGESTS_DIR
        self.transcripts_dir = self.directory / TRANSCRIPTS_DIR
        self.state: ExecutionState | None = None
        self.config: dict = {}

    @classmethod
    def create(cls, directory: Path | str, plan_: PipelinePlan,
               created_at: str) -> "Assessment":
        assessment = cls(directory)
        if assessment.state_path.exists():
            raise InvalidArgument(
                f"assessment directory {assessment.directory} is already"
                " initialized; use resume"
            )
        assessment.directory.mkdir(parents=True, exist_ok=True)
        assessment.sections_dir.mkdir(exist_ok=True)
        assessment.digests_dir.mkdir(exist_ok=True)
        assessment.transcripts_dir.mkdir(exist_ok=True)
        _atomic_write(
            assessment.directory / CONFIG_SNAPSHOT,
            json.dumps(plan_.to_dict(), indent=1, ensure_ascii=False),
        )
        assessment.config = plan_.to_dict()
        assessment.state = ExecutionState(
            assessment_id=plan_.assessment_id,
            target=plan_.target,
            created_at=created_at,
            updated_at=created_at,
        )
        assessment.save_state()
        return assessment

    @classmethod
    def open(cls, directory: Path | str) -> "Assessment":
        assessment = cls(directory)
        if not assessment.state_path.exists():
            raise NotFound(f"no assessment at {assessment.directory}")
        try:
            assessment.state = ExecutionState.from_dict(
                json.loads(assessment.state_path.read_text(encoding="utf-8"))
            )
            assessment.config = json.loads(
                (assessment.directory / CONFIG_SNAPSHOT).read_text(encoding="utf-8")
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise StateCorrupt(
                f"cannot read execution state in {assessment.directory}: {exc}."
                " Recovery: restore state.json/config.json from the journals"
                " or start a fresh assessment directory."
            )
        # events appended after the last state save must not reuse seq numbers
        for path in (assessment.journal_path, assessment.trace_path):
            if path.exists():
                for line in path.read_text(encoding="utf-8").splitlines():
                    try:
                        seq = json.loads(line).get("seq", 0)
                    except json.JSONDecodeError:
                        continue
                    assessment.state.seq = max(assessment.state.seq, seq)
        return assessment

    def save_state(self) -> None:
        self.state.updated_at = wall_clock_now()
        _atomic_write(
            self.state_path,
            json.dumps(self.state.to_dict(), indent=1, ensure_ascii=False),
        )

    def _append(self, path: Path, entry: dict) -> None:
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def emit(self, kind: str, **payload) -> dict:
        self.state.seq += 1
        entry = {
            "seq": self.state.seq,
            "ts": wall_clock_now(),
            "kind": kind,
            "assessment_id": self.state.assessment_id,
            **payload,
        }
        self._append(self.journal_path, entry)
        return entry

    def emit_hook(self, hook: str, section: str, outcome) -> dict:
        self.state.seq += 1
        entry = {
            "seq": self.state.seq,
            "ts": wall_clock_now(),
            "kind": "hook_verdict",
            "assessment_id": self.state.assessment_id,
            "hook": hook,
            "section": section,
            "outcome": outcome.to_dict(),
        }
        self._append(self.trace_path, entry)
        return entry

    def read_events(self, after: int = 0) -> list[dict]:
        events = []
        for path in (self.journal_path, self.trace_path):
            if not path.exists():
                continue
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                entry = json.loads(line)
                if entry.get("seq", 0) > after:
                    events.append(entry)
        return sorted(events, key=lambda e: e["seq"])

    def write_section(self, draft: SectionDraft) -> None:
        path = self.sections_dir / f"{draft.section_id.domain.value}.json"
        _atomic_write(path, json.dumps(draft.to_dict(), indent=1, ensure_ascii=False))

    def read_section(self, domain: str) -> SectionDraft:
        path = self.sections_dir / f"{domain}.json"
        if not path.exists():
            raise NotFound(f"no stored section {domain}")
        return SectionDraft.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def transcript_path(self, domain: str, revision: int) -> Path:
        return self.transcripts_dir / f"{domain}.r{revision}.jsonl"


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def acquire_lease(directory: Path) -> str:
    """Claim the one-runner-per-assessment lease; returns a release token.

    A lease left by a dead process is stale and silently taken over; a
    lease held by any live runner (including another thread of this
    process) raises sequential-violation.
    """
    path = directory / LEASE_FILE
    if path.exists():
        try:
            lease = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            lease = {}
        pid = lease.get("pid")
        if isinstance(pid, int) and _pid_alive(pid):
            raise SequentialViolation(
                f"assessment is already being driven by process {pid}"
            )
    token = uuid.uuid4().hex
    _atomic_write(
        path,
        json.dumps(
            {"pid": os.getpid(), "token": token, "started_at": wall_clock_now()}
        ),
    )
    return token


def release_lease(directory: Path, token: str) -> None:
    path = directory / LEASE_FILE
    try:
        lease = json.loads(path.read_text(encoding="utf-8"))
        if lease.get("token") == token:
            path.unlink()
    except (FileNotFoundError, json.JSONDecodeError):
        pass


def lease_alive(directory: Path) -> bool:
    path = directory / LEASE_FILE
    if not path.exists():
        return False
    try:
        lease = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    pid = lease.get("pid")
    return isinstance(pid, int) and _pid_alive(pid)


# -- running ------------------------------------------------------------------------


class _Transcript:
    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, entry: dict) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


def run(plan_: PipelinePlan, directory: Path | str, backend,
        judge=None) -> Report:
    clock = _make_clock(plan_.config, 0)
    assessment = Assessment.create(directory, plan_, created_at=clock.now())
    return _drive(assessment, plan_, backend, judge, clock)


def _plan_from_snapshot(assessment: Assessment) -> PipelinePlan:
    snapshot = assessment.config
    config = snapshot["config"]
    target = TargetQuery.from_dict(snapshot["target"])
    skills_by_domain = load_all_skills(config["skills_root"])
    return PipelinePlan(
        assessment_id=snapshot["assessment_id"],
        target=target,
        sections=tuple(snapshot["sections"]),
        graph=load_graph(config.get("graph")),
        skills={d.value: s for d, s in skills_by_domain.items()},
        config=config,
    )


def load_report(assessment: Assessment) -> Report:
    path = assessment.directory / REPORT_JSON
    if not path.exists():
        raise NotFound(f"no completed report in {assessment.directory}")
    return Report.from_dict(json.loads(path.read_text(encoding="utf-8")))


def resume(directory: Path | str, backend, judge=None) -> Report:
    assessment = Assessment.open(directory)
    state = assessment.state
    if state.status == COMPLETED:
        return load_report(assessment)
    if state.status == FAILED:
        raise StateCorrupt(
            "assessment previously failed with a non-resumable error;"
            " inspect the journals or start a fresh directory"
        )
    plan_ = _plan_from_snapshot(assessment)
    digests = load_digests(assessment.digests_dir)
    for domain in state.completed:
        if domain not in digests:
            raise StateCorrupt(
                f"digest missing for completed section {domain!r}."
                " Recovery: delete the section from state.json 'completed'"
                " to regenerate it, or restore digests/ from backup."
            )
    clock = _make_clock(plan_.config, state.clock)
    return _drive(assessment, plan_, backend, judge, clock)


def _drive(assessment: Assessment, plan_: PipelinePlan, backend, judge,
           clock) -> Report:
    lease_token = acquire_lease(assessment.directory)
    store = EvidenceStore(
        assessment.directory, plan_.assessment_id, clock=clock.now
    )
    gateway = ToolGateway(store, clock=clock.now)
    try:
        gateway.connect(build_registry(plan_.config))
        lock = PipelineLock()
        digests = load_digests(assessment.digests_dir)
        denylist_path = plan_.config.get("denylist")
        denylist = (
            load_denylist(denylist_path)
            if denylist_path and Path(denylist_path).exists()
            else ()
        )
        state = assessment.state
        state.status = RUNNING
        assessment.save_state()
        for domain in plan_.sections:
            if domain in state.completed:
                continue
            _run_section(
                assessment, plan_, domain, backend, judge, clock,
                store, gateway, lock, digests, denylist,
            )
        report = _assemble_report(assessment, plan_, clock)
        references = build_references(report, store)
        _atomic_write(
            assessment.directory / REPORT_MD,
            report_to_markdown(report, references=references),
        )
        _atomic_write(
            assessment.directory / REPORT_JSON,
            json.dumps(report.to_dict(), indent=1, ensure_ascii=False),
        )
        state.status = COMPLETED
        state.current = None
        state.clock = clock.counter
        assessment.save_state()
        assessment.emit("pipeline_completed", report=REPORT_MD)
        assessment.save_state()
        return report
    except SectionFailed as exc:
        state = assessment.state
        state.status = INTERRUPTED
        state.failure = {
            "section": exc.details.get("section"),
            "code": exc.cause_code,
            "message": exc.message,
        }
        assessment.emit(
            "pipeline_interrupted",
            section=exc.details.get("section"),
            code=exc.cause_code,
            message=exc.message,
        )
        assessment.save_state()
        raise
    except (StorageError, StateCorrupt) as exc:
        state = assessment.state
        state.status = FAILED
        state.failure = {"section": state.current, "code": exc.code,
                         "message": str(exc)}
        assessment.emit(
            "pipeline_interrupted", section=state.current, code=exc.code,
            message=str(exc),
        )
        assessment.save_state()
        raise
    finally:
        release_lease(assessment.directory, lease_token)
        gateway.close()
        store.close()


def _compose_for(plan_: PipelinePlan, skill: SkillModule) -> tuple:
    config = plan_.config
    target = plan_.target
    lines = [f"Target: {target.identifier}"]
    context_bits = []
    if target.therapeutic_area:
        context_bits.append(f"therapeutic area {target.therapeutic_area}")
    if target.modality:
        context_bits.append(f"modality {target.modality}")
    if target.free_text_context:
        context_bits.append(target.free_text_context)
    if context_bits:
        lines.append("Context: " + "; ".join(context_bits))
    if config.get("user_instructions"):
        lines.append(config["user_instructions"])
    user_text = "\n".join(lines)
    system_text = config.get("system_prompt")
    if system_text and Path(system_text).exists():
        system_text = Path(system_text).read_text(encoding="utf-8")
    else:
        system_text = DEFAULT_SYSTEM_PROMPT
    overrides: dict = {}
    if config.get("preferences_root"):
        from .refinement import load_accepted

        overrides.update(
            load_accepted(config["preferences_root"], config.get("actor", "reviewer"))
        )
    overrides.update(config.get("user_overrides") or {})
    composed = compose(
        system_layer(system_text),
        skill,
        user_layer(user_text, overrides),
    )
    return composed, user_text


def _run_section(assessment, plan_, domain, backend, judge, clock, store,
                 gateway, lock, digests, denylist) -> None:
    started = time.monotonic()
    state = assessment.state
    skill = plan_.skills[domain]
    composed, user_text = _compose_for(plan_, skill)
    compression_cfg = plan_.config.get("compression") or {}
    ctx = HookContext(
        section_id=domain,
        composed_prompt=composed,
        workspace_root=assessment.directory,
        store=store,
        digests=digests,
        graph=plan_.graph,
        skill=skill,
        lock=lock,
        compression_backend=backend,
        user_text=user_text,
        output_path=f"{SECTIONS_DIR}/{domain}.json",
        denylist=denylist,
        tau=plan_.config.get("tau", 0.5),
        judge=judge,
        compression_ratio=compression_cfg.get("ratio", 0.4),
        compression_floor=compression_cfg.get("floor_tokens", 200),
        digest_dir=assessment.digests_dir,
    )
    state.current = domain
    assessment.save_state()
    assessment.emit("section_started", section=domain)

    pre = pre_execute(ctx)
    assessment.emit_hook("pre", domain, pre)
    if pre.verdict == BLOCK:
        violation = pre.violations[0]
        raise SectionFailed(
            f"pre-execution hook blocked section {domain}: {violation.message}",
            cause_code=violation.code,
            section=domain,
        )
    try:
        draft = _attempt_with_retry(
            assessment, plan_, domain, ctx, backend, gateway, clock, started
        )
    finally:
        lock.release(domain)
    assessment.emit(
        "section_completed",
        section=domain,
        revision=draft.revision,
        wall_seconds=round(time.monotonic() - started, 3),
    )
    assessment.save_state()


def _attempt_with_retry(assessment, plan_, domain, ctx, backend, gateway,
                        clock, started) -> SectionDraft:
    revision = assessment.state.section_meta.get(domain, {}).get("revision", 0)
    transcript = _Transcript(assessment.transcript_path(domain, revision))

    def generate(extra: str | None) -> SectionDraft:
        body = _agent_loop(
            assessment, plan_, domain, ctx, backend, gateway, transcript, extra
        )
        return SectionDraft(
            section_id=SectionId.of(domain),
            body=body,
            claims=tuple(extract_claims(body)),
            status=SectionStatus.GENERATED,
            revision=revision,
            produced_by=Producer.AGENT,
        )

    try:
        draft = generate(None)
    except StorageError:
        raise
    except TsaError as exc:
        raise SectionFailed(
            f"section {domain} failed during generation: {exc}",
            cause_code=exc.code,
            section=domain,
        )
    cell = {"draft": draft}
    ctx.checkpoint = lambda: _checkpoint(
        assessment, plan_, domain, cell["draft"], ctx, clock, started
    )
    outcome = post_execute(draft, ctx)
    assessment.emit_hook("post", domain, outcome)
    if outcome.verdict == PASS:
        return draft

    violations = outcome.violations
    transcript.append(
        {"type": "retry", "violations": [v.to_dict() for v in violations]}
    )
    try:
        retry_draft = generate(violation_note(violations))
    except StorageError:
        raise
    except TsaError as exc:
        raise SectionFailed(
            f"section {domain} was blocked ({violations[0].code}) and the"
            f" automatic retry failed: {exc}",
            cause_code=violations[0].code,
            section=domain,
        )
    cell["draft"] = retry_draft
    retry_outcome = post_execute(retry_draft, ctx)
    assessment.emit_hook("post", domain, retry_outcome)
    if retry_outcome.verdict == PASS:
        return retry_draft
    violation = retry_outcome.violations[0]
    raise SectionFailed(
        f"section {domain} blocked again after one automatic retry:"
        f" {violation.message}",
        cause_code=violation.code,
        section=domain,
    )


def _agent_loop(assessment, plan_, domain, ctx, backend, gateway, transcript,
                extra: str | None) -> str:
    budgets = plan_.config.get("budgets") or {}
    max_turns = budgets.get("max_turns", 12)
    max_calls = budgets.get("max_tool_calls", 24)
    prompt = ctx.composed_prompt.full_text
    if extra:
        prompt = prompt + "\n" + extra
    transcript.append(
        {
            "type": "prompt",
            "text": prompt,
            "bundle_sections": list(ctx.injected.manifest) if ctx.injected else [],
        }
    )
    schemas = tuple(gateway.list_tools())
    conversation: list[dict] = []
    turns = 0
    calls = 0
    while True:
        if turns >= max_turns:
            raise BudgetExceeded(
                f"turn budget {max_turns} exhausted for section {domain}"
            )
        request = ModelRequest(
            prompt=prompt,
            tool_schemas=schemas,
            conversation=tuple(conversation),
            budget=Budget(max_turns - turns, max_calls - calls),
            turn_index=turns,
        )
        turn = backend.complete(request)
        turns += 1
        transcript.append({"type": "model_turn", "turn": turn.to_dict()})
        if turn.kind == TOOL_CALL:
            if calls >= max_calls:
                raise BudgetExceeded(
                    f"tool-call budget {max_calls} exhausted for section {domain}"
                )
            calls += 1
            result = gateway.invoke(
                turn.tool_name, turn.arguments, caller=domain, stage=domain
            )
            conversation.append(
                {
                    "kind": "tool_call",
                    "tool_name": turn.tool_name,
                    "arguments": turn.arguments,
                }
            )
            conversation.append(
                {
                    "kind": "tool_result",
                    "tool_name": turn.tool_name,
                    "content": result.content,
                }
            )
            transcript.append(
                {
                    "type": "tool_result",
                    "tool_name": turn.tool_name,
                    "content": result.content,
                }
            )
            assessment.emit(
                "tool_invoked",
                section=domain,
                tool_name=turn.tool_name,
                evidence_ids=list(result.evidence_ids),
            )
            monitor = runtime_monitor(
                {
                    "kind": "tool_result",
                    "tool_name": turn.tool_name,
                    "content": result.content,
                },
                ctx,
            )
            if monitor.verdict != PASS:
                assessment.emit_hook("monitor", domain, monitor)
        else:
            body = turn.text or ""
            monitor = runtime_monitor({"kind": "partial_text", "text": body}, ctx)
            if monitor.verdict != PASS:
                assessment.emit_hook("monitor", domain, monitor)
            transcript.append({"type": "final", "text": body})
            return body


def _checkpoint(assessment, plan_, domain, draft, ctx, clock, started) -> None:
    assessment.write_section(draft)
    ctx.store.checkpoint()
    state = assessment.state
    if domain not in state.completed:
        state.completed.append(domain)
    state.current = None
    upstream_revisions = {}
    for upstream in sorted(plan_.graph.transitive_upstream(domain)):
        meta = state.section_meta.get(upstream, {})
        upstream_revisions[upstream] = meta.get("revision", 0)
    state.section_meta[domain] = {
        "revision": draft.revision,
        "status": draft.status.value,
        "wall_seconds": round(time.monotonic() - started, 3),
        "upstream_revisions": upstream_revisions,
    }
    state.clock = clock.counter
    state.journal_position = ctx.store.journal_position()
    assessment.save_state()
    _maybe_kill(len(state.completed), domain)


def _maybe_kill(completed_count: int, domain: str) -> None:
    value = os.environ.get(ENV_KILL_AFTER)
    if not value:
        return
    if value == domain or (value.isdigit() and int(value) == completed_count):
        os._exit(137)


def _assemble_report(assessment: Assessment, plan_: PipelinePlan,
                     clock) -> Report:
    sections = tuple(assessment.read_section(d) for d in plan_.sections)
    return Report(
        target=plan_.target,
        sections=sections,
        assessment_id=plan_.assessment_id,
        created_at=assessment.state.created_at,
        updated_at=clock.now(),
    )


# -- export -------------------------------------------------------------------------


def _query_summary(query) -> str:
    if isinstance(query, dict):
        return ", ".join(f"{k}={query[k]}" for k in sorted(query))
    return str(query)


def build_references(report: Report, store: EvidenceStore) -> list[str]:
    ids = sorted(
        {
            int(m.group(1))
            for section in report.sections
            for m in CITATION_RE.finditer(section.body)
        }
    )
    lines = []
    for eid in ids:
        try:
            record = store.get(eid)
        except NotFound:
            lines.append(f"[{eid}] unresolved")
            continue
        p = record.provenance
        lines.append(
            f"[{eid}] {p.tool_name} — {p.source_database} — "
            f"{_query_summary(p.query)} — {p.retrieved_at}"
        )
    return lines


def _markdown_to_html(markdown: str) -> str:
    import html as html_mod

    out = ["<!doctype html>", "<html><head><meta charset=\"utf-8\">",
           "<title>Target Safety Assessment</title></head><body>"]
    in_table = False
    for line in markdown.splitlines():
        stripped = line.strip()
        if stripped.startswith("|"):
            cells = [c.strip() for c in stripped.strip("|").split("|")]
            if all(set(c) <= {"-", ":"} and c for c in cells):
                continue
            if not in_table:
                out.append("<table>")
                in_table = True
            rendered = "".join(f"<td>{html_mod.escape(c)}</td>" for c in cells)
            out.append(f"<tr>{rendered}</tr>")
            continue
        if in_table:
            out.append("</table>")
            in_table = False
        if stripped.startswith("#"):
            level = len(stripped) - len(stripped.lstrip("#"))
            text = html_mod.escape(stripped[level:].strip())
            out.append(f"<h{level}>{text}</h{level}>")
        elif stripped.startswith("<!--"):
            out.append(line)
        elif stripped:
            text = html_mod.escape(stripped)
            text = CITATION_RE.sub(
                lambda m: f'<sup class="ev" data-ev="{m.group(1)}">{m.group(1)}</sup>',
                text,
            )
            out.append(f"<p>{text}</p>")
    if in_table:
        out.append("</table>")
    out.append("</body></html>")
    return "\n".join(out) + "\n"


def export(directory: Path | str, fmt: str = "md") -> str:
    """Render a completed assessment; md output is byte-stable."""
    assessment = Assessment.open(directory)
    report = load_report(assessment)
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=1, ensure_ascii=False) + "\n"
    with EvidenceStore(assessment.directory, report.assessment_id) as store:
        references = build_references(report, store)
    markdown = report_to_markdown(report, references=references)
    if fmt == "md":
        return markdown
    if fmt == "html":
        return _markdown_to_html(markdown)
    raise ConfigurationError(f"unknown export format {fmt!r}")

"""Programmatic enforcement wrapped around every section agent's lifecycle.

Three hook points convert soft prompt rules into hard guarantees:

- pre_execute: denylist scan over user-supplied text, upstream digest
  injection, output path confinement, pipeline lock acquisition.
- post_execute: citation validation, structural verification, compression,
  and state checkpointing, in that fixed order; a block at any stage stops
  the later stages.
- runtime_monitor: per-event advisory checks (provenance completeness,
  cross-section numeric consistency, length bounds). The monitor only
  warns; the orchestrator decides what to do with warnings.

All hooks run synchronously on the pipeline thread.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .domain import SectionStatus
from .errors import InvalidArgument, Violation
from .evidence import EvidenceStore
from .grounding import SectionVerification, verify_section
from .instructions import ComposedPrompt, SkillModule
from .memory import (
    COMPRESSION_RATIO,
    FLOOR_TOKENS,
    CompressedSection,
    DependencyGraph,
    InjectionBundle,
    compress,
    inject_for,
    save_digest,
)
from .numerics import extract_quantity_mentions, word_count

PASS = "pass"
BLOCK = "block"
WARN = "warn"


def load_denylist(path: Path | str) -> tuple[str, ...]:
    """One lowercased pattern per line; blank lines and # comments skipped."""
    patterns = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            patterns.append(line.lower())
    return tuple(patterns)


def scan_denylist(text: str, patterns: tuple[str, ...]) -> list[str]:
    lowered = text.lower()
    return [p for p in patterns if p in lowered]


class PipelineLock:
    """At most one section of one assessment executes at a time."""

    def __init__(self) -> None:
        self._holder: str | None = None
        self._mutex = threading.Lock()

    def acquire(self, owner: str) -> bool:
        with self._mutex:
            if self._holder is None:
                self._holder = owner
                return True
            return False

    def release(self, owner: str) -> None:
        with self._mutex:
            if self._holder == owner:
                self._holder = None

    @property
    def holder(self) -> str | None:
        return self._holder


@dataclass
class HookContext:
    """Everything a hook needs to act on one section's lifecycle.

    Mutable on purpose: pre_execute swaps in the memory-injected prompt and
    post_execute adds the fresh digest to ``digests``.
    """

    section_id: str
    composed_prompt: ComposedPrompt
    workspace_root: Path
    store: EvidenceStore
    digests: dict[str, CompressedSection]
    graph: DependencyGraph
    skill: SkillModule
    lock: PipelineLock
    compression_backend: object
    user_text: str = ""
    output_path: str = ""
    denylist: tuple[str, ...] = ()
    tau: float = 0.5
    judge: object | None = None
    compression_ratio: float = COMPRESSION_RATIO
    compression_floor: int = FLOOR_TOKENS
    digest_dir: Path | None = None
    checkpoint: Callable[[], None] | None = None
    injected: InjectionBundle | None = None

    def __post_init__(self):
        root = Path(self.workspace_root)
        if not root.is_absolute() or not root.is_dir():
            raise InvalidArgument(
                f"workspace_root must be an absolute existing directory, got {root}"
            )
        self.workspace_root = root


@dataclass(frozen=True)
class HookOutcome:
    verdict: str
    violations: tuple[Violation, ...] = ()
    mutations: tuple[str, ...] = ()
    stages: tuple[str, ...] = ()
    verification: SectionVerification | None = None
    digest: CompressedSection | None = None

    def __post_init__(self):
        if self.verdict == BLOCK and not self.violations:
            raise InvalidArgument("a blocking outcome must carry violations")

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "violations": [v.to_dict() for v in self.violations],
            "mutations": list(self.mutations),
            "stages": list(self.stages),
        }


def pre_execute(ctx: HookContext) -> HookOutcome:
    mutations: list[str] = []

    hits = scan_denylist(ctx.user_text, ctx.denylist)
    if hits:
        return HookOutcome(
            verdict=BLOCK,
            violations=(
                Violation(
                    code="prompt-injection",
                    message=f"user-supplied text matches denylist pattern {hits[0]!r}",
                    location="user layer",
                ),
            ),
        )

    bundle = inject_for(ctx.section_id, ctx.graph, ctx.digests)
    if bundle.is_empty():
        mutations.append("injected 0 upstream digests")
    else:
        ctx.composed_prompt = ctx.composed_prompt.with_memory(bundle.text)
        ctx.injected = bundle
        mutations.append(
            f"injected {len(bundle.manifest)} upstream digests"
            f" ({', '.join(bundle.manifest)})"
        )

    if ctx.output_path:
        candidate = Path(ctx.output_path)
        if not candidate.is_absolute():
            candidate = ctx.workspace_root / candidate
        resolved = candidate.resolve()
        root = ctx.workspace_root.resolve()
        if not (resolved == root or root in resolved.parents):
            return HookOutcome(
                verdict=BLOCK,
                violations=(
                    Violation(
                        code="path-escape",
                        message=(
                            f"output path {ctx.output_path!r} resolves outside"
                            f" the workspace ({resolved})"
                        ),
                        location=ctx.section_id,
                    ),
                ),
                mutations=tuple(mutations),
            )

    if not ctx.lock.acquire(ctx.section_id):
        return HookOutcome(
            verdict=BLOCK,
            violations=(
                Violation(
                    code="sequential-violation",
                    message=(
                        f"section {ctx.lock.holder!r} is still executing;"
                        " one section at a time"
                    ),
                    location=ctx.section_id,
                ),
            ),
            mutations=tuple(mutations),
        )
    mutations.append(f"acquired pipeline lock for {ctx.section_id}")

    return HookOutcome(verdict=PASS, mutations=tuple(mutations))


_VERIFIABLE = {
    SectionStatus.GENERATED,
    SectionStatus.USER_EDITED,
    SectionStatus.REVISED,
}


def _has_heading(body: str, name: str) -> bool:
    pattern = re.compile(rf"^#{{1,6}}\s*{re.escape(name)}\s*$",
                         re.IGNORECASE | re.MULTILINE)
    return bool(pattern.search(body))


def post_execute(section, ctx: HookContext) -> HookOutcome:
    if section.status not in _VERIFIABLE:
        raise InvalidArgument(
            f"post hooks require a generated/edited/revised section,"
            f" got status {section.status.value}"
        )
    stages: list[str] = []

    verification = verify_section(section, ctx.store, judge=ctx.judge, tau=ctx.tau)
    if verification.counts["hallucinated"] > 0:
        stages.append("citation-validation:blocked")
        ids = verification.hallucinated_ids
        return HookOutcome(
            verdict=BLOCK,
            violations=(
                Violation(
                    code="hallucinated-citation",
                    message=f"cited evidence id(s) {ids} do not exist in the store",
                    location=ctx.section_id,
                ),
            ),
            stages=tuple(stages),
            verification=verification,
        )
    stages.append("citation-validation:ok")

    missing = [
        name
        for name in ctx.skill.required_subsections
        if not _has_heading(section.body, name)
    ]
    if missing:
        stages.append("structural-verification:blocked")
        return HookOutcome(
            verdict=BLOCK,
            violations=(
                Violation(
                    code="missing-subsection",
                    message=f"required subsection heading(s) missing: {missing}",
                    location=ctx.section_id,
                ),
            ),
            stages=tuple(stages),
            verification=verification,
        )
    stages.append("structural-verification:ok")

    digest = compress(
        section,
        ctx.compression_backend,
        ratio=ctx.compression_ratio,
        floor_tokens=ctx.compression_floor,
    )
    ctx.digests[ctx.section_id] = digest
    if ctx.digest_dir is not None:
        save_digest(ctx.digest_dir, digest)
    stages.append("compression:ok")

    if ctx.checkpoint is not None:
        ctx.checkpoint()
    stages.append("state-tracking:ok")

    return HookOutcome(
        verdict=PASS,
        stages=tuple(stages),
        verification=verification,
        digest=digest,
    )


def _digest_quantity_index(ctx: HookContext) -> dict:
    index: dict = {}
    for upstream in ctx.graph.upstream(ctx.section_id):
        digest = ctx.digests.get(upstream)
        if digest is None:
            continue
        text = "\n".join(digest.facts)
        for row in digest.tables:
            text += "\n" + " | ".join(row)
        for mention in extract_quantity_mentions(text):
            index.setdefault((mention.entity, mention.key), set()).add(mention.value)
    return index


def runtime_monitor(event: dict, ctx: HookContext) -> HookOutcome:
    violations: list[Violation] = []
    kind = event.get("kind")

    if kind == "tool_result":
        content = event.get("content") or {}
        tool = event.get("tool_name", "?")
        for eid in content.get("evidence_ids") or ():
            record = ctx.store.get(eid)
            if record.provenance.source_database == "unspecified":
                violations.append(
                    Violation(
                        code="provenance-gap",
                        message=(
                            f"evidence {eid} from tool {tool} carries no"
                            " source_database"
                        ),
                        location=ctx.section_id,
                        severity="warning",
                    )
                )

    elif kind == "partial_text":
        text = event.get("text", "")
        fixed = _digest_quantity_index(ctx)
        if fixed:
            for mention in extract_quantity_mentions(text):
                key = (mention.entity, mention.key)
                upstream_values = fixed.get(key)
                if upstream_values and mention.value not in upstream_values:
                    violations.append(
                        Violation(
                            code="cross-section-mismatch",
                            message=(
                                f"section states {mention.token} for"
                                f" {key} but an upstream digest fixed"
                                f" {sorted(upstream_values)}"
                            ),
                            location=ctx.section_id,
                            severity="warning",
                        )
                    )
        wc = word_count(text)
        min_words = ctx.skill.directive_value("length.min_words")
        max_words = ctx.skill.directive_value("length.max_words")
        if isinstance(min_words, int) and wc < min_words:
            violations.append(
                Violation(
                    code="length-bound",
                    message=f"section has {wc} words, minimum is {min_words}",
                    location=ctx.section_id,
                    severity="warning",
                )
            )
        elif isinstance(max_words, int) and wc > max_words:
            violations.append(
                Violation(
                    code="length-bound",
                    message=f"section has {wc} words, maximum is {max_words}",
                    location=ctx.section_id,
                    severity="warning",
                )
            )

    return HookOutcome(
        verdict=WARN if violations else PASS, violations=tuple(violations)
    )


def violation_note(violations: tuple[Violation, ...]) -> str:
    """Appended to the prompt for the single automatic retry."""
    lines = ["A previous attempt was blocked by verification:"]
    lines.extend(f"- {v.code}: {v.message}" for v in violations)
    lines.append("Correct the issue and regenerate the section.")
    return "\n".join(lines)

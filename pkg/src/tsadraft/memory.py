"""Cross-section agent memory: compressed digests and the dependency graph.

Completed sections are compressed into prose-free digests (facts, verbatim
tables, risk classifications, and the full set of numeric tokens) and
selectively injected into downstream sections per the dependency graph.
Preservation is not trusted to the model: after the backend proposes a
digest, the numeric tokens and table cells of the source are checked by the
shared extractor and any omission is appended verbatim.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .backend import FINAL_TEXT, Budget, ModelRequest
from .domain import (
    RESEARCH_DOMAINS,
    SYNTHESIS_DOMAINS,
    SectionDraft,
    SectionStatus,
    canonical_section_order,
)
from .errors import (
    CompressionError,
    DependencyUnsatisfied,
    GraphInvalid,
    InvalidArgument,
    TsaError,
)
from .numerics import (
    estimate_tokens,
    extract_numeric_tokens,
    extract_table_rows,
)

COMPRESSION_RATIO = 0.4
FLOOR_TOKENS = 200

_COMPRESSIBLE = {
    SectionStatus.GENERATED,
    SectionStatus.REVISED,
    SectionStatus.USER_EDITED,
    SectionStatus.APPROVED,
}

BUNDLE_START = "=== INJECTED MEMORY (sections: {names}) ==="
BUNDLE_END = "=== END INJECTED MEMORY ==="

_RISK_LINE_RE = re.compile(r"^RISK: (.*?) \| (\w+) \| ([\d,]*)$")


@dataclass(frozen=True)
class CompressedSection:
    section_id: str  # domain name
    facts: tuple[str, ...]
    tables: tuple[tuple[str, ...], ...]
    risk_classifications: tuple[tuple[str, str, tuple[int, ...]], ...]
    numeric_tokens: frozenset[str]
    source_revision: int
    token_estimate: int

    def render(self) -> str:
        lines = [f"--- Digest: {self.section_id} (revision {self.source_revision}) ---"]
        lines.append("Facts:")
        for fact in self.facts:
            lines.append(f"- {fact}")
        if self.tables:
            lines.append("Tables:")
            for block in self.tables:
                lines.extend(block)
        if self.risk_classifications:
            lines.append("Risk classifications:")
            for liability, severity, ids in self.risk_classifications:
                id_text = ",".join(str(i) for i in ids)
                lines.append(f"- {liability} | {severity} | ev:{id_text}")
        if self.numeric_tokens:
            lines.append("Data points: " + ", ".join(sorted(self.numeric_tokens)))
        lines.append(f"--- End digest: {self.section_id} ---")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "section_id": self.section_id,
            "facts": list(self.facts),
            "tables": [list(block) for block in self.tables],
            "risk_classifications": [
                [liability, severity, list(ids)]
                for liability, severity, ids in self.risk_classifications
            ],
            "numeric_tokens": sorted(self.numeric_tokens),
            "source_revision": self.source_revision,
            "token_estimate": self.token_estimate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CompressedSection":
        return cls(
            section_id=data["section_id"],
            facts=tuple(data["facts"]),
            tables=tuple(tuple(block) for block in data["tables"]),
            risk_classifications=tuple(
                (liability, severity, tuple(ids))
                for liability, severity, ids in data["risk_classifications"]
            ),
            numeric_tokens=frozenset(data["numeric_tokens"]),
            source_revision=data["source_revision"],
            token_estimate=data["token_estimate"],
        )


@dataclass(frozen=True)
class InjectionBundle:
    text: str
    manifest: tuple[str, ...]
    revisions: dict

    def is_empty(self) -> bool:
        return not self.manifest


COMPRESSION_PROMPT = """Task: compress section {domain}.
Produce a prose-free factual digest as FACT:, TABLE:, and RISK: lines.
Preserve every number and every table cell verbatim.
--- SOURCE ---
{body}
--- END SOURCE ---
"""


def compress(section: SectionDraft, backend, ratio: float = COMPRESSION_RATIO,
             floor_tokens: int = FLOOR_TOKENS) -> CompressedSection:
    if section.status not in _COMPRESSIBLE:
        raise InvalidArgument(
            f"cannot compress a section in status {section.status.value}"
        )
    domain = section.section_id.domain.value
    body = section.body
    numeric_tokens = frozenset(extract_numeric_tokens(body))
    if not body.strip():
        return CompressedSection(
            section_id=domain, facts=(), tables=(), risk_classifications=(),
            numeric_tokens=numeric_tokens, source_revision=section.revision,
            token_estimate=0,
        )
    prompt = COMPRESSION_PROMPT.format(domain=domain, body=body)
    request = ModelRequest(prompt=prompt, budget=Budget(max_turns=1, max_tool_calls=0))
    try:
        turn = backend.complete(request)
    except TsaError as exc:
        raise CompressionError(f"digest backend failed: {exc}", cause=exc.code) from exc
    if turn.kind != FINAL_TEXT:
        raise CompressionError("digest backend returned a tool call, not text")
    facts, tables, risks = _parse_candidate(turn.text or "")
    tables = _repair_tables(body, tables)
    digest = CompressedSection(
        section_id=domain,
        facts=tuple(facts),
        tables=tuple(tuple(block) for block in tables),
        risk_classifications=tuple(risks),
        numeric_tokens=numeric_tokens,
        source_revision=section.revision,
        token_estimate=0,
    )
    digest = _finish(digest, body, ratio, floor_tokens)
    return digest


def _parse_candidate(text: str) -> tuple[list[str], list[list[str]], list[tuple]]:
    facts: list[str] = []
    tables: list[list[str]] = []
    risks: list[tuple] = []
    current_table: list[str] | None = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped == "TABLE:":
            if current_table:
                tables.append(current_table)
            current_table = []
            continue
        if current_table is not None and stripped.startswith("|"):
            current_table.append(stripped)
            continue
        if current_table is not None:
            tables.append(current_table)
            current_table = None
        if stripped.startswith("FACT: "):
            facts.append(stripped[len("FACT: "):])
            continue
        m = _RISK_LINE_RE.match(stripped)
        if m:
            ids = tuple(int(x) for x in m.group(3).split(",") if x)
            risks.append((m.group(1), m.group(2), ids))
    if current_table:
        tables.append(current_table)
    return facts, tables, risks


def _repair_tables(body: str, tables: list[list[str]]) -> list[list[str]]:
    """Append verbatim any source table row whose cells were dropped."""
    digest_cells: set[str] = set()
    for block in tables:
        for row in block:
            for cell in row.strip("|").split("|"):
                digest_cells.add(cell.strip())
    recovered: list[str] = []
    for row_cells in extract_table_rows(body):
        if any(cell not in digest_cells for cell in row_cells):
            recovered.append("| " + " | ".join(row_cells) + " |")
            digest_cells.update(row_cells)
    if recovered:
        tables = tables + [recovered]
    return tables


def _finish(digest: CompressedSection, body: str, ratio: float,
            floor_tokens: int) -> CompressedSection:
    source_estimate = estimate_tokens(body)
    budget = None
    if source_estimate >= floor_tokens:
        budget = int(ratio * source_estimate)
    facts = list(digest.facts)
    while True:
        candidate = CompressedSection(
            section_id=digest.section_id,
            facts=tuple(facts),
            tables=digest.tables,
            risk_classifications=digest.risk_classifications,
            numeric_tokens=digest.numeric_tokens,
            source_revision=digest.source_revision,
            token_estimate=0,
        )
        estimate = estimate_tokens(candidate.render())
        if budget is None or estimate <= budget or not facts:
            # mandatory content (tables, data points, risks) is never trimmed,
            # so a degenerate source can exceed the ratio; preservation wins
            return CompressedSection(
                section_id=candidate.section_id,
                facts=candidate.facts,
                tables=candidate.tables,
                risk_classifications=candidate.risk_classifications,
                numeric_tokens=candidate.numeric_tokens,
                source_revision=candidate.source_revision,
                token_estimate=estimate,
            )
        facts.pop()


def verify_digest(source_body: str, digest: CompressedSection) -> list[str]:
    """Independent preservation check; returns problem descriptions."""
    problems = []
    rendered = digest.render()
    rendered_tokens = extract_numeric_tokens(rendered)
    for token in sorted(extract_numeric_tokens(source_body)):
        if token not in digest.numeric_tokens:
            problems.append(f"numeric token {token!r} missing from numeric_tokens")
        if token not in rendered_tokens:
            problems.append(f"numeric token {token!r} missing from rendered digest")
    digest_cells: set[str] = set()
    for block in digest.tables:
        for row in block:
            for cell in row.strip("|").split("|"):
                digest_cells.add(cell.strip())
    for row_cells in extract_table_rows(source_body):
        for cell in row_cells:
            if cell not in digest_cells:
                problems.append(f"table cell {cell!r} missing from digest tables")
    return problems


# -- dependency graph ---------------------------------------------------------


DEFAULT_EDGES: dict[str, tuple[str, ...]] = {
    "species_translatability": ("homology", "genetic"),
    "integrated_risk": tuple(d.value for d in RESEARCH_DOMAINS),
    "executive_summary": tuple(d.value for d in RESEARCH_DOMAINS)
    + ("species_translatability", "integrated_risk"),
}


class DependencyGraph:
    def __init__(self, edges: dict[str, tuple[str, ...]]):
        self.edges = {domain: tuple(upstream) for domain, upstream in edges.items()}
        self._validate()

    def _validate(self) -> None:
        order = [s.domain.value for s in canonical_section_order()]
        research = {d.value for d in RESEARCH_DOMAINS}
        synthesis = {d.value for d in SYNTHESIS_DOMAINS}
        known = research | synthesis
        for domain, upstream in self.edges.items():
            if domain not in known:
                raise GraphInvalid(f"unknown section {domain!r} in dependency graph")
            for up in upstream:
                if up not in known:
                    raise GraphInvalid(f"unknown upstream section {up!r} for {domain}")
            if domain in research and upstream:
                raise GraphInvalid(
                    f"research section {domain!r} may not have upstream edges"
                )
            if domain in synthesis and not upstream:
                raise GraphInvalid(
                    f"synthesis section {domain!r} needs at least one upstream edge"
                )
        self._reject_cycles()
        for domain, upstream in self.edges.items():
            for up in upstream:
                if order.index(up) >= order.index(domain):
                    raise GraphInvalid(
                        f"{domain!r} depends on {up!r}, which does not precede it"
                        f" in pipeline order"
                    )

    def _reject_cycles(self) -> None:
        WHITE, GREY, BLACK = 0, 1, 2
        color = {domain: WHITE for domain in self.edges}

        def visit(node: str) -> None:
            color[node] = GREY
            for up in self.edges.get(node, ()):
                state = color.get(up, BLACK)
                if state == GREY:
                    raise GraphInvalid(f"dependency graph has a cycle through {up!r}")
                if state == WHITE:
                    visit(up)
            color[node] = BLACK

        for domain in self.edges:
            if color[domain] == WHITE:
                visit(domain)

    def upstream(self, domain: str) -> tuple[str, ...]:
        return self.edges.get(domain, ())

    def transitive_upstream(self, domain: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self.upstream(domain))
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(self.upstream(node))
        return seen

    def downstream_of(self, domain: str) -> set[str]:
        return {
            other for other in self.edges
            if domain in self.transitive_upstream(other)
        }

    def to_dict(self) -> dict:
        return {domain: list(upstream) for domain, upstream in sorted(self.edges.items())}


def load_graph(config: dict | None = None) -> DependencyGraph:
    edges = {d.value: () for d in RESEARCH_DOMAINS}
    edges.update(DEFAULT_EDGES)
    if config:
        if not isinstance(config, dict):
            raise GraphInvalid("dependency graph config must be a mapping")
        for domain, upstream in config.items():
            edges[domain] = tuple(upstream)
    return DependencyGraph(edges)


def inject_for(domain: str, graph: DependencyGraph,
               memory: dict[str, CompressedSection]) -> InjectionBundle:
    upstream = graph.upstream(domain)
    missing = [up for up in upstream if up not in memory]
    if missing:
        raise DependencyUnsatisfied(
            f"section {domain!r} needs digests for {missing}", missing=missing
        )
    if not upstream:
        return InjectionBundle(text="", manifest=(), revisions={})
    names = ", ".join(upstream)
    parts = [BUNDLE_START.format(names=names)]
    revisions = {}
    for up in upstream:
        parts.append(memory[up].render())
        revisions[up] = memory[up].source_revision
    parts.append(BUNDLE_END)
    return InjectionBundle(text="\n".join(parts), manifest=tuple(upstream),
                           revisions=revisions)


def save_digest(directory: Path, digest: CompressedSection) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{digest.section_id}.json"
    path.write_text(json.dumps(digest.to_dict(), indent=1, ensure_ascii=False),
                    encoding="utf-8")
    return path


def load_digests(directory: Path) -> dict[str, CompressedSection]:
    digests: dict[str, CompressedSection] = {}
    if not directory.is_dir():
        return digests
    for path in sorted(directory.glob("*.json")):
        digest = CompressedSection.from_dict(
            json.loads(path.read_text(encoding="utf-8"))
        )
        digests[digest.section_id] = digest
    return digests

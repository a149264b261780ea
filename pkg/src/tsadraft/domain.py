"""Shared domain vocabulary: targets, sections, claims, reports.

All types are immutable value objects; mutation happens by constructing
replacements (``dataclasses.replace``), which keeps them safe to share
across threads and trivially serializable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum

from .errors import InvalidArgument

# Canonical accession grammar published by UniProt: 6 or 10 alphanumerics,
# first letter O/P/Q or A-N/R-Z.
UNIPROT_RE = re.compile(
    r"^(?:[OPQ][0-9][A-Z0-9]{3}[0-9]|[A-NR-Z][0-9](?:[A-Z][A-Z0-9]{2}[0-9]){1,2})$"
)
ENSEMBL_RE = re.compile(r"^ENS[A-Z]{0,4}[0-9]{6,}(?:\.[0-9]+)?$")


class IdentifierKind(str, Enum):
    GENE_SYMBOL = "gene_symbol"
    GENE_ID = "gene_id"
    UNIPROT_ACCESSION = "uniprot_accession"
    UNRESOLVED = "unresolved"


class Domain(str, Enum):
    GENETIC = "genetic"
    TRANSCRIPTOMIC = "transcriptomic"
    HOMOLOGY = "homology"
    PHARMACOLOGICAL = "pharmacological"
    CLINICAL = "clinical"
    SPECIES_TRANSLATABILITY = "species_translatability"
    INTEGRATED_RISK = "integrated_risk"
    EXECUTIVE_SUMMARY = "executive_summary"


class SectionKind(str, Enum):
    RESEARCH = "research"
    SYNTHESIS = "synthesis"


RESEARCH_DOMAINS = (
    Domain.GENETIC,
    Domain.TRANSCRIPTOMIC,
    Domain.HOMOLOGY,
    Domain.PHARMACOLOGICAL,
    Domain.CLINICAL,
)
SYNTHESIS_DOMAINS = (
    Domain.SPECIES_TRANSLATABILITY,
    Domain.INTEGRATED_RISK,
    Domain.EXECUTIVE_SUMMARY,
)

SECTION_TITLES = {
    Domain.GENETIC: "Genetic evidence",
    Domain.TRANSCRIPTOMIC: "Transcriptomic evidence",
    Domain.HOMOLOGY: "Target homology",
    Domain.PHARMACOLOGICAL: "Pharmacological evidence",
    Domain.CLINICAL: "Clinical evidence",
    Domain.SPECIES_TRANSLATABILITY: "Species translatability",
    Domain.INTEGRATED_RISK: "Integrated risk assessment",
    Domain.EXECUTIVE_SUMMARY: "Executive summary",
}


@dataclass(frozen=True)
class SectionId:
    domain: Domain
    kind: SectionKind

    def __post_init__(self):
        expected = (
            SectionKind.RESEARCH if self.domain in RESEARCH_DOMAINS else SectionKind.SYNTHESIS
        )
        if self.kind is not expected:
            raise InvalidArgument(
                f"section {self.domain.value} must have kind {expected.value}"
            )

    @classmethod
    def of(cls, domain: Domain | str) -> "SectionId":
        domain = Domain(domain)
        kind = SectionKind.RESEARCH if domain in RESEARCH_DOMAINS else SectionKind.SYNTHESIS
        return cls(domain=domain, kind=kind)

    @property
    def title(self) -> str:
        return SECTION_TITLES[self.domain]

    def __str__(self) -> str:
        return self.domain.value


def canonical_section_order() -> list[SectionId]:
    """The fixed 8-section order: five research sections, then synthesis."""
    return [SectionId.of(d) for d in RESEARCH_DOMAINS + SYNTHESIS_DOMAINS]


class SectionStatus(str, Enum):
    PENDING = "pending"
    GENERATING = "generating"
    GENERATED = "generated"
    USER_EDITED = "user_edited"
    REVISED = "revised"
    APPROVED = "approved"


# pending -> generating -> generated, then free movement inside the
# review loop; nothing ever returns to pending.
_REVIEW_LOOP = {SectionStatus.USER_EDITED, SectionStatus.REVISED, SectionStatus.APPROVED}
ALLOWED_TRANSITIONS = {
    SectionStatus.PENDING: {SectionStatus.GENERATING},
    SectionStatus.GENERATING: {SectionStatus.GENERATED},
    SectionStatus.GENERATED: set(_REVIEW_LOOP),
    SectionStatus.USER_EDITED: set(_REVIEW_LOOP),
    SectionStatus.REVISED: set(_REVIEW_LOOP),
    SectionStatus.APPROVED: set(_REVIEW_LOOP),
}


def can_transition(current: SectionStatus, new: SectionStatus) -> bool:
    return new in ALLOWED_TRANSITIONS[current]


class Producer(str, Enum):
    AGENT = "agent"
    HUMAN = "human"


@dataclass(frozen=True)
class TargetQuery:
    identifier: str
    identifier_kind: IdentifierKind = IdentifierKind.UNRESOLVED
    therapeutic_area: str | None = None
    modality: str | None = None
    species_context: tuple[str, ...] = ()
    free_text_context: str | None = None

    def __post_init__(self):
        if not self.identifier:
            raise InvalidArgument("target identifier must be non-empty")

    def to_dict(self) -> dict:
        return {
            "identifier": self.identifier,
            "identifier_kind": self.identifier_kind.value,
            "therapeutic_area": self.therapeutic_area,
            "modality": self.modality,
            "species_context": list(self.species_context),
            "free_text_context": self.free_text_context,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TargetQuery":
        return cls(
            identifier=data["identifier"],
            identifier_kind=IdentifierKind(data.get("identifier_kind", "unresolved")),
            therapeutic_area=data.get("therapeutic_area"),
            modality=data.get("modality"),
            species_context=tuple(data.get("species_context") or ()),
            free_text_context=data.get("free_text_context"),
        )


def normalize_target_identifier(
    raw: str,
    therapeutic_area: str | None = None,
    modality: str | None = None,
    species_context: tuple[str, ...] = (),
    free_text_context: str | None = None,
) -> TargetQuery:
    """Classify a raw identifier as UniProt accession, gene id, or symbol."""
    identifier = raw.strip()
    if not identifier:
        raise InvalidArgument("target identifier is empty")
    upper = identifier.upper()
    if UNIPROT_RE.match(upper):
        kind = IdentifierKind.UNIPROT_ACCESSION
    elif ENSEMBL_RE.match(upper) or identifier.isdigit():
        kind = IdentifierKind.GENE_ID
    else:
        kind = IdentifierKind.GENE_SYMBOL
    return TargetQuery(
        identifier=upper if kind is not IdentifierKind.GENE_SYMBOL else identifier,
        identifier_kind=kind,
        therapeutic_area=therapeutic_area,
        modality=modality,
        species_context=species_context,
        free_text_context=free_text_context,
    )


@dataclass(frozen=True)
class Claim:
    text: str
    citation_ids: tuple[int, ...]
    span: tuple[int, int]

    def __post_init__(self):
        if any(cid < 0 for cid in self.citation_ids):
            raise InvalidArgument("citation ids must be non-negative")
        if self.span[0] < 0 or self.span[1] < self.span[0]:
            raise InvalidArgument(f"invalid claim span {self.span}")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "citation_ids": list(self.citation_ids),
            "span": list(self.span),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Claim":
        return cls(
            text=data["text"],
            citation_ids=tuple(data["citation_ids"]),
            span=tuple(data["span"]),
        )


@dataclass(frozen=True)
class SectionDraft:
    section_id: SectionId
    body: str = ""
    claims: tuple[Claim, ...] = ()
    status: SectionStatus = SectionStatus.PENDING
    revision: int = 0
    produced_by: Producer = Producer.AGENT

    def __post_init__(self):
        if self.revision < 0:
            raise InvalidArgument("revision must be >= 0")
        last_end = -1
        for claim in sorted(self.claims, key=lambda c: c.span):
            if claim.span[1] > len(self.body):
                raise InvalidArgument(
                    f"claim span {claim.span} exceeds body length {len(self.body)}"
                )
            if claim.span[0] < last_end:
                raise InvalidArgument("claim spans overlap")
            last_end = claim.span[1]

    def advance(self, new_status: SectionStatus, **changes) -> "SectionDraft":
        if not can_transition(self.status, new_status):
            raise InvalidArgument(
                f"illegal status transition {self.status.value} -> {new_status.value}"
            )
        return replace(self, status=new_status, **changes)

    def to_dict(self) -> dict:
        return {
            "section_id": {"domain": self.section_id.domain.value, "kind": self.section_id.kind.value},
            "body": self.body,
            "claims": [c.to_dict() for c in self.claims],
            "status": self.status.value,
            "revision": self.revision,
            "produced_by": self.produced_by.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SectionDraft":
        return cls(
            section_id=SectionId.of(data["section_id"]["domain"]),
            body=data["body"],
            claims=tuple(Claim.from_dict(c) for c in data.get("claims", [])),
            status=SectionStatus(data["status"]),
            revision=data["revision"],
            produced_by=Producer(data.get("produced_by", "agent")),
        )


@dataclass(frozen=True)
class Report:
    target: TargetQuery
    sections: tuple[SectionDraft, ...]
    assessment_id: str
    created_at: str
    updated_at: str

    def __post_init__(self):
        expected = [s.domain for s in canonical_section_order()]
        actual = [s.section_id.domain for s in self.sections]
        if actual != expected:
            raise InvalidArgument(
                "report sections must follow canonical order: "
                f"expected {[d.value for d in expected]}, got {[d.value for d in actual]}"
            )
        if not self.assessment_id:
            raise InvalidArgument("assessment_id must be non-empty")

    def section(self, domain: Domain | str) -> SectionDraft:
        domain = Domain(domain)
        for s in self.sections:
            if s.section_id.domain is domain:
                return s
        raise InvalidArgument(f"no section {domain.value}")

    def to_dict(self) -> dict:
        return {
            "assessment_id": self.assessment_id,
            "target": self.target.to_dict(),
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "sections": [s.to_dict() for s in self.sections],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        return cls(
            target=TargetQuery.from_dict(data["target"]),
            sections=tuple(SectionDraft.from_dict(s) for s in data["sections"]),
            assessment_id=data["assessment_id"],
            created_at=data["created_at"],
            updated_at=data["updated_at"],
        )


_SECTION_MARK = re.compile(
    r"^<!-- section:(?P<domain>[a-z_]+) revision:(?P<revision>\d+) status:(?P<status>[a-z_]+) -->$",
    re.MULTILINE,
)


def report_to_markdown(report: Report, references: list[str] | None = None) -> str:
    """Render the report with one `##` heading per section in canonical order.

    Section boundaries carry machine-readable HTML comments so the document
    can be parsed back losslessly; an optional References appendix resolves
    citation ids to provenance lines.
    """
    lines = [
        f"# Target Safety Assessment: {report.target.identifier}",
        "",
        f"Assessment: {report.assessment_id}",
        f"Created: {report.created_at}",
        f"Updated: {report.updated_at}",
        "",
    ]
    for section in report.sections:
        lines.append(
            f"<!-- section:{section.section_id.domain.value} "
            f"revision:{section.revision} status:{section.status.value} -->"
        )
        lines.append(f"## {section.section_id.title}")
        lines.append("")
        lines.append(section.body.rstrip("\n"))
        lines.append("<!-- /section -->")
        lines.append("")
    if references:
        lines.append("## References")
        lines.append("")
        lines.extend(references)
        lines.append("")
    return "\n".join(lines)


def parse_markdown_report(text: str) -> dict[str, dict]:
    """Inverse of ``report_to_markdown`` for the section payload.

    Returns domain -> {body, revision, status}; citation markers survive
    verbatim because bodies are reproduced byte-for-byte.
    """
    sections: dict[str, dict] = {}
    for m in _SECTION_MARK.finditer(text):
        start = text.index("\n", m.end()) + 1
        end = text.index("<!-- /section -->", start)
        block = text[start:end]
        # drop the heading line and its following blank line
        body = block.split("\n", 2)[2] if block.count("\n") >= 2 else ""
        sections[m.group("domain")] = {
            "body": body.rstrip("\n"),
            "revision": int(m.group("revision")),
            "status": m.group("status"),
        }
    return sections


__all__ = [
    "IdentifierKind",
    "Domain",
    "SectionKind",
    "SectionId",
    "SectionStatus",
    "Producer",
    "TargetQuery",
    "Claim",
    "SectionDraft",
    "Report",
    "RESEARCH_DOMAINS",
    "SYNTHESIS_DOMAINS",
    "SECTION_TITLES",
    "canonical_section_order",
    "can_transition",
    "normalize_target_identifier",
    "report_to_markdown",
    "parse_markdown_report",
]

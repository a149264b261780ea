import pytest

from tsadraft.domain import (
    RESEARCH_DOMAINS,
    SYNTHESIS_DOMAINS,
    Claim,
    Domain,
    Producer,
    Report,
    SectionDraft,
    SectionId,
    SectionKind,
    SectionStatus,
    TargetQuery,
    canonical_section_order,
    can_transition,
    normalize_target_identifier,
    parse_markdown_report,
    report_to_markdown,
)
from tsadraft.errors import InvalidArgument


def test_canonical_order_is_research_then_synthesis():
    order = canonical_section_order()
    assert [s.domain for s in order] == list(RESEARCH_DOMAINS + SYNTHESIS_DOMAINS)
    assert [s.domain.value for s in order] == [
        "genetic",
        "transcriptomic",
        "homology",
        "pharmacological",
        "clinical",
        "species_translatability",
        "integrated_risk",
        "executive_summary",
    ]
    for section in order[:5]:
        assert section.kind is SectionKind.RESEARCH
    for section in order[5:]:
        assert section.kind is SectionKind.SYNTHESIS


def test_section_id_rejects_mismatched_kind():
    with pytest.raises(InvalidArgument):
        SectionId(domain=Domain.GENETIC, kind=SectionKind.SYNTHESIS)
    assert SectionId.of("genetic").kind is SectionKind.RESEARCH


STATUS_TABLE = [
    # (from, to, allowed)
    (SectionStatus.PENDING, SectionStatus.GENERATING, True),
    (SectionStatus.PENDING, SectionStatus.GENERATED, False),
    (SectionStatus.GENERATING, SectionStatus.GENERATED, True),
    (SectionStatus.GENERATED, SectionStatus.USER_EDITED, True),
    (SectionStatus.GENERATED, SectionStatus.REVISED, True),
    (SectionStatus.GENERATED, SectionStatus.APPROVED, True),
    (SectionStatus.USER_EDITED, SectionStatus.REVISED, True),
    (SectionStatus.REVISED, SectionStatus.USER_EDITED, True),
    (SectionStatus.APPROVED, SectionStatus.USER_EDITED, True),
    (SectionStatus.USER_EDITED, SectionStatus.APPROVED, True),
    # nothing returns to pending, ever
    (SectionStatus.GENERATED, SectionStatus.PENDING, False),
    (SectionStatus.APPROVED, SectionStatus.PENDING, False),
    (SectionStatus.USER_EDITED, SectionStatus.PENDING, False),
    (SectionStatus.GENERATED, SectionStatus.GENERATING, False),
]


def test_status_transition_table():
    for src, dst, allowed in STATUS_TABLE:
        assert can_transition(src, dst) is allowed, (src, dst)


def test_advance_enforces_transitions():
    draft = SectionDraft(section_id=SectionId.of("genetic"))
    generating = draft.advance(SectionStatus.GENERATING)
    generated = generating.advance(SectionStatus.GENERATED, body="Body text.")
    assert generated.status is SectionStatus.GENERATED
    with pytest.raises(InvalidArgument):
        generated.advance(SectionStatus.PENDING)
    edited = generated.advance(
        SectionStatus.USER_EDITED, revision=1, produced_by=Producer.HUMAN
    )
    assert edited.revision == 1
    assert edited.produced_by is Producer.HUMAN


def test_claim_spans_must_not_overlap():
    body = "First sentence here. Second sentence here."
    second_at = body.index("Second")
    c1 = Claim(text="First sentence here.", citation_ids=(), span=(0, 20))
    c2 = Claim(
        text="Second sentence here.", citation_ids=(), span=(second_at, len(body))
    )
    SectionDraft(section_id=SectionId.of("genetic"), body=body, claims=(c1, c2))
    overlapping = Claim(text="x", citation_ids=(), span=(10, 25))
    with pytest.raises(InvalidArgument):
        SectionDraft(
            section_id=SectionId.of("genetic"), body=body, claims=(c1, overlapping)
        )
    beyond = Claim(text="x", citation_ids=(), span=(0, 999))
    with pytest.raises(InvalidArgument):
        SectionDraft(section_id=SectionId.of("genetic"), body=body, claims=(beyond,))


IDENTIFIER_CASES = [
    ("TP53", "TP53", "gene_symbol"),
    ("tp53", "tp53", "gene_symbol"),
    ("P04637", "P04637", "uniprot_accession"),
    ("ENSG00000141510", "ENSG00000141510", "gene_id"),
    ("ensg00000141510", "ENSG00000141510", "gene_id"),
    ("7157", "7157", "gene_id"),
    ("  EGFR  ", "EGFR", "gene_symbol"),
]


def test_identifier_normalization_cases():
    for raw, identifier, kind in IDENTIFIER_CASES:
        query = normalize_target_identifier(raw)
        assert query.identifier == identifier
        assert query.identifier_kind.value == kind


def test_identifier_rejects_empty():
    with pytest.raises(InvalidArgument):
        normalize_target_identifier("   ")


def test_target_query_round_trip():
    query = normalize_target_identifier(
        "TP53",
        therapeutic_area="oncology",
        modality="small molecule",
        species_context=("human", "mouse"),
        free_text_context="first-in-class",
    )
    assert TargetQuery.from_dict(query.to_dict()) == query


def _minimal_report() -> Report:
    sections = []
    for section_id in canonical_section_order():
        body = f"Prose for {section_id.domain.value} with enough words [ev:1]."
        sections.append(
            SectionDraft(
                section_id=section_id,
                body=body,
                status=SectionStatus.GENERATED,
                revision=0,
            )
        )
    return Report(
        target=normalize_target_identifier("TP53"),
        sections=tuple(sections),
        assessment_id="tsa-test",
        created_at="2025-01-01T00:00:00Z",
        updated_at="2025-01-01T00:00:09Z",
    )


def test_report_requires_canonical_order():
    report = _minimal_report()
    shuffled = tuple(reversed(report.sections))
    with pytest.raises(InvalidArgument):
        Report(
            target=report.target,
            sections=shuffled,
            assessment_id="tsa-test",
            created_at=report.created_at,
            updated_at=report.updated_at,
        )


def test_report_markdown_round_trip():
    report = _minimal_report()
    rendered = report_to_markdown(report)
    parsed = parse_markdown_report(rendered)
    assert set(parsed) == {s.section_id.domain.value for s in report.sections}
    for original in report.sections:
        got = parsed[original.section_id.domain.value]
        assert got["body"] == original.body
        assert got["revision"] == original.revision
        assert got["status"] == original.status.value


def test_report_markdown_carries_section_markers_and_titles():
    rendered = report_to_markdown(_minimal_report())
    assert rendered.startswith("# Target Safety Assessment: TP53\n")
    assert "<!-- section:genetic revision:0 status:generated -->" in rendered
    assert "## Genetic evidence" in rendered
    assert rendered.count("<!-- /section -->") == 8


def test_report_markdown_appends_references_block():
    rendered = report_to_markdown(
        _minimal_report(), references=["[1] tool — DB — q — ts"]
    )
    assert rendered.rstrip().endswith("[1] tool — DB — q — ts")
    assert "## References" in rendered


def test_report_section_lookup():
    report = _minimal_report()
    assert report.section("clinical").section_id.domain is Domain.CLINICAL
    assert report.section(Domain.GENETIC).section_id.domain is Domain.GENETIC

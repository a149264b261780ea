"""Scoring dimensions D1-D4 and the workflow counters, pinned against a
hand-labelled fixture assessment whose frozen scores live under
fixtures/golden/evaluation.json.

The graded cases here are exact, not approximate: the scorer consults no
model judge, so any drift is a regression rather than noise.
"""

import json

import pytest

import eval_fixture
from tsadraft.errors import AssessmentIncomplete, ConfigurationError
from tsadraft.evaluation import (
    GENETIC_CHECKLIST,
    EvaluationReport,
    build_checklists,
    build_template,
    efficiency_counters,
    evaluate_all,
    evaluate_d1,
    evaluate_d2,
    evaluate_d3,
    evaluate_d4,
    load_hedging_lexicon,
)
from tsadraft.evidence import EvidenceStore, Provenance


def _provenance(**overrides) -> Provenance:
    fields = {
        "invoking_agent": "genetic",
        "tool_name": "pubmed_search",
        "query": {"gene": "TP53"},
        "pipeline_stage": "genetic",
        "source_database": "PubMed",
        "retrieved_at": "2025-01-01T00:00:00Z",
    }
    fields.update(overrides)
    return Provenance(**fields)


@pytest.fixture()
def store(tmp_path):
    with EvidenceStore(tmp_path, "tsa-eval-unit") as handle:
        yield handle


# -- frozen fixture ---------------------------------------------------------------------


def test_frozen_scores_reproduce_exactly(tmp_path, golden_dir):
    directory = eval_fixture.build(tmp_path / eval_fixture.ASSESSMENT_ID)
    result = evaluate_all(directory).to_dict()
    golden = json.loads((golden_dir / "evaluation.json").read_text("utf-8"))
    assert result == golden


def test_evaluation_report_round_trips(golden_dir):
    golden = json.loads((golden_dir / "evaluation.json").read_text("utf-8"))
    assert EvaluationReport.from_dict(golden).to_dict() == golden


def test_render_text_reads_like_a_scorecard(golden_dir):
    golden = json.loads((golden_dir / "evaluation.json").read_text("utf-8"))
    text = EvaluationReport.from_dict(golden).render_text()
    assert text.startswith("Evaluation of tsa-eval-fixture\n")
    assert "D1 factual consistency   0.700  (7/10 supported)" in text
    assert "D4 evidence traceability 0.700  (7/10 traceable)" in text
    assert "priority pass" in text
    assert "Efficiency:" in text
    assert text.endswith("\n")


# -- D1 -----------------------------------------------------------------------------------


def test_d1_scores_each_sections_claims(store):
    store.put(_provenance(), {"summary": "Penetrance reaches 73% by age 70."})
    body = (
        "Carrier penetrance reaches 73% by age 70 [ev:1].\n"
        "A registry scan found 12 more families [ev:5].\n"
    )
    scores = evaluate_d1([("genetic", body)], store)
    assert scores["claims"] == 2
    assert scores["counts"] == {
        "supported": 1,
        "unsupported": 0,
        "contradicted": 0,
        "hallucinated": 1,
    }
    assert scores["ratio"] == 0.5
    assert scores["per_section"]["genetic"]["ratio"] == 0.5


def test_d1_folds_invalidated_citations_into_contradicted(store):
    record = store.put(
        _provenance(), {"summary": "Penetrance reaches 73% by age 70."}
    )
    store.invalidate(record.id, "superseded by newer registry data")
    scores = evaluate_d1(
        [("genetic", "Carrier penetrance reaches 73% by age 70 [ev:1].\n")], store
    )
    assert scores["counts"]["contradicted"] == 1
    assert scores["citing_invalidated"] == 1
    assert scores["per_section"]["genetic"]["citing_invalidated"] == 1
    assert scores["ratio"] == 0.0


def test_d1_of_a_claimless_report_is_perfect(store):
    scores = evaluate_d1([("clinical", "### Safety signals\n- none\n")], store)
    assert scores["claims"] == 0
    assert scores["ratio"] == 1.0


# -- D2 -----------------------------------------------------------------------------------


@pytest.mark.parametrize(
    ("body", "coverage"),
    [
        # all four sub-topics present, as headings or inline mentions
        (
            "### GWAS signals\nx\n### Rare variant burden\nx\n"
            "### Knockout phenotype\nx\n### Loss-of-function carriers\nx\n",
            1.0,
        ),
        # two of four: one heading, one inline mention
        (
            "### GWAS signals\nCohorts show elevated rare variant burden here.\n",
            0.5,
        ),
        # none of the checklist appears at all
        ("### Expression\nNothing genetic is covered in this body.\n", 0.0),
    ],
)
def test_d2_grades_genetic_checklist_coverage(skills, body, coverage):
    checklists = build_checklists(
        {d.value: s for d, s in skills.items()}
    )
    scores = evaluate_d2([("genetic", body)], checklists)
    genetic = scores["per_domain"]["genetic"]
    assert genetic["coverage"] == coverage
    assert len(genetic["matched"]) == int(coverage * 4)
    assert genetic["expected"] == list(GENETIC_CHECKLIST)


def test_d2_counts_missing_sections_as_zero(skills):
    checklists = build_checklists({d.value: s for d, s in skills.items()})
    scores = evaluate_d2([], checklists)
    assert all(v["coverage"] == 0.0 for v in scores["per_domain"].values())
    assert scores["mean_coverage"] == 0.0


def test_d2_refuses_an_empty_checklist():
    with pytest.raises(ConfigurationError, match="no evidence checklist"):
        evaluate_d2([("genetic", "body")], {"genetic": ()})


# -- D3 -----------------------------------------------------------------------------------


def _bare_template(order, headings=None, lengths=None):
    return {"order": order, "headings": headings or {}, "lengths": lengths or {}}


def test_d3_penalizes_order_inversions():
    template = _bare_template(["genetic", "transcriptomic", "homology"])
    sections = [("homology", "x"), ("genetic", "x"), ("transcriptomic", "x")]
    scores = evaluate_d3(sections, template)
    assert scores["inversions"] == 2
    assert scores["order_factor"] == pytest.approx(1 / 3)
    in_order = [("genetic", "x"), ("transcriptomic", "x"), ("homology", "x")]
    assert evaluate_d3(in_order, template)["order_factor"] == 1.0


def test_d3_conformance_multiplies_order_and_headings():
    template = _bare_template(
        ["genetic", "homology"], headings={"genetic": ("Alpha", "Beta")}
    )
    sections = [("genetic", "### Alpha\nbody\n"), ("homology", "x")]
    scores = evaluate_d3(sections, template)
    assert scores["heading_fraction"] == 0.75  # (1/2 + 1) / 2
    assert scores["conformance"] == 0.75


def test_d3_priority_requires_clinical_before_preclinical():
    template = _bare_template(["integrated_risk"])
    good = "<!-- block:clinical -->\nc\n<!-- block:preclinical -->\np\n"
    bad = "<!-- block:preclinical -->\np\n<!-- block:clinical -->\nc\n"
    assert evaluate_d3([("integrated_risk", good)], template)["priority_pass"]
    scores = evaluate_d3([("integrated_risk", bad)], template)
    assert scores["priority"] == {"integrated_risk": False}
    assert not scores["priority_pass"]
    # sections without both markers stay out of the priority map
    assert evaluate_d3([("integrated_risk", "plain")], template)["priority"] == {}


def test_d3_hedging_advisory_is_present_only_with_a_lexicon():
    template = _bare_template(["genetic", "homology"])
    sections = [
        ("genetic", "This finding may reflect selection bias."),
        ("homology", "Identity is 77% across the kinase domain."),
    ]
    plain = evaluate_d3(sections, template)
    assert "hedging_advisory" not in plain
    scored = evaluate_d3(sections, template, hedging_lexicon=("may", "appears"))
    assert scored["hedging_advisory"]["per_section"] == {
        "genetic": True,
        "homology": False,
    }
    assert scored["hedging_advisory"]["score"] == 0.5


def test_d3_length_bounds():
    template = _bare_template(
        ["genetic", "homology"],
        lengths={"genetic": (5, 8), "homology": (None, None)},
    )
    sections = [
        ("genetic", "only three words"),
        ("homology", "unbounded sections always pass"),
    ]
    scores = evaluate_d3(sections, template)
    assert scores["lengths_ok"] == {"genetic": False, "homology": True}
    long_body = " ".join(["word"] * 9)
    scores = evaluate_d3([("genetic", long_body)], template)
    assert scores["lengths_ok"]["genetic"] is False
    good_body = " ".join(["word"] * 6)
    scores = evaluate_d3([("genetic", good_body)], template)
    assert scores["lengths_ok"]["genetic"] is True


def test_build_template_collects_order_headings_and_bounds(skills):
    template = build_template({d.value: s for d, s in skills.items()})
    assert template["order"][0] == "genetic"
    assert template["order"][-1] == "executive_summary"
    assert template["headings"]["genetic"] == GENETIC_CHECKLIST
    assert template["lengths"]["genetic"] == (40, 900)


# -- D4 -----------------------------------------------------------------------------------


def test_d4_requires_a_resolvable_primary_source(store):
    store.put(
        _provenance(),
        {"summary": "Penetrance reaches 73%.", "primary_source": "PMID:1"},
    )
    store.put(
        _provenance(tool_name="gwas_associations"),
        {"summary": "Six aggregated signals.", "primary_source": ""},
    )
    body = (
        "Carrier penetrance reaches 73% by age 70 [ev:1].\n"
        "Aggregation shows six independent signals overall [ev:2].\n"
    )
    scores = evaluate_d4([("genetic", body)], store)
    assert scores["claims"] == 2
    assert scores["traceable"] == 1
    assert scores["ratio"] == 0.5


def test_d4_skips_invalidated_and_unresolvable_citations(store):
    record = store.put(
        _provenance(), {"summary": "Old number.", "primary_source": "PMID:1"}
    )
    store.invalidate(record.id, "withdrawn")
    body = (
        "This claim cites an invalidated record only [ev:1].\n"
        "This claim cites a record that never existed [ev:9].\n"
    )
    scores = evaluate_d4([("genetic", body)], store)
    assert scores["traceable"] == 0


def test_d4_counts_a_claim_once_if_any_citation_resolves(store):
    store.put(
        _provenance(), {"summary": "Good backing.", "primary_source": "PMID:1"}
    )
    body = "Backed twice over by one good citation [ev:9][ev:1].\n"
    scores = evaluate_d4([("genetic", body)], store)
    assert scores["traceable"] == 1
    # records without a primary_source field at all still count
    store.put(_provenance(), {"summary": "No field here."})
    scores = evaluate_d4([("genetic", "Another claim cites it [ev:2].\n")], store)
    assert scores["traceable"] == 1


# -- efficiency ---------------------------------------------------------------------------


def test_efficiency_counters_from_the_event_journal(tmp_path):
    journal = tmp_path / "state.journal"
    events = [
        {"kind": "section_started", "section": "genetic"},
        {"kind": "section_completed", "section": "genetic", "revision": 0,
         "wall_seconds": 1.5},
        {"kind": "refinement_applied", "section": "genetic", "revision": 2,
         "wall_seconds": 0.25},
        {"kind": "section_completed", "section": "homology", "revision": 0,
         "wall_seconds": 2.0},
        {"kind": "tool_invoked", "section": "homology"},
    ]
    journal.write_text(
        "".join(json.dumps(e) + "\n" for e in events), encoding="utf-8"
    )
    counters = efficiency_counters(journal)
    assert counters["sections"] == {
        "genetic": {"revisions": 2, "iterations": 2, "wall_seconds": 1.75},
        "homology": {"revisions": 0, "iterations": 1, "wall_seconds": 2.0},
    }
    assert counters["total_wall_seconds"] == 3.75


# -- evaluate_all gating --------------------------------------------------------------------


def test_evaluate_all_requires_a_finished_assessment(tmp_path):
    empty = tmp_path / "nothing-here"
    empty.mkdir()
    with pytest.raises(AssessmentIncomplete, match="state.json"):
        evaluate_all(empty)

    directory = eval_fixture.build(tmp_path / eval_fixture.ASSESSMENT_ID)
    (directory / "report.json").unlink()
    with pytest.raises(AssessmentIncomplete, match="report"):
        evaluate_all(directory)


def test_hedging_lexicon_loading(tmp_path, fixtures_dir):
    terms = load_hedging_lexicon(fixtures_dir / "hedging.txt")
    assert terms and all(t == t.lower() for t in terms)
    assert load_hedging_lexicon(None) == ()
    assert load_hedging_lexicon(tmp_path / "missing.txt") == ()

"""HTTP surface: assessment lifecycle, section reads with verification and
staleness, refinement actions, evidence lookup, evaluation, the resumable
SSE progress stream, and the error-to-status mapping.

Two live assessments back this module: a pristine one that read-only tests
share, and a scratch one that the refinement flow mutates. Route-level
validation failures run against the pristine assessment because they are
rejected before anything touches disk.
"""

import json
import shutil

import pytest
from fastapi.testclient import TestClient

from tsadraft.config import load_config
from tsadraft.drafting import ScriptedBackend
from tsadraft.orchestrator import COMPLETED, RUNNING, Assessment
from tsadraft.service import create_app

DOWNSTREAM_OF_GENETIC = {
    "species_translatability",
    "integrated_risk",
    "executive_summary",
}


def _launch(client, app, assessment_id, target="TP53"):
    response = client.post(
        "/assessments",
        json={"target": target, "config": {"assessment_id": assessment_id}},
    )
    assert response.status_code == 202
    assert response.json() == {"assessment_id": assessment_id}
    thread = app.state.threads[assessment_id]
    thread.join(timeout=120)
    assert not thread.is_alive(), "pipeline thread did not finish"


@pytest.fixture(scope="module")
def service(tmp_path_factory, fixtures_dir):
    root = tmp_path_factory.mktemp("service-root")
    config = load_config(fixtures_dir / "config.yaml")
    app = create_app(root, config, ScriptedBackend)
    client = TestClient(app)
    _launch(client, app, "tsa-svc-tp53")
    return {"app": app, "client": client, "aid": "tsa-svc-tp53", "root": root}


@pytest.fixture(scope="module")
def editable(service):
    """A second assessment the refinement tests may mutate freely."""
    _launch(service["client"], service["app"], "tsa-svc-edit")
    return "tsa-svc-edit"


def _parse_sse(text):
    events = []
    for block in text.strip().split("\n\n"):
        lines = block.splitlines()
        event_id = next(l[4:] for l in lines if l.startswith("id: "))
        data = next(l[6:] for l in lines if l.startswith("data: "))
        events.append((int(event_id), json.loads(data)))
    return events


# -- lifecycle ---------------------------------------------------------------------------


def test_created_assessment_runs_to_completion(service):
    response = service["client"].get(f"/assessments/{service['aid']}")
    assert response.status_code == 200
    body = response.json()
    assert body["assessment_id"] == service["aid"]
    assert body["status"] == COMPLETED
    assert len(body["completed"]) == 8
    assert body["failure"] is None
    assert body["target"]["identifier"] == "TP53"
    assert len(body["sections"]) == 8
    assert all(s["status"] == "generated" for s in body["sections"])
    assert all(s["revision"] == 0 for s in body["sections"])
    assert not any(s["stale"] for s in body["sections"])


def test_creating_the_same_assessment_twice_conflicts(service):
    response = service["client"].post(
        "/assessments",
        json={"target": "TP53", "config": {"assessment_id": service["aid"]}},
    )
    assert response.status_code == 409
    assert response.json()["code"] == "sequential-violation"


def test_create_requires_a_target_string(service):
    response = service["client"].post("/assessments", json={})
    assert response.status_code == 422
    body = response.json()
    assert body["code"] == "invalid-argument"
    assert "target" in body["message"]


def test_unknown_assessment_is_404(service):
    response = service["client"].get("/assessments/tsa-nope")
    assert response.status_code == 404
    body = response.json()
    assert body["code"] == "not-found"
    assert "message" in body


def test_resume_of_a_completed_assessment_short_circuits(service):
    response = service["client"].post(f"/assessments/{service['aid']}/resume")
    assert response.status_code == 202
    assert response.json() == {
        "assessment_id": service["aid"],
        "status": COMPLETED,
    }
    assert service["client"].post("/assessments/tsa-nope/resume").status_code == 404


# -- section reads -----------------------------------------------------------------------


def test_section_payload_carries_verification_and_staleness(service):
    response = service["client"].get(
        f"/assessments/{service['aid']}/sections/genetic"
    )
    assert response.status_code == 200
    body = response.json()
    assert body["section"]["section_id"]["domain"] == "genetic"
    assert body["section"]["status"] == "generated"
    assert "[ev:" in body["section"]["body"]
    assert body["verification"]["counts"]["supported"] >= 1
    assert body["verification"]["counts"]["hallucinated"] == 0
    assert body["stale"] is False
    assert body["meta"]["revision"] == 0


def test_unknown_section_name_is_404(service):
    response = service["client"].get(
        f"/assessments/{service['aid']}/sections/metabolomic"
    )
    assert response.status_code == 404
    assert "metabolomic" in response.json()["message"]


# -- evidence and evaluation ---------------------------------------------------------------


def test_evidence_lookup_round_trips_provenance(service):
    response = service["client"].get(
        f"/assessments/{service['aid']}/evidence/1"
    )
    assert response.status_code == 200
    record = response.json()
    assert record["id"] == 1
    assert record["provenance"]["tool_name"]
    assert record["provenance"]["retrieved_at"].endswith("Z")
    missing = service["client"].get(
        f"/assessments/{service['aid']}/evidence/99999"
    )
    assert missing.status_code == 404


def test_evaluation_endpoint_scores_the_finished_report(service):
    response = service["client"].get(
        f"/assessments/{service['aid']}/evaluation"
    )
    assert response.status_code == 200
    scores = response.json()
    assert scores["assessment_id"] == service["aid"]
    assert set(scores) >= {"d1", "d2", "d3", "d4", "efficiency"}
    assert scores["d1"]["counts"]["hallucinated"] == 0
    # a missing assessment 404s before any incompleteness check
    assert service["client"].get("/assessments/tsa-nope/evaluation").status_code == 404


def test_evaluation_of_an_unfinished_assessment_is_422(service):
    source = service["root"] / service["aid"]
    partial = service["root"] / "tsa-svc-partial"
    shutil.copytree(source, partial)
    (partial / "report.json").unlink()
    response = service["client"].get("/assessments/tsa-svc-partial/evaluation")
    assert response.status_code == 422
    assert response.json()["code"] == "assessment-incomplete"


# -- event stream ---------------------------------------------------------------------------


def test_event_stream_replays_the_whole_run_once(service):
    response = service["client"].get(f"/assessments/{service['aid']}/events")
    assert response.status_code == 200
    assert response.headers["content-type"].startswith("text/event-stream")
    events = _parse_sse(response.text)
    seqs = [seq for seq, _ in events]
    assert seqs == sorted(seqs)
    assert len(seqs) == len(set(seqs)), "a seq was emitted twice"
    assert seqs == list(range(1, len(seqs) + 1))
    kinds = [e["kind"] for _, e in events]
    assert kinds[0] == "section_started"
    assert kinds[-1] == "pipeline_completed"
    assert all(seq == event["seq"] for seq, event in events)


def test_event_stream_resumes_from_a_cursor(service):
    client = service["client"]
    aid = service["aid"]
    full = _parse_sse(client.get(f"/assessments/{aid}/events").text)
    tail = _parse_sse(client.get(f"/assessments/{aid}/events?after=5").text)
    assert [s for s, _ in tail] == [s for s, _ in full if s > 5]

    via_header = _parse_sse(
        client.get(
            f"/assessments/{aid}/events", headers={"Last-Event-ID": "7"}
        ).text
    )
    assert via_header[0][0] == 8
    # the larger of the two cursors wins
    combined = _parse_sse(
        client.get(
            f"/assessments/{aid}/events?after=3",
            headers={"Last-Event-ID": "7"},
        ).text
    )
    assert combined[0][0] == 8


# -- refinement actions ----------------------------------------------------------------------


def test_refinement_flow_edits_appends_reinvokes_and_uploads(service, editable):
    client = service["client"]
    original = client.get(f"/assessments/{editable}/sections/genetic").json()

    edited = client.patch(
        f"/assessments/{editable}/sections/genetic",
        json={"body": original["section"]["body"] + "\nReviewed by toxicology.\n"},
    )
    assert edited.status_code == 200
    body = edited.json()
    assert body["section"]["revision"] == 1
    assert body["section"]["status"] == "user_edited"
    assert {d for d, flag in body["stale"].items() if flag} == DOWNSTREAM_OF_GENETIC

    listing = client.get(f"/assessments/{editable}").json()
    by_domain = {s["domain"]: s for s in listing["sections"]}
    assert by_domain["genetic"]["revision"] == 1
    assert by_domain["species_translatability"]["stale"] is True
    assert by_domain["transcriptomic"]["stale"] is False

    appended = client.post(
        f"/assessments/{editable}/sections/genetic/append",
        json={"text": "Registry follow-up is still pending."},
    )
    assert appended.status_code == 200
    assert appended.json()["section"]["revision"] == 2
    assert appended.json()["section"]["body"].endswith(
        "Registry follow-up is still pending."
    )

    reinvoked = client.post(
        f"/assessments/{editable}/sections/genetic/reinvoke",
        json={"instruction": "Give the GWAS subsection more weight."},
    )
    assert reinvoked.status_code == 200
    body = reinvoked.json()
    assert body["section"]["revision"] == 3
    assert body["section"]["status"] == "revised"
    assert "Revised emphasis:" in body["section"]["body"]
    assert body["verification"]["counts"]["hallucinated"] == 0

    uploaded = client.post(
        f"/assessments/{editable}/uploads",
        json={
            "filename": "panel-notes.md",
            "content": "No dose-limiting toxicity.\n\nTwo grade-2 events.",
            "section": "clinical",
        },
    )
    assert uploaded.status_code == 200
    assert len(uploaded.json()["evidence_ids"]) == 2


def test_edit_citing_unknown_evidence_maps_to_422(service, editable):
    client = service["client"]
    current = client.get(f"/assessments/{editable}/sections/genetic").json()
    response = client.patch(
        f"/assessments/{editable}/sections/genetic",
        json={
            "body": current["section"]["body"]
            + "\nA registry scan located 12 more families [ev:9999].\n"
        },
    )
    assert response.status_code == 422
    body = response.json()
    assert body["code"] == "section-failed"
    assert body["cause_code"] == "hallucinated-citation"
    # nothing was applied
    after = client.get(f"/assessments/{editable}/sections/genetic").json()
    assert after["section"]["body"] == current["section"]["body"]


@pytest.mark.parametrize(
    ("method", "path", "payload", "fragment"),
    [
        ("patch", "/sections/genetic", {}, "body"),
        ("post", "/sections/genetic/append", {"text": ""}, "text"),
        ("post", "/sections/genetic/reinvoke", {}, "instruction"),
        ("post", "/uploads", {"content": "x"}, "filename"),
    ],
)
def test_malformed_refinement_requests_are_422(
    service, method, path, payload, fragment
):
    client = service["client"]
    response = getattr(client, method)(
        f"/assessments/{service['aid']}{path}", json=payload
    )
    assert response.status_code == 422
    body = response.json()
    assert body["code"] == "invalid-argument"
    assert fragment in body["message"]


def test_refining_an_unknown_assessment_is_404(service):
    response = service["client"].patch(
        "/assessments/tsa-nope/sections/genetic", json={"body": "x"}
    )
    assert response.status_code == 404


def test_reinvoke_while_the_pipeline_runs_is_409(service):
    directory = service["root"] / service["aid"]
    assessment = Assessment.open(directory)
    assessment.state.status = RUNNING
    assessment.save_state()
    try:
        response = service["client"].post(
            f"/assessments/{service['aid']}/sections/genetic/reinvoke",
            json={"instruction": "tighten"},
        )
        assert response.status_code == 409
        body = response.json()
        assert body["code"] == "sequential-violation"
        assert "running" in body["message"]
    finally:
        assessment.state.status = COMPLETED
        assessment.save_state()

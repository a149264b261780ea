"""Record the HTTP fixtures the review UI test suite replays.

Runs one scripted assessment through the live FastAPI app and captures every
response the UI consumes: the assessment listing, all eight section payloads,
evidence lookups (including a 404 and an invalidated record), the busy 409,
a genetic reinvocation with its staleness fallout, a server-confirmed no-op
edit, and the full event stream before and after refinement.

Usage: python3 scripts/record_ui_fixtures.py
"""

import json
import re
import shutil
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from tsadraft.config import load_config  # noqa: E402
from tsadraft.drafting import ScriptedBackend  # noqa: E402
from tsadraft.evidence import EvidenceStore  # noqa: E402
from tsadraft.orchestrator import COMPLETED, RUNNING, Assessment  # noqa: E402
from tsadraft.service import create_app  # noqa: E402

ASSESSMENT_ID = "tsa-ui-tp53"
OUT = ROOT / "frontend" / "tests" / "fixtures"
CITATION_RE = re.compile(r"\[ev:(\d+)\]")


def _dump(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")


def _record_cited_evidence(client, bodies, seen: set[int]) -> None:
    for body in bodies:
        for raw in CITATION_RE.findall(body):
            eid = int(raw)
            if eid in seen:
                continue
            seen.add(eid)
            response = client.get(
                f"/assessments/{ASSESSMENT_ID}/evidence/{eid}"
            )
            assert response.status_code == 200, (eid, response.text)
            _dump(OUT / "evidence" / f"{eid}.json", response.json())


def main() -> None:
    if OUT.exists():
        shutil.rmtree(OUT)
    root = Path(tempfile.mkdtemp(prefix="tsa-ui-fixtures-"))
    config = load_config(ROOT / "fixtures" / "config.yaml")
    app = create_app(root, config, ScriptedBackend)
    client = TestClient(app)

    response = client.post(
        "/assessments",
        json={"target": "TP53", "config": {"assessment_id": ASSESSMENT_ID}},
    )
    assert response.status_code == 202, response.text
    app.state.threads[ASSESSMENT_ID].join(timeout=120)

    listing = client.get(f"/assessments/{ASSESSMENT_ID}").json()
    assert listing["status"] == COMPLETED, listing
    _dump(OUT / "assessment.json", listing)

    bodies = []
    for row in listing["sections"]:
        payload = client.get(
            f"/assessments/{ASSESSMENT_ID}/sections/{row['domain']}"
        ).json()
        bodies.append(payload["section"]["body"])
        _dump(OUT / "sections" / f"{row['domain']}.json", payload)

    stream = client.get(f"/assessments/{ASSESSMENT_ID}/events")
    assert stream.headers["content-type"].startswith("text/event-stream")
    (OUT / "events.sse").write_text(stream.text, encoding="utf-8")

    seen: set[int] = set()
    _record_cited_evidence(client, bodies, seen)

    missing = client.get(f"/assessments/{ASSESSMENT_ID}/evidence/99999")
    assert missing.status_code == 404
    _dump(OUT / "evidence_404.json", missing.json())

    # an invalidated, uncited record for the flagged-panel rendering test
    with EvidenceStore(root / ASSESSMENT_ID, ASSESSMENT_ID) as store:
        uncited = [r.id for r in store.query() if r.id not in seen]
        assert uncited, "every store record is cited; cannot stage one"
        staged = uncited[-1]
        store.invalidate(staged, "superseded by curator review")
    flagged = client.get(f"/assessments/{ASSESSMENT_ID}/evidence/{staged}")
    assert flagged.status_code == 200 and flagged.json()["invalidated"]
    _dump(OUT / "evidence_invalidated.json", flagged.json())

    # busy flip: exactly the state the orchestrator holds mid-run
    assessment = Assessment.open(root / ASSESSMENT_ID)
    assessment.state.status = RUNNING
    assessment.state.current = "transcriptomic"
    assessment.save_state()
    _dump(OUT / "assessment_running.json",
          client.get(f"/assessments/{ASSESSMENT_ID}").json())
    busy = client.post(
        f"/assessments/{ASSESSMENT_ID}/sections/genetic/reinvoke",
        json={"instruction": "tighten"},
    )
    assert busy.status_code == 409, busy.text
    _dump(OUT / "busy_409.json", busy.json())
    assessment.state.status = COMPLETED
    assessment.state.current = None
    assessment.save_state()

    reinvoked = client.post(
        f"/assessments/{ASSESSMENT_ID}/sections/genetic/reinvoke",
        json={"instruction": "Give the GWAS subsection more weight."},
    )
    assert reinvoked.status_code == 200, reinvoked.text
    _dump(OUT / "reinvoke_genetic.json", reinvoked.json())
    _record_cited_evidence(client, [reinvoked.json()["section"]["body"]], seen)

    refined = client.get(f"/assessments/{ASSESSMENT_ID}").json()
    stale = sorted(r["domain"] for r in refined["sections"] if r["stale"])
    assert stale == ["executive_summary", "integrated_risk",
                     "species_translatability"], stale
    _dump(OUT / "assessment_refined.json", refined)
    _dump(OUT / "sections_refined" / "genetic.json",
          client.get(f"/assessments/{ASSESSMENT_ID}/sections/genetic").json())

    noop = client.patch(
        f"/assessments/{ASSESSMENT_ID}/sections/genetic",
        json={"body": reinvoked.json()["section"]["body"]},
    )
    assert noop.status_code == 200, noop.text
    assert noop.json()["section"]["revision"] == 1, "no-op bumped the revision"
    _dump(OUT / "noop_edit.json", noop.json())

    stream = client.get(f"/assessments/{ASSESSMENT_ID}/events")
    (OUT / "events_refined.sse").write_text(stream.text, encoding="utf-8")

    shutil.rmtree(root)
    files = sorted(p.relative_to(OUT).as_posix() for p in OUT.rglob("*")
                   if p.is_file())
    print(f"recorded {len(files)} fixture files under {OUT}")
    for name in files:
        print(f"  {name}")


if __name__ == "__main__":
    main()

"""HTTP surface for assessments: creation, inspection, refinement actions,
evidence lookup, evaluation, and a resumable progress event stream.

Every error carries the originating module's error code verbatim:
not-found maps to 404, sequential-violation to 409, and everything else
to 422 with the code in the body. The event stream is server-sent events;
clients resume with the ``after`` query parameter or the Last-Event-ID
header, and no seq is ever emitted twice to the same connection.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path

from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .config import merge_overrides
from .domain import Domain, SectionStatus, normalize_target_identifier
from .errors import (
    InvalidArgument,
    NotFound,
    SequentialViolation,
    TsaError,
)
from .evaluation import evaluate_all
from .evidence import EvidenceStore
from .grounding import verify_section
from .memory import load_graph
from .orchestrator import (
    COMPLETED,
    FAILED,
    INTERRUPTED,
    RUNNING,
    Assessment,
    lease_alive,
    plan,
    resume,
    run,
)
from .refinement import (
    APPEND,
    EDIT,
    REINVOKE,
    UPLOAD,
    RefinementAction,
    apply as apply_refinement,
    staleness,
)

_STATUS_BY_CODE = {
    "not-found": 404,
    "sequential-violation": 409,
}


def _http_status(exc: TsaError) -> int:
    return _STATUS_BY_CODE.get(exc.code, 422)


def _error_body(exc: TsaError) -> dict:
    body = {"code": exc.code, "message": exc.message}
    if getattr(exc, "cause_code", None):
        body["cause_code"] = exc.cause_code
    details = {
        k: v for k, v in exc.details.items()
        if isinstance(v, (str, int, float, bool, list, dict, type(None)))
    }
    if details:
        body["details"] = details
    return body


def create_app(root: Path | str, config: dict, backend_factory,
               judge=None) -> FastAPI:
    app = FastAPI(title="tsadraft", docs_url=None, redoc_url=None)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    app.state.root = root
    app.state.config = config
    app.state.backend_factory = backend_factory
    app.state.judge = judge
    app.state.threads = {}

    @app.exception_handler(TsaError)
    async def _tsa_error(request: Request, exc: TsaError):
        return JSONResponse(status_code=_http_status(exc), content=_error_body(exc))

    def _dir(assessment_id: str) -> Path:
        return root / assessment_id

    def _open(assessment_id: str) -> Assessment:
        return Assessment.open(_dir(assessment_id))

    def _domain(section_id: str) -> str:
        try:
            return Domain(section_id).value
        except ValueError:
            raise NotFound(f"unknown section {section_id!r}")

    def _graph(assessment: Assessment):
        return load_graph(assessment.config.get("graph"))

    def _start_pipeline(target_fn, assessment_id: str) -> None:
        def runner():
            try:
                target_fn()
            except TsaError:
                pass  # state and journals already record the failure

        thread = threading.Thread(target=runner, daemon=True)
        app.state.threads[assessment_id] = thread
        thread.start()

    def _section_payload(assessment: Assessment, domain: str) -> dict:
        draft = assessment.read_section(domain)
        config = assessment.config.get("config", {})
        with EvidenceStore(
            assessment.directory, assessment.state.assessment_id
        ) as store:
            verification = verify_section(
                draft, store, judge=None, tau=config.get("tau", 0.5)
            )
        stale = staleness(assessment.state.section_meta, _graph(assessment))
        meta = assessment.state.section_meta.get(domain, {})
        return {
            "section": draft.to_dict(),
            "verification": verification.to_dict(),
            "stale": stale.get(domain, False),
            "meta": meta,
        }

    @app.post("/assessments", status_code=202)
    def create_assessment(payload: dict = Body(...)):
        raw_target = payload.get("target")
        if not raw_target or not isinstance(raw_target, str):
            raise InvalidArgument("request body needs a 'target' string")
        context = payload.get("context") or {}
        target = normalize_target_identifier(
            raw_target,
            therapeutic_area=context.get("therapeutic_area"),
            modality=context.get("modality"),
            species_context=tuple(context.get("species_context") or ()),
            free_text_context=context.get("free_text"),
        )
        cfg = merge_overrides(app.state.config, payload.get("config") or {})
        plan_ = plan(target, cfg)
        directory = _dir(plan_.assessment_id)
        if (directory / "state.json").exists():
            raise SequentialViolation(
                f"assessment {plan_.assessment_id} already exists"
            )
        backend = app.state.backend_factory()
        _start_pipeline(
            lambda: run(plan_, directory, backend, judge=app.state.judge),
            plan_.assessment_id,
        )
        return {"assessment_id": plan_.assessment_id}

    @app.get("/assessments/{assessment_id}")
    def get_assessment(assessment_id: str):
        assessment = _open(assessment_id)
        state = assessment.state
        stale = staleness(state.section_meta, _graph(assessment))
        sections = []
        for domain in assessment.config.get("sections", []):
            meta = state.section_meta.get(domain)
            sections.append(
                {
                    "domain": domain,
                    "status": meta["status"] if meta else SectionStatus.PENDING.value,
                    "revision": meta["revision"] if meta else 0,
                    "stale": stale.get(domain, False),
                }
            )
        return {
            "assessment_id": state.assessment_id,
            "status": state.status,
            "target": state.target.to_dict(),
            "completed": state.completed,
            "current": state.current,
            "failure": state.failure,
            "sections": sections,
            "created_at": state.created_at,
            "updated_at": state.updated_at,
        }

    @app.get("/assessments/{assessment_id}/sections/{section_id}")
    def get_section(assessment_id: str, section_id: str):
        assessment = _open(assessment_id)
        return _section_payload(assessment, _domain(section_id))

    def _refine(assessment_id: str, action: RefinementAction) -> dict:
        directory = _dir(assessment_id)
        if not (directory / "state.json").exists():
            raise NotFound(f"no assessment {assessment_id}")
        result = apply_refinement(
            directory, action, app.state.backend_factory(), judge=app.state.judge
        )
        body = {
            "section": result.section.to_dict() if result.section else None,
            "verification": result.verification.to_dict()
            if result.verification
            else None,
            "stale": result.stale,
        }
        if result.evidence_ids:
            body["evidence_ids"] = result.evidence_ids
        return body

    @app.patch("/assessments/{assessment_id}/sections/{section_id}")
    def edit_section(assessment_id: str, section_id: str,
                     payload: dict = Body(...)):
        if "body" not in payload:
            raise InvalidArgument("request body needs 'body'")
        action = RefinementAction(
            kind=EDIT,
            section_id=_domain(section_id),
            payload=payload["body"],
            actor=payload.get("actor", "reviewer"),
        )
        return _refine(assessment_id, action)

    @app.post("/assessments/{assessment_id}/sections/{section_id}/append")
    def append_section(assessment_id: str, section_id: str,
                       payload: dict = Body(...)):
        if not payload.get("text"):
            raise InvalidArgument("request body needs non-empty 'text'")
        action = RefinementAction(
            kind=APPEND,
            section_id=_domain(section_id),
            payload=payload["text"],
            actor=payload.get("actor", "reviewer"),
        )
        return _refine(assessment_id, action)

    @app.post("/assessments/{assessment_id}/sections/{section_id}/reinvoke")
    def reinvoke_section(assessment_id: str, section_id: str,
                         payload: dict = Body(...)):
        if not payload.get("instruction"):
            raise InvalidArgument("request body needs non-empty 'instruction'")
        action = RefinementAction(
            kind=REINVOKE,
            section_id=_domain(section_id),
            payload=payload["instruction"],
            actor=payload.get("actor", "reviewer"),
        )
        return _refine(assessment_id, action)

    @app.post("/assessments/{assessment_id}/uploads")
    def upload_document(assessment_id: str, payload: dict = Body(...)):
        if not payload.get("filename"):
            raise InvalidArgument("request body needs 'filename' and 'content'")
        action = RefinementAction(
            kind=UPLOAD,
            section_id=_domain(payload.get("section", "executive_summary")),
            payload={
                "filename": payload["filename"],
                "content": payload.get("content", ""),
            },
            actor=payload.get("actor", "reviewer"),
        )
        return _refine(assessment_id, action)

    @app.get("/assessments/{assessment_id}/evidence/{evidence_id}")
    def get_evidence(assessment_id: str, evidence_id: int):
        assessment = _open(assessment_id)
        with EvidenceStore(
            assessment.directory, assessment.state.assessment_id
        ) as store:
            record = store.get(evidence_id)
        return record.to_dict()

    @app.post("/assessments/{assessment_id}/resume", status_code=202)
    def resume_assessment(assessment_id: str):
        assessment = _open(assessment_id)
        status = assessment.state.status
        if status == RUNNING and lease_alive(assessment.directory):
            raise SequentialViolation("pipeline is already running")
        if status == COMPLETED:
            return {"assessment_id": assessment_id, "status": COMPLETED}
        directory = _dir(assessment_id)
        backend = app.state.backend_factory()
        _start_pipeline(
            lambda: resume(directory, backend, judge=app.state.judge),
            assessment_id,
        )
        return {"assessment_id": assessment_id, "status": "resuming"}

    @app.get("/assessments/{assessment_id}/evaluation")
    def get_evaluation(assessment_id: str):
        _open(assessment_id)  # 404 before assessment-incomplete
        return evaluate_all(_dir(assessment_id)).to_dict()

    @app.get("/assessments/{assessment_id}/events")
    def get_events(assessment_id: str, request: Request, after: int = 0):
        _open(assessment_id)
        cursor = after
        last_event_id = request.headers.get("last-event-id")
        if last_event_id and last_event_id.isdigit():
            cursor = max(cursor, int(last_event_id))

        def stream(cursor: int):
            while True:
                assessment = Assessment.open(_dir(assessment_id))
                for event in assessment.read_events(after=cursor):
                    cursor = event["seq"]
                    data = json.dumps(event, ensure_ascii=False)
                    yield f"id: {event['seq']}\ndata: {data}\n\n"
                terminal = assessment.state.status in (COMPLETED, FAILED, INTERRUPTED)
                if terminal and not lease_alive(assessment.directory):
                    for event in assessment.read_events(after=cursor):
                        cursor = event["seq"]
                        data = json.dumps(event, ensure_ascii=False)
                        yield f"id: {event['seq']}\ndata: {data}\n\n"
                    return
                time.sleep(0.1)

        return StreamingResponse(stream(cursor), media_type="text/event-stream")

    return app

"""HTTP surface of the triage service.

Endpoints:
    POST /cases                     multipart image upload -> 201 Case
    GET  /cases?status=...          paginated queue, oldest first
    GET  /cases/{id}                full case with the 9-way score vector
    GET  /cases/{id}/image          the stored submission (thumbnail source)
    POST /cases/{id}/vetting        vetting decision -> 200; 409 if already vetted
    POST /admin/incorporate         fold vetted cases into the manifest
    POST /admin/model               activate a checkpoint by path
    GET  /health                    active model digest + queue depth

Vetter identity is the static ``vetter_id`` field or the ``X-Vetter-Id``
header; there is deliberately no further auth here.
"""

from __future__ import annotations

from fastapi import FastAPI, File, Header, HTTPException, UploadFile
from fastapi.responses import FileResponse
from pydantic import BaseModel

from dermatriage.labels import parse_label, UnknownLabelError
from dermatriage.modelzoo import CheckpointError, ImageDecodeError
from dermatriage.service import (
    AlreadyVettedError,
    Case,
    CaseNotFoundError,
    CaseStatus,
    InvalidDecisionError,
    NoActiveModelError,
    TriageService,
    Verdict,
    VettingDecision,
)


class VettingBody(BaseModel):
    verdict: str
    corrected_label: str | None = None
    vetter_id: str | None = None
    note: str = ""


class ActivateBody(BaseModel):
    checkpoint_path: str
    expected_digest: str | None = None


class IncorporateBody(BaseModel):
    manifest_path: str | None = None


def _case_json(case: Case) -> dict:
    ranked = case.scores.ranked()
    return {
        "case_id": case.case_id,
        "image_ref": case.image_ref,
        "submitted_at": case.submitted_at,
        "predicted_label": case.predicted_label.value,
        "scores": [{"label": lab.value, "probability": p} for lab, p in ranked],
        "model_digest": case.model_digest,
        "status": case.status.value,
        "final_label": case.final_label.value if case.final_label else None,
    }


def _queue_entry(case: Case) -> dict:
    return {
        "case_id": case.case_id,
        "thumbnail": f"/cases/{case.case_id}/image",
        "predicted_label": case.predicted_label.value,
        "top_scores": [
            {"label": lab.value, "probability": p} for lab, p in case.scores.top(3)
        ],
        "submitted_at": case.submitted_at,
    }


def create_app(service: TriageService) -> FastAPI:
    app = FastAPI(title="dermatriage", docs_url=None, redoc_url=None)

    @app.post("/cases", status_code=201)
    async def submit_case(image: UploadFile = File(...)):
        payload = await image.read()
        try:
            case = service.submit_case(payload)
        except NoActiveModelError as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        except ImageDecodeError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return _case_json(case)

    @app.get("/cases")
    def list_cases(status: str = "pending_vetting", cursor: int = 0, limit: int = 20):
        try:
            wanted = CaseStatus(status.upper())
        except ValueError:
            raise HTTPException(status_code=400, detail=f"unknown status {status!r}")
        if wanted is not CaseStatus.PENDING_VETTING:
            cases = service.store.by_status(wanted)
            return {
                "cases": [_queue_entry(c) for c in cases[cursor : cursor + limit]],
                "next_cursor": cursor + limit if cursor + limit < len(cases) else None,
                "queue_depth": len(cases),
            }
        page, next_cursor, depth = service.pending_queue(cursor=cursor, limit=limit)
        return {
            "cases": [_queue_entry(c) for c in page],
            "next_cursor": next_cursor,
            "queue_depth": depth,
        }

    @app.get("/cases/{case_id}")
    def get_case(case_id: str):
        try:
            return _case_json(service.get_case(case_id))
        except CaseNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/cases/{case_id}/image")
    def get_case_image(case_id: str):
        try:
            case = service.get_case(case_id)
        except CaseNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return FileResponse(case.image_ref)

    @app.post("/cases/{case_id}/vetting")
    def record_vetting(case_id: str, body: VettingBody, x_vetter_id: str | None = Header(default=None)):
        vetter = body.vetter_id or x_vetter_id
        try:
            decision = VettingDecision(
                case_id=case_id,
                verdict=Verdict(body.verdict.upper()),
                vetter_id=vetter or "",
                corrected_label=parse_label(body.corrected_label) if body.corrected_label else None,
                note=body.note,
            )
            case = service.record_vetting(decision)
        except (InvalidDecisionError, UnknownLabelError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except CaseNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except AlreadyVettedError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return _case_json(case)

    @app.post("/admin/incorporate")
    def incorporate(body: IncorporateBody | None = None):
        manifest_path = body.manifest_path if body else None
        try:
            report = service.incorporate_vetted(manifest_path)
        except Exception as exc:
            raise HTTPException(status_code=500, detail=str(exc))
        return report.to_dict()

    @app.post("/admin/model")
    def activate_model(body: ActivateBody):
        try:
            active = service.activate_checkpoint(body.checkpoint_path, body.expected_digest)
        except CheckpointError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "digest": active.digest,
            "backbone": active.backbone,
            "strategy": active.strategy,
            "checkpoint_path": active.checkpoint_path,
        }

    @app.get("/health")
    def health():
        active = service.active_model
        _, _, depth = service.pending_queue(limit=1)
        return {
            "status": "ok",
            "model_digest": active.digest if active else None,
            "queue_depth": depth,
        }

    return app

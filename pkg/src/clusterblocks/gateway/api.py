"""Presentation tier: JSON over HTTP.

This module only translates between the wire and the service layer; it
performs no persistence and holds no node channel. Every operational error
maps to exactly one (code, HTTP status) pair via STATUS_BY_CODE.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, File, Form, Header, Request, Response, UploadFile
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..errors import ClusterError
from .service import GatewayService

STATUS_BY_CODE: dict[str, int] = {
    "empty_field": 400,
    "non_positive_node_count": 400,
    "unknown_module": 400,
    "archive_corrupt": 400,
    "empty_archive": 400,
    "bad_assignment": 400,
    "invalid_period": 400,
    "bad_config": 400,
    "bad_request": 400,
    "bad_token": 401,
    "bad_credential": 401,
    "not_found": 404,
    "unknown_application": 404,
    "no_nodes_matched": 404,
    "unknown_node": 404,
    "no_such_file": 404,
    "unknown_block": 404,
    "illegal_transition": 409,
    "period_too_long": 409,
    "node_count_out_of_policy": 409,
    "wrong_job_state": 409,
    "not_active": 409,
    "not_finished": 409,
    "conflict": 409,
    "environment_mismatch": 409,
    "archive_too_large": 413,
    "insufficient_free_nodes": 503,
    "race_lost": 503,
    "node_unreachable": 503,
}


class RegistrationIn(BaseModel):
    name: str = ""
    contact: str = ""
    job_description: str = ""
    nodes_requested: int = 0


class ReviewIn(BaseModel):
    decision: str
    node_count: Optional[int] = None
    period_hours: Optional[float] = None


class PreviewIn(BaseModel):
    node_count: int


class FanoutIn(BaseModel):
    selector: str
    command: str


def _bearer(authorization: Optional[str]) -> Optional[str]:
    if authorization and authorization.lower().startswith("bearer "):
        return authorization[7:].strip()
    return None


def create_app(service: GatewayService) -> FastAPI:
    app = FastAPI(title="clusterblocks gateway", docs_url=None, redoc_url=None)

    @app.exception_handler(ClusterError)
    async def cluster_error_handler(request: Request, exc: ClusterError) -> JSONResponse:
        status = STATUS_BY_CODE.get(exc.code, 500)
        return JSONResponse(
            status_code=status,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    # -- user flow ---------------------------------------------------------------

    @app.post("/applications", status_code=201)
    def submit_registration(body: RegistrationIn) -> dict:
        return service.submit_registration(
            body.name, body.contact, body.job_description, body.nodes_requested
        )

    @app.get("/applications/{app_id}")
    def get_application(app_id: str, authorization: Optional[str] = Header(None)) -> dict:
        return service.get_application(app_id, _bearer(authorization))

    @app.post("/applications/{app_id}/confirm")
    def confirm(app_id: str, authorization: Optional[str] = Header(None)) -> dict:
        return service.confirm(app_id, _bearer(authorization))

    @app.post("/applications/{app_id}/jobs", status_code=201)
    def upload_job(
        app_id: str,
        archive: UploadFile = File(...),
        environment: str = Form(...),
        authorization: Optional[str] = Header(None),
    ) -> dict:
        data = archive.file.read()
        return service.upload_job(app_id, _bearer(authorization), data, environment)

    @app.post("/jobs/{job_id}/execute")
    def execute_job(job_id: str, authorization: Optional[str] = Header(None)) -> dict:
        return service.execute_job(_bearer(authorization), job_id)

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str, authorization: Optional[str] = Header(None)) -> dict:
        return service.job_status(_bearer(authorization), job_id)

    @app.get("/jobs/{job_id}/result")
    def download_results(job_id: str, authorization: Optional[str] = Header(None)) -> Response:
        data = service.download_results(_bearer(authorization), job_id)
        return Response(content=data, media_type="application/octet-stream")

    @app.get("/applications/{app_id}/report")
    def usage_report(
        app_id: str,
        authorization: Optional[str] = Header(None),
        x_admin_secret: Optional[str] = Header(None),
    ) -> dict:
        return service.usage_report(app_id, _bearer(authorization), x_admin_secret)

    # -- monitoring -----------------------------------------------------------------

    @app.get("/cluster")
    def cluster_snapshot(x_admin_secret: Optional[str] = Header(None)) -> dict:
        return service.cluster_snapshot(x_admin_secret)

    # -- admin flow --------------------------------------------------------------------

    @app.get("/admin/applications")
    def list_applications(
        state: Optional[str] = None, x_admin_secret: Optional[str] = Header(None)
    ) -> list[dict]:
        return service.list_applications(x_admin_secret, state)

    @app.post("/admin/applications/{app_id}/review")
    def admin_review(
        app_id: str, body: ReviewIn, x_admin_secret: Optional[str] = Header(None)
    ) -> dict:
        return service.admin_review(x_admin_secret, app_id, body.model_dump())

    @app.post("/admin/applications/{app_id}/preview")
    def admin_preview(
        app_id: str, body: PreviewIn, x_admin_secret: Optional[str] = Header(None)
    ) -> dict:
        return service.admin_preview(x_admin_secret, app_id, body.node_count)

    @app.post("/admin/fanout")
    def admin_fanout(body: FanoutIn, x_admin_secret: Optional[str] = Header(None)) -> list[dict]:
        return service.admin_fanout(x_admin_secret, body.selector, body.command)

    console_dir = service.config.console_dir
    if console_dir and Path(console_dir).is_dir():
        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    return app

"""HTTP JSON API over the service store, plus static serving for the UI."""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..agent import BadConfigError
from .store import (
    AlreadyResolvedError,
    BadDatasetError,
    ServiceStore,
    UnknownEventError,
    UnknownRunError,
)


def default_ui_dir() -> Path | None:
    configured = os.environ.get("TW_UI_DIR")
    if configured:
        return Path(configured)
    bundled = Path(__file__).resolve().parents[4] / "frontend" / "dist"
    return bundled if bundled.is_dir() else None


def create_app(store: ServiceStore, ui_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="trackwatch", version="0.1.0")

    @app.exception_handler(BadDatasetError)
    @app.exception_handler(BadConfigError)
    async def _bad_request(request: Request, exc: Exception):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(UnknownRunError)
    @app.exception_handler(UnknownEventError)
    async def _not_found(request: Request, exc: Exception):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(AlreadyResolvedError)
    async def _conflict(request: Request, exc: Exception):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.post("/api/runs")
    async def start_run(body: dict):
        dataset = body.get("dataset")
        if not dataset:
            raise HTTPException(status_code=400, detail="dataset is required")
        run_id = store.start_run(
            dataset, config=body.get("config"), wait=bool(body.get("wait"))
        )
        return {"run_id": run_id, "status": store.get_run(run_id).status}

    @app.get("/api/runs/{run_id}")
    async def get_run(run_id: str):
        return store.get_run(run_id).to_dict()

    @app.get("/api/anomalies")
    async def list_anomalies(
        status: str | None = Query(default="pending"), run_id: str | None = None
    ):
        return store.list_anomalies(status=status or None, run_id=run_id)

    @app.post("/api/anomalies/{event_id}/feedback")
    async def submit_feedback(event_id: str, body: dict):
        verdict = body.get("verdict")
        if verdict not in ("Agree", "Disagree"):
            raise HTTPException(status_code=400, detail="verdict must be Agree or Disagree")
        return store.submit_feedback(
            event_id,
            verdict,
            note=body.get("note"),
            operator=body.get("operator", ""),
        )

    @app.get("/api/reports/{event_id}")
    async def get_report(event_id: str):
        return store.get_report(event_id)

    @app.get("/api/runs/{run_id}/errors")
    async def get_errors(run_id: str, dss: int | None = None, scid: int | None = None):
        return store.get_errors(run_id, dss=dss, scid=scid)

    ui = ui_dir if ui_dir is not None else default_ui_dir()
    if ui is not None and ui.is_dir():
        app.mount("/", StaticFiles(directory=ui, html=True), name="ui")
    return app

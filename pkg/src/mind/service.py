"""REST surface for the annotation workflows.

JSON endpoints over an :class:`AnnotationStore`; the review console is an
optional static bundle mounted at the root. Authentication is a static
rater id supplied as a query parameter or ``X-Rater-Id`` header.
"""
from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .annotation import AnnotationStore, AspectRatings, qualification_score
from .errors import (
    AnnotationError,
    DuplicateSubmission,
    LengthMismatch,
    TaskComplete,
    UnknownTask,
)
from .pipeline import utc_now_iso

ANNOTATE_ADDR_ENV = "MIND_ANNOTATE_ADDR"
DEFAULT_ADDR = "127.0.0.1:8700"


class RatingIn(BaseModel):
    rater_id: str | None = None
    plausibility: int = Field(ge=0, le=1)
    typicality: int = Field(ge=0, le=1)
    human_centric: int = Field(ge=0, le=1)
    filter_rationale: int = Field(ge=0, le=1)


class QualificationIn(BaseModel):
    answers: list[str]
    key: list[str]


def create_app(store: AnnotationStore, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="intention annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/tasks/next")
    def tasks_next(rater: str = Query(...)):
        task = store.next_task(rater)
        if task is None:
            raise HTTPException(status_code=404, detail="no open tasks for this rater")
        return task.as_dict()

    @app.get("/tasks/{task_id}")
    def get_task(task_id: str):
        try:
            return store.get_task(task_id).as_dict()
        except UnknownTask as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.post("/tasks/{task_id}/ratings", status_code=201)
    def post_rating(
        task_id: str, body: RatingIn, x_rater_id: str | None = Header(default=None)
    ):
        rater_id = body.rater_id or x_rater_id
        if not rater_id:
            raise HTTPException(status_code=422, detail="rater_id required (body or X-Rater-Id)")
        try:
            rating = AspectRatings(
                rater_id=rater_id,
                task_id=task_id,
                plausibility=body.plausibility,
                typicality=body.typicality,
                human_centric=body.human_centric,
                filter_rationale=body.filter_rationale,
                submitted_at=utc_now_iso(),
            )
            return store.submit_rating(rating)
        except UnknownTask as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except (DuplicateSubmission, TaskComplete) as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except AnnotationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/reports/agreement")
    def agreement(aspect: str = Query(default="all")):
        try:
            return store.agreement_report(aspect).as_dict()
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/reports/typicality")
    def typicality():
        return store.typicality_by_relation()

    @app.get("/reports/summary")
    def summary():
        return store.summary()

    @app.post("/qualification/score")
    def qualify(body: QualificationIn):
        try:
            return qualification_score(body.answers, body.key).as_dict()
        except LengthMismatch as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app


def resolve_addr(addr: str | None = None) -> tuple[str, int]:
    value = addr or os.environ.get(ANNOTATE_ADDR_ENV) or DEFAULT_ADDR
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise AnnotationError(f"invalid listen address {value!r}, expected host:port")
    return host, int(port)


def serve(store: AnnotationStore, addr: str | None = None, static_dir: str | Path | None = None) -> None:
    import uvicorn

    host, port = resolve_addr(addr)
    uvicorn.run(create_app(store, static_dir=static_dir), host=host, port=port, log_level="info")

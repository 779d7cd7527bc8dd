"""HTTP API the review frontend consumes.

Versioned JSON endpoints under /api/v1, read-only image bytes under
/images/, and (when a built frontend is present) static assets at /. All
mutations go through the decision endpoint; stale revisions get 409.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..schema import ReviewStatus, TripletRecord, ValidationError
from .store import (
    ReviewAction,
    ReviewConflictError,
    ReviewDecision,
    ReviewNotFoundError,
    ReviewStore,
)


class DecisionPayload(BaseModel):
    action: str
    expected_revision: int
    reviewer: str = "reviewer"
    revised_instruction: str | None = None
    regeneration_hint: str | None = None


def record_summary(rec: TripletRecord) -> dict[str, Any]:
    provenance_snippet = {
        key: rec.provenance[key]
        for key in ("seed", "run_seed", "parent", "video_id", "frame_indices", "hint")
        if key in rec.provenance
    }
    return {
        "id": rec.id,
        "instruction": rec.instruction,
        "output_description": rec.output_description,
        "category": rec.category.value,
        "branch": rec.branch.value,
        "keywords": rec.keywords,
        "review": rec.review.value,
        "review_note": rec.review_note,
        "revision": rec.revision,
        "input_image_url": f"/images/{rec.input_image}",
        "output_image_url": f"/images/{rec.output_image}",
        "provenance": provenance_snippet,
    }


def create_app(
    store: ReviewStore,
    images_root: str | Path,
    static_dir: str | Path | None = None,
    token: str | None = None,
    rescorer: Callable[..., dict[str, Any]] | None = None,
) -> FastAPI:
    """Build the app; ``rescorer``, when given, re-runs the discriminator on
    every instruction revision and attaches the result to the record."""
    app = FastAPI(title="editforge review service", version="1")
    images_root = Path(images_root).resolve()

    def check_token(x_review_token: str | None = Header(default=None)) -> None:
        if token is not None and x_review_token != token:
            raise HTTPException(status_code=401, detail="missing or invalid reviewer token")

    @app.get("/api/v1/records", dependencies=[Depends(check_token)])
    def list_records(
        status: str | None = None,
        branch: str | None = None,
        category: str | None = None,
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=20, ge=1, le=200),
    ) -> dict[str, Any]:
        status_enum = None
        if status is not None:
            try:
                status_enum = ReviewStatus(status)
            except ValueError:
                raise HTTPException(status_code=422, detail=f"unknown status {status!r}")
        items, total = store.list_records(
            status=status_enum, branch=branch, category=category, page=page, page_size=page_size
        )
        return {
            "items": [record_summary(r) for r in items],
            "total": total,
            "page": page,
            "page_size": page_size,
        }

    @app.get("/api/v1/records/{record_id}", dependencies=[Depends(check_token)])
    def get_record(record_id: str) -> dict[str, Any]:
        try:
            return record_summary(store.get(record_id))
        except ReviewNotFoundError:
            raise HTTPException(status_code=404, detail=f"no record {record_id}")

    @app.post("/api/v1/records/{record_id}/decision", dependencies=[Depends(check_token)])
    def post_decision(record_id: str, payload: DecisionPayload) -> dict[str, Any]:
        try:
            action = ReviewAction(payload.action)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"unknown action {payload.action!r}")
        decision = ReviewDecision(
            record_id=record_id,
            action=action,
            expected_revision=payload.expected_revision,
            reviewer=payload.reviewer,
            revised_instruction=payload.revised_instruction,
            regeneration_hint=payload.regeneration_hint,
        )
        try:
            updated = store.submit_decision(decision)
        except ReviewNotFoundError:
            raise HTTPException(status_code=404, detail=f"no record {record_id}")
        except ReviewConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if rescorer is not None and action is ReviewAction.REVISE_INSTRUCTION:
            updated = store.record_rescore(record_id, rescorer(updated))
        return record_summary(updated)

    @app.get("/api/v1/stats", dependencies=[Depends(check_token)])
    def stats() -> dict[str, Any]:
        return store.stats()

    @app.get("/images/{path:path}")
    def serve_image(path: str) -> FileResponse:
        target = (images_root / path).resolve()
        if not target.is_relative_to(images_root):
            raise HTTPException(status_code=404, detail="not found")
        if not target.is_file():
            raise HTTPException(status_code=404, detail="not found")
        return FileResponse(target)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app

"""HTTP+JSON front door for the survey service.

Thin FastAPI adapter: all state lives in SurveyService. Images are served
from a static directory keyed by image id; the service never fetches
remote imagery.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from pydantic import BaseModel

from .records import parse_ts
from .service import DemographicsConflict, StaleToken, SurveyService, UnknownSession

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".webp")


class Demographics(BaseModel):
    location: Literal["london", "not_london"] | None = None
    gender: Literal["female", "male", "other"] | None = None
    activity: Literal["high", "low"] | None = None
    source: Literal["amt", "network"] | None = None

    def compact(self) -> dict[str, str] | None:
        values = {k: v for k, v in self.model_dump().items() if v is not None}
        return values or None


class SessionRequest(BaseModel):
    demographics: Demographics | None = None


class DemographicsRequest(BaseModel):
    session_id: str
    demographics: Demographics


class VoteRequest(BaseModel):
    session_id: str
    pair_token: str
    choice: Literal["left", "right", "not_comparable", "not_shown"]
    client_ts: float | str | None = None


def create_app(
    service: SurveyService,
    images_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="streetpulse survey")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    images_root = Path(images_dir) if images_dir else None

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=ui_dir, html=True), name="ui")

    def pair_payload(sid: str) -> dict:
        pair = service.get_pair(sid)
        if pair is None:
            return {"done": True}
        return {
            "done": False,
            "pair_token": pair.token,
            "left": {"image_id": pair.left, "url": f"/images/{pair.left}"},
            "right": {"image_id": pair.right, "url": f"/images/{pair.right}"},
        }

    @app.post("/session")
    def create_session(req: SessionRequest | None = None) -> dict:
        demo = req.demographics.compact() if req and req.demographics else None
        return {"session_id": service.create_session(demo)}

    @app.get("/pair")
    def get_pair(session: str) -> dict:
        try:
            return pair_payload(session)
        except UnknownSession:
            raise HTTPException(status_code=404, detail="unknown session")

    @app.post("/vote")
    def post_vote(req: VoteRequest) -> dict:
        client_ts = req.client_ts
        if isinstance(client_ts, str):
            try:
                client_ts = parse_ts(client_ts)
            except ValueError:
                raise HTTPException(status_code=400, detail="unparseable client_ts")
        try:
            vote_id = service.post_vote(req.session_id, req.pair_token, req.choice, client_ts)
        except UnknownSession:
            raise HTTPException(status_code=404, detail="unknown session")
        except StaleToken:
            raise HTTPException(status_code=409, detail="stale or unknown pair token")
        return {"vote_id": vote_id}

    @app.post("/demographics")
    def post_demographics(req: DemographicsRequest) -> dict:
        demo = req.demographics.compact()
        if demo is None:
            raise HTTPException(status_code=400, detail="no demographic values given")
        try:
            service.set_demographics(req.session_id, demo)
        except UnknownSession:
            raise HTTPException(status_code=404, detail="unknown session")
        except DemographicsConflict:
            raise HTTPException(status_code=409, detail="demographics already set")
        return {"ok": True}

    @app.get("/admin/stats")
    def admin_stats() -> dict:
        return service.stats()

    @app.get("/images/{image_id}")
    def get_image(image_id: str) -> FileResponse:
        if images_root is None:
            raise HTTPException(status_code=404, detail="no images directory configured")
        safe = Path(image_id).name  # no path traversal
        for ext in ("",) + IMAGE_EXTENSIONS:
            candidate = images_root / f"{safe}{ext}"
            if candidate.is_file():
                return FileResponse(candidate)
        raise HTTPException(status_code=404, detail="image not found")

    return app

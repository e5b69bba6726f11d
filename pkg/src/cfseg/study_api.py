"""HTTP service for the preference study.

Blinding contract: while a session is in progress, no response on the
rater's path (creation echo, trial views, overlay images, choice acks,
partial summaries) ever names the methods behind the two sides. Overlays
are rendered server-side so mask file paths never reach the client. The
full per-method summary unlocks only once every trial is answered."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from . import io_utils, study, viz


class MethodSpec(BaseModel):
    name: str
    manifest: str
    mask_field: str


class CreateSessionRequest(BaseModel):
    rater_id: str
    seed: int = 0
    n_nf: int = Field(default=150, ge=0)
    n_diseased: int = Field(default=150, ge=0)
    dataset_manifest: str
    methods: list[MethodSpec] = Field(min_length=2, max_length=2)
    ids: list[str] | None = None


class ChoiceRequest(BaseModel):
    choice: Literal["left", "right"]


def _trial_view(session: study.StudySession, index: int) -> dict:
    trial = session.trials[index]
    base = f"/sessions/{session.session_id}/trials/{index}"
    return {
        "session_id": session.session_id,
        "index": index,
        "total": session.total,
        "answered": trial.answered,
        "answered_count": session.answered_count,
        "complete": session.complete,
        "image_url": f"{base}/png/image",
        "left_url": f"{base}/png/left",
        "right_url": f"{base}/png/right",
        "next_unanswered": session.next_unanswered(start=index),
    }


def create_app(store: study.StudyStore) -> FastAPI:
    app = FastAPI(title="preference study service")

    def _session(session_id) -> study.StudySession:
        try:
            return store.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")

    def _trial(session, index) -> study.Trial:
        if not 0 <= index < session.total:
            raise HTTPException(status_code=404, detail="unknown trial")
        return session.trials[index]

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        try:
            session = study.create_session(
                req.dataset_manifest,
                (req.methods[0].name, req.methods[0].manifest, req.methods[0].mask_field),
                (req.methods[1].name, req.methods[1].manifest, req.methods[1].mask_field),
                n_nf=req.n_nf,
                n_diseased=req.n_diseased,
                seed=req.seed,
                rater_id=req.rater_id,
                ids=req.ids,
            )
        except (study.SessionCreationError, FileNotFoundError) as err:
            raise HTTPException(status_code=400, detail=str(err))
        store.add(session)
        groups = {study.GROUP_NF: 0, study.GROUP_DISEASED: 0}
        for t in session.trials:
            groups[t.group] += 1
        return {
            "session_id": session.session_id,
            "total_trials": session.total,
            "groups": groups,
            "first_trial": session.next_unanswered() or 0,
        }

    @app.get("/sessions/{session_id}/trials/{index}")
    def get_trial(session_id: str, index: int):
        session = _session(session_id)
        _trial(session, index)
        return _trial_view(session, index)

    @app.get("/sessions/{session_id}/trials/{index}/png/{which}")
    def get_trial_png(session_id: str, index: int, which: Literal["image", "left", "right"]):
        session = _session(session_id)
        trial = _trial(session, index)
        image = io_utils.load_image(trial.image_path)
        if which == "image":
            payload = viz.overlay_png_bytes(image, None)
        else:
            mask = io_utils.load_mask(trial.side_mask_path(which))
            payload = viz.overlay_png_bytes(image, mask)
        return Response(
            content=payload,
            media_type="image/png",
            headers={"Cache-Control": "no-store"},
        )

    @app.post("/sessions/{session_id}/trials/{index}/choice")
    def post_choice(session_id: str, index: int, req: ChoiceRequest):
        session = _session(session_id)
        _trial(session, index)
        try:
            store.record_choice(session_id, index, req.choice)
        except study.AlreadyAnsweredError as err:
            raise HTTPException(status_code=409, detail=str(err))
        return {
            "recorded": True,
            "index": index,
            "answered_count": session.answered_count,
            "total": session.total,
            "complete": session.complete,
            "next_unanswered": session.next_unanswered(start=index),
        }

    @app.get("/sessions/{session_id}/summary")
    def get_summary(session_id: str):
        session = _session(session_id)
        summary = study.summarize(session)
        if not summary.complete:
            # method tallies stay hidden until the session is over so a
            # mid-study rater can never see running preferences
            return {
                "complete": False,
                "total_trials": summary.total_trials,
                "answered": summary.answered,
                "warning": summary.warning or "partial",
                "groups": {
                    g: {"total": e["total"], "answered": e["answered"]}
                    for g, e in summary.groups.items()
                },
            }
        return summary.as_dict()

    return app


def build_app(store_dir, ui_dir=None) -> FastAPI:
    """Service app, optionally with the built web client mounted at /ui."""
    from fastapi.staticfiles import StaticFiles

    app = create_app(study.StudyStore(store_dir))
    if ui_dir:
        ui_dir = Path(ui_dir)
        if not ui_dir.exists():
            raise FileNotFoundError(f"ui directory not found: {ui_dir}")
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def serve(store_dir, host="127.0.0.1", port=8000, ui_dir=None):
    import uvicorn

    uvicorn.run(build_app(store_dir, ui_dir), host=host, port=port, log_level="info")

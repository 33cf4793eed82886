"""HTTP surface: study creation, participant entry, events, surveys, exports.

Handlers are thin and reentrant; all cross-session coordination lives in
the store's assignment counters and world aggregates. Errors are returned
as ``{"code", "message"}`` with a matching status. Researcher endpoints
require the X-API-Key header when an API key is configured (FEEDLAB_API_KEY
or the ``api_key`` argument); participant endpoints never need auth.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import html
import json
import os
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from . import export as export_mod
from .entities import EntitySet, parse_entity_set_csv
from .errors import (
    ExperimentClosed,
    FeedlabError,
    InvalidResponse,
    MissingParticipant,
    MissingResponse,
    PhaseViolation,
    Unauthorized,
)
from .feed import build_session_feed
from .model import Experiment, ExperimentStatus, ResponseType
from .store import Store
from .telemetry import (
    ClientEvent,
    EventType,
    Session,
    SessionPhase,
    Transition,
    advance_session,
    ingest_events,
)

ABANDON_IDLE_SECONDS = 1800.0  # 30 min without events finalizes an in_feed session


def completion_token(secret: bytes, session_id: str) -> str:
    """HMAC(session_id) truncated to 12 base32 chars; verifiable offline."""
    digest = hmac.new(secret, session_id.encode(), hashlib.sha256).digest()
    return base64.b32encode(digest).decode("ascii")[:12]


def _survey_questions(experiment: Experiment, session: Session):
    return experiment.conditions[session.condition_index].survey


def _bootstrap(store: Store, experiment: Experiment, session: Session) -> dict:
    """Everything the client needs to render, with entity content inlined."""
    sets = store.entity_sets()
    condition = experiment.conditions[session.condition_index]
    entries = []
    for entry in session.feed.entries:
        set_id = session.set_id_by_entity.get(entry.entity_id, "")
        entity = next(
            e for e in sets[set_id].entities if e.entity_id == entry.entity_id
        )
        entries.append({**entry.to_dict(), "entity": entity.to_dict()})
    token = store.completion_token(session.session_id)
    return {
        "session_id": session.session_id,
        "experiment_id": experiment.experiment_id,
        "slug": experiment.slug,
        "participant_id": session.participant_id,
        "condition_index": session.condition_index,
        "world_index": session.world_index,
        "phase": session.phase.value,
        "skin": condition.skin.value,
        "dwell_config": experiment.dwell_config.to_dict(),
        "feed": entries,
        "survey": [q.to_dict() for q in condition.survey],
        "completion_token": token or None,
    }


_SHELL_TEMPLATE = """<!doctype html>
<html lang="en">
<head>
<meta charset="utf-8">
<meta name="viewport" content="width=device-width, initial-scale=1">
<title>feedlab</title>
<link rel="stylesheet" href="/static/feedlab-ui.css" onerror="this.remove()">
</head>
<body>
<div id="feedlab-root">
<noscript>This study requires JavaScript.</noscript>
{fallback}
</div>
<script>window.__FEEDLAB_BOOTSTRAP__ = {bootstrap};</script>
{app_script}
</body>
</html>
"""


def _shell_html(bootstrap: dict, has_ui_bundle: bool) -> str:
    if has_ui_bundle:
        app_script = '<script type="module" src="/static/feedlab-ui.js"></script>'
        fallback = ""
    else:
        app_script = ""
        posts = "".join(
            f"<li>{html.escape(e['entity']['headline'])}</li>" for e in bootstrap["feed"]
        )
        fallback = (
            "<p>UI bundle not installed; static preview only "
            "(interactive sessions need the frontend build in FEEDLAB_UI_DIR).</p>"
            f"<ol>{posts}</ol>"
        )
    return _SHELL_TEMPLATE.format(
        bootstrap=json.dumps(bootstrap), app_script=app_script, fallback=fallback
    )


def create_app(
    store: Store,
    api_key: str | None = None,
    ui_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="feedlab", docs_url=None, redoc_url=None)
    app.state.store = store
    secret = store.server_secret()
    ui_path = Path(ui_dir) if ui_dir else None
    has_ui = bool(ui_path and (ui_path / "feedlab-ui.js").exists())
    if ui_path and ui_path.is_dir():
        app.mount("/static", StaticFiles(directory=str(ui_path)), name="static")

    @app.exception_handler(FeedlabError)
    async def feedlab_error(request: Request, exc: FeedlabError):
        return JSONResponse(
            status_code=exc.http_status,
            content={"code": exc.code, "message": exc.message},
        )

    def require_key(request: Request) -> None:
        if api_key and request.headers.get("x-api-key") != api_key:
            raise Unauthorized("missing or wrong X-API-Key")

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/api/experiments")
    async def create_experiment(request: Request):
        require_key(request)
        draft = await request.json()
        inline = [EntitySet.from_dict(d) for d in draft.pop("entity_sets", [])]
        experiment = store.create_experiment(draft, inline_sets=inline)
        return {
            "experiment_id": experiment.experiment_id,
            "slug": experiment.slug,
            "status": experiment.status.value,
            "url": f"/f/{experiment.slug}",
        }

    @app.post("/api/entity-sets")
    async def upload_entity_set(request: Request, set_id: str, name: str | None = None):
        require_key(request)
        raw = await request.body()
        entity_set = parse_entity_set_csv(raw, set_id=set_id, name=name)
        store.put_entity_set(entity_set)
        return {"set_id": entity_set.set_id, "name": entity_set.name, "entities": len(entity_set)}

    @app.post("/api/experiments/{experiment_id}/status")
    async def set_status(experiment_id: str, request: Request):
        require_key(request)
        body = await request.json()
        status = ExperimentStatus(body["status"])
        store.set_experiment_status(experiment_id, status)
        return {"experiment_id": experiment_id, "status": status.value}

    def participant_entry(slug: str, pid: str) -> dict:
        if not pid:
            raise MissingParticipant("entry URL must carry ?pid=<participant_id>")
        experiment = store.get_experiment_by_slug(slug)
        if experiment.status is not ExperimentStatus.LIVE:
            raise ExperimentClosed(f"experiment {experiment.slug!r} is not live")

        def build(assignment):
            condition = experiment.conditions[assignment.condition_index]
            world = store.load_world(
                experiment.experiment_id, assignment.condition_index, assignment.world_index
            )
            inventory, display = build_session_feed(
                experiment,
                condition,
                store.entity_sets(),
                pid,
                assignment.world_index,
                world,
                on_ranker_failure=lambda reason, detail: store.record_ranker_failure(
                    f"{experiment.experiment_id}/{pid}", reason, detail
                ),
            )
            set_ids = {it.entity.entity_id: it.set_id for it in inventory.items}
            return display, set_ids

        session = store.get_or_create_session(experiment, pid, build)
        return _bootstrap(store, experiment, session)

    @app.get("/f/{slug}")
    async def entry(slug: str, request: Request, pid: str = "", format: str = ""):
        bootstrap = participant_entry(slug, pid)
        wants_json = format == "json" or "application/json" in request.headers.get(
            "accept", ""
        )
        if wants_json:
            return JSONResponse(bootstrap)
        return HTMLResponse(_shell_html(bootstrap, has_ui))

    @app.post("/api/sessions/{session_id}/events")
    async def post_events(session_id: str, request: Request):
        body = await request.json()
        raw_events = body.get("events", [])
        parsed: list[tuple[int, ClientEvent]] = []
        malformed: list[dict] = []
        for i, item in enumerate(raw_events):
            try:
                parsed.append((i, ClientEvent.from_dict(item)))
            except (KeyError, ValueError, TypeError):
                malformed.append({"index": i, "reason": "malformed"})
        with store.lock:  # one logical writer per session
            session = store.load_session(session_id)
            if session.phase is not SessionPhase.IN_FEED:
                # at-least-once clients may retransmit the final batch after
                # the ack was lost; pure replays stay idempotent
                seen = {ev.dedup_key() for ev in session.events}
                rejected = [
                    {"index": i, "reason": "phase_violation"}
                    for i, ev in parsed
                    if ev.dedup_key() not in seen
                ] + malformed
                rejected.sort(key=lambda r: r["index"])
                accepted = len(parsed) + len(malformed) - len(rejected)
                return {"accepted": accepted, "rejected": rejected}
            prev_len = len(session.events)
            session, summary = ingest_events(session, [ev for _, ev in parsed])
            new_events = session.events[prev_len:]
            if any(ev.type is EventType.FEED_FINISHED for ev in new_events):
                advance_session(session, Transition.FINISH_FEED)
            store.append_events(session, new_events)
        rejected = [
            {"index": parsed[r["index"]][0], "reason": r["reason"]}
            for r in summary.rejected
        ] + malformed
        rejected.sort(key=lambda r: r["index"])
        return {"accepted": summary.accepted, "rejected": rejected}

    @app.post("/api/sessions/{session_id}/survey")
    async def post_survey(session_id: str, request: Request):
        body = await request.json()
        responses = body.get("responses", {})
        with store.lock:
            session = store.load_session(session_id)
            if session.phase is SessionPhase.COMPLETE:
                return {"completion_token": store.completion_token(session_id)}
            if session.phase is not SessionPhase.IN_SURVEY:
                raise PhaseViolation(
                    f"survey submission while session is {session.phase.value}"
                )
            experiment = store.get_experiment(session.experiment_id)
            questions = _survey_questions(experiment, session)
            cleaned = _validate_responses(questions, responses)
            token = completion_token(secret, session_id)
            store.finalize_session(session, cleaned, token)
        return {"completion_token": token}

    @app.get("/api/experiments/{experiment_id}/export")
    async def export(
        experiment_id: str, request: Request, kind: str = "interactions", format: str = "csv"
    ):
        require_key(request)
        store.finalize_abandoned(ABANDON_IDLE_SECONDS)
        if format not in ("csv", "jsonl"):
            raise InvalidResponse(f"unknown format {format!r}")
        if kind == "interactions":
            payload = export_mod.export_interactions(store, experiment_id, format)
        elif kind == "surveys":
            payload = export_mod.export_surveys(store, experiment_id, format)
        elif kind == "diversity":
            payload = export_mod.export_diversity(store, experiment_id, format)
        else:
            raise InvalidResponse(f"unknown export kind {kind!r}")
        media = "text/csv" if format == "csv" else "application/jsonl"
        return Response(content=payload, media_type=media)

    @app.get("/api/experiments/{experiment_id}/dwell-by-position")
    async def dwell_curve(experiment_id: str, request: Request):
        require_key(request)
        store.finalize_abandoned(ABANDON_IDLE_SECONDS)
        payload = export_mod.export_dwell_by_position(store, experiment_id)
        return Response(content=payload, media_type="text/csv")

    return app


def _validate_responses(questions, responses: dict) -> dict:
    """All questions are required; values are checked per response_type."""
    cleaned: dict[str, object] = {}
    for q in questions:
        if q.question_id not in responses:
            raise MissingResponse(f"missing response for {q.question_id!r}")
        value = responses[q.question_id]
        if q.response_type is ResponseType.LIKERT7:
            if not isinstance(value, int) or isinstance(value, bool) or not (1 <= value <= 7):
                raise InvalidResponse(f"{q.question_id!r} expects an integer in 1..7")
        elif q.response_type is ResponseType.NUMERIC:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidResponse(f"{q.question_id!r} expects a number")
        else:
            if not isinstance(value, str):
                raise InvalidResponse(f"{q.question_id!r} expects text")
        cleaned[q.question_id] = value
    return cleaned


def app_from_env() -> FastAPI:
    """uvicorn factory: ``uvicorn feedlab.service:app_from_env --factory``."""
    store = Store(os.environ.get("FEEDLAB_DB_PATH", "feedlab.db"))
    return create_app(
        store,
        api_key=os.environ.get("FEEDLAB_API_KEY") or None,
        ui_dir=os.environ.get("FEEDLAB_UI_DIR") or None,
    )

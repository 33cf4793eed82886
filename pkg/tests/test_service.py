from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from conftest import make_entity_set
from feedlab.entities import serialize_entity_set_csv
from feedlab.service import create_app
from feedlab.store import Store


@pytest.fixture
def store(tmp_path):
    s = Store(str(tmp_path / "svc.db"))
    s.put_entity_set(make_entity_set("s10", 10))
    yield s
    s.close()


@pytest.fixture
def client(store):
    app = create_app(store)
    with TestClient(app) as c:
        yield c


def _draft(seed=1, **kw):
    cond = {
        "draws": [{"set_id": "s10", "count": 5}],
        "survey": [{"question_id": "q1", "prompt": "How accurate?", "response_type": "likert7"}],
        **kw.pop("condition", {}),
    }
    return {"seed": seed, "conditions": [cond], **kw}


def _create(client, **kw):
    reply = client.post("/api/experiments", json=_draft(**kw))
    assert reply.status_code == 200, reply.text
    return reply.json()


def _visible_hide(eid, start, end):
    return [
        {"type": "visibility", "entity_id": eid, "client_ts_ms": start,
         "visible": True, "viewport_fraction": 1.0},
        {"type": "visibility", "entity_id": eid, "client_ts_ms": end,
         "visible": False, "viewport_fraction": 0.0},
    ]


def test_health(client):
    assert client.get("/healthz").json() == {"status": "ok"}


def test_create_and_enter(client):
    info = _create(client)
    entry = client.get(f"/f/{info['slug']}", params={"pid": "alice", "format": "json"})
    assert entry.status_code == 200
    bootstrap = entry.json()
    assert bootstrap["participant_id"] == "alice"
    assert bootstrap["phase"] == "in_feed"
    assert len(bootstrap["feed"]) == 5
    positions = [e["position"] for e in bootstrap["feed"]]
    assert positions == list(range(5))
    assert all(e["entity"]["headline"] for e in bootstrap["feed"])
    assert bootstrap["dwell_config"]["visibility_threshold"] == 0.5
    assert [q["question_id"] for q in bootstrap["survey"]] == ["q1"]


def test_reentry_resumes_same_session(client):
    info = _create(client)
    b1 = client.get(f"/f/{info['slug']}", params={"pid": "alice", "format": "json"}).json()
    b2 = client.get(f"/f/{info['slug']}", params={"pid": "alice", "format": "json"}).json()
    assert b1["session_id"] == b2["session_id"]
    assert b1["feed"] == b2["feed"]
    b3 = client.get(f"/f/{info['slug']}", params={"pid": "bob", "format": "json"}).json()
    assert b3["session_id"] != b1["session_id"]


def test_entry_html_shell(client):
    info = _create(client)
    entry = client.get(f"/f/{info['slug']}", params={"pid": "alice"})
    assert entry.status_code == 200
    assert entry.headers["content-type"].startswith("text/html")
    assert "__FEEDLAB_BOOTSTRAP__" in entry.text


def test_unknown_slug_404(client):
    reply = client.get("/f/doesnotexist", params={"pid": "x"})
    assert reply.status_code == 404
    assert reply.json()["code"] == "unknown_slug"


def test_missing_pid_400(client):
    info = _create(client)
    reply = client.get(f"/f/{info['slug']}")
    assert reply.status_code == 400
    assert reply.json()["code"] == "missing_participant"


def test_closed_experiment_410(client):
    info = _create(client)
    closed = client.post(f"/api/experiments/{info['experiment_id']}/status", json={"status": "closed"})
    assert closed.status_code == 200
    reply = client.get(f"/f/{info['slug']}", params={"pid": "alice"})
    assert reply.status_code == 410
    assert reply.json()["code"] == "experiment_closed"


def test_event_batch_accept_and_reject(client):
    info = _create(client)
    bootstrap = client.get(f"/f/{info['slug']}", params={"pid": "a", "format": "json"}).json()
    eid = bootstrap["feed"][0]["entity_id"]
    events = _visible_hide(eid, 0, 1500) + [
        {"type": "share", "entity_id": "ghost", "client_ts_ms": 100},
        {"type": "like", "client_ts_ms": 200},  # malformed: no entity_id
    ]
    reply = client.post(f"/api/sessions/{bootstrap['session_id']}/events", json={"events": events})
    assert reply.status_code == 200
    body = reply.json()
    assert body["accepted"] == 2
    reasons = {r["index"]: r["reason"] for r in body["rejected"]}
    assert reasons == {2: "unknown_entity", 3: "malformed"}


def test_unknown_session_404(client):
    reply = client.post("/api/sessions/sess-nope/events", json={"events": []})
    assert reply.status_code == 404


def test_duplicate_batch_replay_identical(client):
    info = _create(client)
    bootstrap = client.get(f"/f/{info['slug']}", params={"pid": "a", "format": "json"}).json()
    eid = bootstrap["feed"][0]["entity_id"]
    sid = bootstrap["session_id"]
    batch = {"events": _visible_hide(eid, 0, 900) + [{"type": "feed_finished", "client_ts_ms": 1000}]}
    first = client.post(f"/api/sessions/{sid}/events", json=batch).json()
    replay = client.post(f"/api/sessions/{sid}/events", json=batch).json()
    assert first == replay == {"accepted": 3, "rejected": []}
    # genuinely new events after the feed phase are rejected per-event
    late = client.post(
        f"/api/sessions/{sid}/events",
        json={"events": [{"type": "share", "entity_id": eid, "client_ts_ms": 2000}]},
    ).json()
    assert late == {"accepted": 0, "rejected": [{"index": 0, "reason": "phase_violation"}]}


def _finish_feed(client, bootstrap, share_first=False, ts0=0):
    eid = bootstrap["feed"][0]["entity_id"]
    events = _visible_hide(eid, ts0, ts0 + 1000)
    if share_first:
        events.insert(1, {"type": "share", "entity_id": eid, "client_ts_ms": ts0 + 300})
    events.append({"type": "feed_finished", "client_ts_ms": ts0 + 1200})
    reply = client.post(
        f"/api/sessions/{bootstrap['session_id']}/events", json={"events": events}
    )
    assert reply.status_code == 200, reply.text
    return reply.json()


def test_survey_flow_and_idempotent_token(client):
    info = _create(client)
    bootstrap = client.get(f"/f/{info['slug']}", params={"pid": "a", "format": "json"}).json()
    _finish_feed(client, bootstrap)
    sid = bootstrap["session_id"]

    missing = client.post(f"/api/sessions/{sid}/survey", json={"responses": {}})
    assert missing.status_code == 400
    assert missing.json()["code"] == "missing_response"

    bad = client.post(f"/api/sessions/{sid}/survey", json={"responses": {"q1": 11}})
    assert bad.status_code == 400
    assert bad.json()["code"] == "invalid_response"

    done = client.post(f"/api/sessions/{sid}/survey", json={"responses": {"q1": 6}})
    assert done.status_code == 200
    token = done.json()["completion_token"]
    assert len(token) == 12

    again = client.post(f"/api/sessions/{sid}/survey", json={"responses": {"q1": 6}})
    assert again.json()["completion_token"] == token


def test_survey_before_feed_finished_409(client):
    info = _create(client)
    bootstrap = client.get(f"/f/{info['slug']}", params={"pid": "a", "format": "json"}).json()
    reply = client.post(
        f"/api/sessions/{bootstrap['session_id']}/survey", json={"responses": {"q1": 4}}
    )
    assert reply.status_code == 409
    assert reply.json()["code"] == "phase_violation"


def test_world_application_once_through_api(client, store):
    info = _create(client)
    bootstrap = client.get(f"/f/{info['slug']}", params={"pid": "a", "format": "json"}).json()
    _finish_feed(client, bootstrap, share_first=True)
    sid = bootstrap["session_id"]
    for _ in range(3):  # survey retries must not double-apply
        client.post(f"/api/sessions/{sid}/survey", json={"responses": {"q1": 4}})
    eid = bootstrap["feed"][0]["entity_id"]
    world = store.load_world(
        info["experiment_id"], bootstrap["condition_index"], bootstrap["world_index"]
    )
    assert world.shares(eid) == 1
    assert world.session_count == 1


def test_live_world_counts_shown_to_next_participant(client):
    info = _create(
        client,
        condition={
            "draws": [{"set_id": "s10", "count": 10}],  # both participants see every entity
            "engagement": {"mode": "live_world"},
            "world_count": 1,
        },
    )
    b1 = client.get(f"/f/{info['slug']}", params={"pid": "first", "format": "json"}).json()
    eid = b1["feed"][0]["entity_id"]
    assert all(e["shown_shares"] == 0 for e in b1["feed"])
    _finish_feed(client, b1, share_first=True)
    client.post(f"/api/sessions/{b1['session_id']}/survey", json={"responses": {"q1": 4}})

    b2 = client.get(f"/f/{info['slug']}", params={"pid": "second", "format": "json"}).json()
    shown = {e["entity_id"]: e["shown_shares"] for e in b2["feed"]}
    assert shown[eid] == 1


def test_entity_set_upload_endpoint(client, store):
    csv_bytes = serialize_entity_set_csv(make_entity_set("upload", 3, prefix="u"))
    reply = client.post(
        "/api/entity-sets", params={"set_id": "upload", "name": "Uploaded"},
        content=csv_bytes,
    )
    assert reply.status_code == 200
    assert reply.json() == {"set_id": "upload", "name": "Uploaded", "entities": 3}
    assert store.get_entity_set("upload") is not None


def test_bad_csv_upload_rejected(client):
    reply = client.post("/api/entity-sets", params={"set_id": "x"}, content=b"")
    assert reply.status_code == 400
    assert reply.json()["code"] == "empty_file"


def test_api_key_enforced(store):
    app = create_app(store, api_key="sekrit")
    with TestClient(app) as client:
        denied = client.post("/api/experiments", json=_draft())
        assert denied.status_code == 401
        allowed = client.post("/api/experiments", json=_draft(), headers={"X-API-Key": "sekrit"})
        assert allowed.status_code == 200
        slug = allowed.json()["slug"]
        # participant endpoints stay open
        entry = client.get(f"/f/{slug}", params={"pid": "p", "format": "json"})
        assert entry.status_code == 200
        export = client.get(f"/api/experiments/{allowed.json()['experiment_id']}/export")
        assert export.status_code == 401


def test_inline_entity_sets_in_create(client):
    draft = {
        "seed": 9,
        "entity_sets": [
            {
                "set_id": "inline1",
                "name": "inline",
                "entities": [
                    {"entity_id": f"i{k}", "headline": f"Inline {k}"} for k in range(4)
                ],
            }
        ],
        "conditions": [{"draws": [{"set_id": "inline1", "count": 4}]}],
    }
    reply = client.post("/api/experiments", json=draft)
    assert reply.status_code == 200
    entry = client.get(f"/f/{reply.json()['slug']}", params={"pid": "p", "format": "json"})
    assert len(entry.json()["feed"]) == 4


def test_config_error_maps_to_400(client):
    reply = client.post(
        "/api/experiments",
        json={"seed": 1, "conditions": [{"draws": [{"set_id": "s10", "count": 15}]}]},
    )
    assert reply.status_code == 400
    assert reply.json()["code"] == "draw_too_large"


def test_shell_references_built_ui_bundle(store, tmp_path):
    dist = tmp_path / "dist"
    dist.mkdir()
    (dist / "feedlab-ui.js").write_text("export const ok = true;\n")
    (dist / "feedlab-ui.css").write_text("body {}\n")
    app = create_app(store, ui_dir=str(dist))
    with TestClient(app) as client:
        info = _create(client)
        page = client.get(f"/f/{info['slug']}", params={"pid": "p"})
        assert '<script type="module" src="/static/feedlab-ui.js"></script>' in page.text
        assert client.get("/static/feedlab-ui.js").status_code == 200

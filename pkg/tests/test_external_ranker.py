from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from fastapi.testclient import TestClient

from conftest import make_entity_set, make_experiment
from feedlab.feed import (
    RANKER_INVALID_PERMUTATION,
    RANKER_TIMEOUT,
    RANKER_UNREACHABLE,
    RankerFailure,
    build_inventory,
    rank_external,
    ranker_protocol_request,
)
from feedlab.model import RankerKind, RankerSpec
from feedlab.rng import derive_rng
from feedlab.service import create_app
from feedlab.store import Store
from feedlab.worlds import WorldAggregates


@pytest.fixture
def sets():
    return {"a": make_entity_set("a", 6, prefix="a")}


@pytest.fixture
def inventory(sets):
    exp = make_experiment([{"draws": [{"set_id": "a", "count": 6}]}], sets)
    return build_inventory(exp.conditions[0], sets, derive_rng(0, "inv"), participant_id="p")


def _spec(endpoint="http://ranker.test/rank", timeout_ms=500):
    return RankerSpec(kind=RankerKind.EXTERNAL, external_endpoint=endpoint, timeout_ms=timeout_ms)


def test_protocol_request_shape(inventory):
    req = ranker_protocol_request(inventory, WorldAggregates(), "exp-1", request_seed=99)
    assert req["experiment_id"] == "exp-1"
    assert req["seed"] == 99
    assert len(req["items"]) == 6
    item = req["items"][0]
    assert set(item) == {
        "entity_id", "headline", "source_label", "tags", "created_at",
        "world_shares", "world_likes", "world_mean_dwell_ms",
    }


def test_echo_ranker_honored(inventory):
    def echo(endpoint, payload, timeout_s):
        return {"order": [it["entity_id"] for it in payload["items"]]}

    feed = rank_external(inventory, WorldAggregates(), _spec(),
                         fallback_rng=derive_rng(0, "fb"), transport=echo)
    assert feed.positions == tuple(inventory.entity_ids())
    assert feed.fallback_applied is False
    assert feed.ranker_used is RankerKind.EXTERNAL


def test_reverse_ranker_honored(inventory):
    def rev(endpoint, payload, timeout_s):
        return {"order": [it["entity_id"] for it in reversed(payload["items"])]}

    feed = rank_external(inventory, WorldAggregates(), _spec(),
                         fallback_rng=derive_rng(0, "fb"), transport=rev)
    assert feed.positions == tuple(reversed(inventory.entity_ids()))


def test_missing_entity_triggers_fallback(inventory):
    failures = []

    def dropper(endpoint, payload, timeout_s):
        return {"order": [it["entity_id"] for it in payload["items"]][:-1]}

    feed = rank_external(inventory, WorldAggregates(), _spec(),
                         fallback_rng=derive_rng(0, "fb"), transport=dropper,
                         on_failure=lambda r, d: failures.append(r))
    assert feed.fallback_applied is True
    assert sorted(feed.positions) == sorted(inventory.entity_ids())
    assert failures == [RANKER_INVALID_PERMUTATION]


def test_duplicate_entity_triggers_fallback(inventory):
    def doubler(endpoint, payload, timeout_s):
        ids = [it["entity_id"] for it in payload["items"]]
        return {"order": [ids[0]] + ids[:-1]}

    feed = rank_external(inventory, WorldAggregates(), _spec(),
                         fallback_rng=derive_rng(0, "fb"), transport=doubler)
    assert feed.fallback_applied is True


def test_transport_failure_triggers_fallback(inventory):
    failures = []

    def unreachable(endpoint, payload, timeout_s):
        raise RankerFailure(RANKER_UNREACHABLE, "connection refused")

    feed = rank_external(inventory, WorldAggregates(), _spec(),
                         fallback_rng=derive_rng(0, "fb"), transport=unreachable,
                         on_failure=lambda r, d: failures.append(r))
    assert feed.fallback_applied is True
    assert failures == [RANKER_UNREACHABLE]


def test_fallback_matches_default_random_order(inventory):
    from feedlab.feed import rank_random

    def broken(endpoint, payload, timeout_s):
        raise RankerFailure(RANKER_UNREACHABLE, "down")

    feed = rank_external(inventory, WorldAggregates(), _spec(),
                         fallback_rng=derive_rng(7, "rank", "p"), transport=broken)
    expected = rank_random(inventory, derive_rng(7, "rank", "p"))
    assert feed.positions == expected.positions


# --- against a real stub ranker over HTTP -------------------------------------


class _StubRanker(BaseHTTPRequestHandler):
    mode = "echo"
    delay_s = 0.0
    calls: list[dict] = []

    def do_POST(self):
        length = int(self.headers.get("content-length", 0))
        payload = json.loads(self.rfile.read(length))
        type(self).calls.append(payload)
        if self.delay_s:
            time.sleep(self.delay_s)
        ids = [it["entity_id"] for it in payload["items"]]
        if self.mode == "echo":
            body = {"order": ids}
        elif self.mode == "reverse":
            body = {"order": ids[::-1]}
        elif self.mode == "missing":
            body = {"order": ids[:-1]}
        else:
            body = {"nonsense": True}
        raw = json.dumps(body).encode()
        try:
            self.send_response(200)
            self.send_header("content-type", "application/json")
            self.send_header("content-length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)
        except (BrokenPipeError, ConnectionResetError):
            pass  # caller timed out and hung up; that's the point of the test

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_ranker():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubRanker)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubRanker.mode = "echo"
    _StubRanker.delay_s = 0.0
    _StubRanker.calls = []
    yield f"http://127.0.0.1:{server.server_port}/rank"
    server.shutdown()
    thread.join(timeout=5)


def _service_with_external_ranker(tmp_path, endpoint, timeout_ms=1000):
    store = Store(str(tmp_path / "ranker.db"))
    store.put_entity_set(make_entity_set("s", 5))
    app = create_app(store)
    client = TestClient(app)
    reply = client.post(
        "/api/experiments",
        json={
            "seed": 11,
            "conditions": [
                {
                    "draws": [{"set_id": "s", "count": 5}],
                    "ranker": {
                        "kind": "external",
                        "external_endpoint": endpoint,
                        "timeout_ms": timeout_ms,
                    },
                }
            ],
        },
    )
    assert reply.status_code == 200
    return store, client, reply.json()


def test_session_uses_live_external_ranker(tmp_path, stub_ranker):
    _StubRanker.mode = "reverse"
    store, client, info = _service_with_external_ranker(tmp_path, stub_ranker)
    bootstrap = client.get(f"/f/{info['slug']}", params={"pid": "p", "format": "json"}).json()
    assert len(bootstrap["feed"]) == 5
    assert len(_StubRanker.calls) == 1
    sent = [it["entity_id"] for it in _StubRanker.calls[0]["items"]]
    got = [e["entity_id"] for e in bootstrap["feed"]]
    assert got == sent[::-1]
    assert store.ranker_failures() == []
    store.close()


def test_timeout_falls_back_and_session_survives(tmp_path, stub_ranker):
    _StubRanker.mode = "echo"
    _StubRanker.delay_s = 0.6
    store, client, info = _service_with_external_ranker(tmp_path, stub_ranker, timeout_ms=150)
    bootstrap = client.get(f"/f/{info['slug']}", params={"pid": "p", "format": "json"}).json()
    assert len(bootstrap["feed"]) == 5  # participant never sees a failure
    failures = store.ranker_failures()
    assert len(failures) == 1
    assert failures[0]["reason"] == RANKER_TIMEOUT
    store.close()


def test_invalid_permutation_falls_back_through_service(tmp_path, stub_ranker):
    _StubRanker.mode = "missing"
    store, client, info = _service_with_external_ranker(tmp_path, stub_ranker)
    bootstrap = client.get(f"/f/{info['slug']}", params={"pid": "p", "format": "json"}).json()
    assert len(bootstrap["feed"]) == 5
    assert store.ranker_failures()[0]["reason"] == RANKER_INVALID_PERMUTATION
    store.close()

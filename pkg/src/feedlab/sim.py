"""Synthetic agents that exercise the full pipeline end to end.

Agents drive the real HTTP API (entry, event batches, survey), so a
simulation doubles as an integration test of the service. The behavioral
model is deliberately minimal: attention at feed position p is
Bernoulli(position_decay^p); an attended post is viewed for a lognormal
dwell around dwell_base_ms and shared/liked with probability
sigmoid(logit(base_prob) + social_proof_coef * log(1 + shown_count)).
That is just enough structure to express cumulative advantage; agents
exist to exercise mechanics, not to imitate people.

Agents run sequentially by default so a (config, model, n_agents, seed)
tuple reproduces a bit-identical report; --parallel trades that away for
load testing.
"""

from __future__ import annotations

import http.client
import json
import math
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from urllib.parse import urlencode, urlsplit

import httpx
import numpy as np
import uvicorn

from . import rng as rngmod
from .errors import FeedlabError
from .rng import derive_rng
from .service import create_app
from .store import Store


@dataclass(frozen=True)
class AgentModel:
    base_share_prob: float = 0.077
    base_like_prob: float = 0.121
    social_proof_coef: float = 0.0
    position_decay: float = 1.0  # per-position multiplicative attention decay
    dwell_base_ms: int = 3000
    dwell_noise: float = 0.35

    def __post_init__(self):
        if not (0.0 <= self.base_share_prob <= 1.0 and 0.0 <= self.base_like_prob <= 1.0):
            raise ValueError("base probabilities must be in [0, 1]")
        if not (0.0 < self.position_decay <= 1.0):
            raise ValueError("position_decay must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "base_share_prob": self.base_share_prob,
            "base_like_prob": self.base_like_prob,
            "social_proof_coef": self.social_proof_coef,
            "position_decay": self.position_decay,
            "dwell_base_ms": self.dwell_base_ms,
            "dwell_noise": self.dwell_noise,
        }


@dataclass
class SimReport:
    sessions_run: int
    n_agents: int
    seed: int
    experiment_id: str
    slug: str
    per_condition: list[dict]
    per_world: list[dict]
    diversity: list[dict]
    wall_clock_s: float
    agent_model: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sessions_run": self.sessions_run,
            "n_agents": self.n_agents,
            "seed": self.seed,
            "experiment_id": self.experiment_id,
            "slug": self.slug,
            "per_condition": self.per_condition,
            "per_world": self.per_world,
            "diversity": self.diversity,
            "wall_clock_s": self.wall_clock_s,
            "agent_model": self.agent_model,
        }


class AgentHttp:
    """Minimal keep-alive JSON client for the agent's three requests.

    httpx's per-request machinery dominates wall clock at tens of thousands
    of sessions; http.client keeps the same wire traffic at a fraction of
    the overhead. One instance per worker thread.
    """

    def __init__(self, base_url: str):
        parts = urlsplit(base_url)
        self.host = parts.hostname or "127.0.0.1"
        self.port = parts.port or (443 if parts.scheme == "https" else 80)
        self.conn = http.client.HTTPConnection(self.host, self.port, timeout=30)

    def request(self, method: str, path: str, params: dict | None = None,
                body: dict | None = None) -> dict:
        if params:
            path = f"{path}?{urlencode(params)}"
        payload = None
        headers = {"Accept": "application/json"}
        if body is not None:
            payload = json.dumps(body).encode()
            headers["Content-Type"] = "application/json"
        for attempt in (0, 1):  # one reconnect on a dropped keep-alive
            try:
                self.conn.request(method, path, body=payload, headers=headers)
                resp = self.conn.getresponse()
                raw = resp.read()
                break
            except (http.client.HTTPException, ConnectionError, OSError):
                if attempt:
                    raise
                self.conn.close()
                self.conn = http.client.HTTPConnection(self.host, self.port, timeout=30)
        if resp.status >= 400:
            raise FeedlabError(f"{method} {path} -> {resp.status}: {raw[:400]!r}")
        return json.loads(raw)

    def close(self) -> None:
        self.conn.close()


def _toggle_prob(base: float, coef: float, shown: int | None) -> float:
    """Logistic in (base logit + coef * log(1 + shown)), clamped to [0, 1]."""
    if base <= 0.0:
        return 0.0
    if base >= 1.0:
        return 1.0
    logit = math.log(base / (1.0 - base)) + coef * math.log1p(shown or 0)
    return 1.0 / (1.0 + math.exp(-logit))


def run_agent(client: AgentHttp, slug: str, pid: str, model: AgentModel,
              rng: np.random.Generator, survey_answer: int = 4) -> dict:
    """One full participant session: entry, scripted events, survey."""
    bootstrap = client.request("GET", f"/f/{slug}", params={"pid": pid, "format": "json"})
    events = []
    ts = 0
    for item in bootstrap["feed"]:
        position = item["position"]
        eid = item["entity_id"]
        if rng.uniform() > model.position_decay**position:
            ts += 100  # scrolled past without the post registering
            continue
        dwell = max(120, int(model.dwell_base_ms * math.exp(rng.normal(0.0, model.dwell_noise))))
        events.append(
            {"type": "visibility", "entity_id": eid, "client_ts_ms": ts,
             "visible": True, "viewport_fraction": 1.0}
        )
        if rng.uniform() < _toggle_prob(
            model.base_like_prob, model.social_proof_coef, item.get("shown_likes")
        ):
            events.append({"type": "like", "entity_id": eid, "client_ts_ms": ts + dwell // 3})
        if rng.uniform() < _toggle_prob(
            model.base_share_prob, model.social_proof_coef, item.get("shown_shares")
        ):
            events.append({"type": "share", "entity_id": eid, "client_ts_ms": ts + (2 * dwell) // 3})
        ts += dwell
        events.append(
            {"type": "visibility", "entity_id": eid, "client_ts_ms": ts,
             "visible": False, "viewport_fraction": 0.0}
        )
        ts += int(rng.integers(60, 220))  # scroll gap between posts
    events.append({"type": "feed_finished", "client_ts_ms": ts})

    session_id = bootstrap["session_id"]
    client.request("POST", f"/api/sessions/{session_id}/events", body={"events": events})
    responses = {}
    for q in bootstrap["survey"]:
        if q["response_type"] == "likert7":
            responses[q["question_id"]] = survey_answer
        elif q["response_type"] == "numeric":
            responses[q["question_id"]] = 0
        else:
            responses[q["question_id"]] = "ok"
    return client.request(
        "POST", f"/api/sessions/{session_id}/survey", body={"responses": responses}
    )


def _summarize(records: list[dict]) -> tuple[list[dict], list[dict]]:
    per_condition: dict[int, dict] = {}
    per_world: dict[tuple[int, int], dict] = {}
    for r in records:
        cond = per_condition.setdefault(
            r["condition_index"],
            {"condition_index": r["condition_index"], "sessions": set(), "displayed": 0,
             "shares": 0, "likes": 0},
        )
        cond["sessions"].add(r["session_id"])
        cond["displayed"] += 1
        cond["shares"] += bool(r["shared"])
        cond["likes"] += bool(r["liked"])
        wkey = (r["condition_index"], r["world_index"])
        world = per_world.setdefault(
            wkey,
            {"condition_index": wkey[0], "world_index": wkey[1], "sessions": set(),
             "entity_shares": {}, "entity_likes": {}},
        )
        world["sessions"].add(r["session_id"])
        if r["shared"]:
            world["entity_shares"][r["entity_id"]] = (
                world["entity_shares"].get(r["entity_id"], 0) + 1
            )
        if r["liked"]:
            world["entity_likes"][r["entity_id"]] = (
                world["entity_likes"].get(r["entity_id"], 0) + 1
            )

    condition_rows = []
    for idx in sorted(per_condition):
        c = per_condition[idx]
        displayed = c["displayed"] or 1
        condition_rows.append(
            {
                "condition_index": idx,
                "sessions": len(c["sessions"]),
                "displayed_posts": c["displayed"],
                "share_rate": c["shares"] / displayed,
                "like_rate": c["likes"] / displayed,
            }
        )
    world_rows = []
    for key in sorted(per_world):
        w = per_world[key]
        world_rows.append(
            {
                "condition_index": w["condition_index"],
                "world_index": w["world_index"],
                "sessions": len(w["sessions"]),
                "entity_shares": dict(sorted(w["entity_shares"].items())),
                "entity_likes": dict(sorted(w["entity_likes"].items())),
            }
        )
    return condition_rows, world_rows


class _ServerThread:
    """uvicorn on 127.0.0.1:<free port> in a daemon thread."""

    def __init__(self, app):
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        self.port = sock.getsockname()[1]
        sock.close()
        config = uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("embedded server failed to start")
            time.sleep(0.01)
        return f"http://127.0.0.1:{self.port}"

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)
        return False


def simulate(
    experiment_config: dict,
    agent_model: AgentModel | None = None,
    n_agents: int = 1,
    seed: int = 0,
    base_url: str | None = None,
    api_key: str | None = None,
    db_path: str = ":memory:",
    parallel: int = 0,
) -> SimReport:
    """Run n_agents full sessions through the service and summarize.

    Targets a running deployment when base_url is given; otherwise hosts the
    service itself (embedded server over db_path). The experiment seed
    defaults to ``seed`` when the config does not pin one.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    model = agent_model or AgentModel()
    config = dict(experiment_config)
    config.setdefault("seed", seed)

    if base_url is None:
        store = Store(db_path)
        try:
            app = create_app(store, api_key=api_key)
            with _ServerThread(app) as url:
                return _simulate_against(url, config, model, n_agents, seed, api_key, parallel)
        finally:
            store.close()
    return _simulate_against(base_url, config, model, n_agents, seed, api_key, parallel)


def _simulate_against(
    base_url: str,
    config: dict,
    model: AgentModel,
    n_agents: int,
    seed: int,
    api_key: str | None,
    parallel: int,
) -> SimReport:
    headers = {"X-API-Key": api_key} if api_key else {}
    started = time.monotonic()
    slug_pinned = "slug" in config
    with httpx.Client(base_url=base_url, headers=headers, timeout=30.0) as client:
        info = None
        for attempt in range(8):
            created = client.post("/api/experiments", json=config)
            if created.status_code < 400:
                info = created.json()
                break
            body = created.json()
            # a seed-pinned config replayed against a long-lived server hits
            # the slug-uniqueness rule; disambiguate unless the slug was explicit
            if body.get("code") == "duplicate_slug" and not slug_pinned:
                config = {
                    **config,
                    "slug": rngmod.base62(int(config["seed"]), "slug", f"retry{attempt}"),
                }
                continue
            raise FeedlabError(f"experiment creation failed: {body}")
        if info is None:
            raise FeedlabError("could not create a uniquely-slugged experiment")
        slug = info["slug"]

        local = threading.local()

        def one(i: int):
            agent_client = getattr(local, "client", None)
            if agent_client is None:
                agent_client = local.client = AgentHttp(base_url)
            rng = derive_rng(seed, "agent", f"{i}")
            run_agent(agent_client, slug, f"agent-{i:06d}", model, rng)

        try:
            if parallel > 1:
                with ThreadPoolExecutor(max_workers=parallel) as pool:
                    list(pool.map(one, range(n_agents)))
            else:
                for i in range(n_agents):
                    one(i)
        finally:
            agent_client = getattr(local, "client", None)
            if agent_client is not None:
                agent_client.close()

        export = client.get(
            f"/api/experiments/{info['experiment_id']}/export",
            params={"kind": "interactions", "format": "jsonl"},
        )
        export.raise_for_status()
        records = [json.loads(line) for line in export.text.splitlines() if line]
        div = client.get(
            f"/api/experiments/{info['experiment_id']}/export",
            params={"kind": "diversity", "format": "jsonl"},
        )
        div.raise_for_status()
        diversity = [json.loads(line) for line in div.text.splitlines() if line]

    per_condition, per_world = _summarize(records)
    return SimReport(
        sessions_run=n_agents,
        n_agents=n_agents,
        seed=seed,
        experiment_id=info["experiment_id"],
        slug=slug,
        per_condition=per_condition,
        per_world=per_world,
        diversity=diversity,
        wall_clock_s=time.monotonic() - started,
        agent_model=model.to_dict(),
    )

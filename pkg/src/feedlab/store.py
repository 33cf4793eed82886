"""Embedded persistence for experiments, sessions, events and worlds.

SQLite in WAL mode behind a single locked connection. The raw client-event
log is append-only and is the source of truth: interaction records, world
aggregates and exports are all recomputable from it plus the stored
configs. Accepted event batches are committed before the server replies,
so a killed process loses nothing it acknowledged.

Atomicity contracts honored here:
  - get_or_create_assignment / get_or_create_session are idempotent per
    (experiment, participant); concurrent duplicate arrivals observe one row.
  - finalize_session applies a session's outcomes to its world exactly once
    (the world_applied flag flips in the same transaction).
"""

from __future__ import annotations

import hashlib
import json
import secrets
import sqlite3
import threading
from datetime import datetime, timezone
from typing import Callable, Iterable

from .assignment import Assignment, AssignmentCounts, make_assignment
from .entities import EntitySet
from .errors import (
    DuplicateSlug,
    UnknownExperiment,
    UnknownSession,
    UnknownSlug,
)
from .feed import DisplayFeed
from .model import (
    Experiment,
    ExperimentStatus,
    experiment_from_dict,
    validate_experiment,
)
from .telemetry import (
    ClientEvent,
    EventType,
    Session,
    SessionPhase,
    Transition,
    advance_session,
    resolve_engagement,
)
from .worlds import EntityAggregate, WorldAggregates, apply_session_summary

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS entity_sets (
    set_id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    payload TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS experiments (
    experiment_id TEXT PRIMARY KEY,
    slug TEXT UNIQUE NOT NULL,
    status TEXT NOT NULL,
    payload TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS assignments (
    experiment_id TEXT NOT NULL,
    participant_id TEXT NOT NULL,
    condition_index INTEGER NOT NULL,
    world_index INTEGER NOT NULL,
    assigned_at TEXT NOT NULL,
    PRIMARY KEY (experiment_id, participant_id)
);
CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    experiment_id TEXT NOT NULL,
    participant_id TEXT NOT NULL,
    condition_index INTEGER NOT NULL,
    world_index INTEGER NOT NULL,
    phase TEXT NOT NULL,
    feed TEXT NOT NULL,
    set_ids TEXT NOT NULL,
    horizon_ms INTEGER,
    started_at TEXT NOT NULL,
    completed_at TEXT,
    last_event_at TEXT,
    world_applied INTEGER NOT NULL DEFAULT 0,
    completion_token TEXT
);
CREATE INDEX IF NOT EXISTS sessions_by_experiment ON sessions(experiment_id, started_at);
CREATE TABLE IF NOT EXISTS events (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    session_id TEXT NOT NULL,
    type TEXT NOT NULL,
    entity_id TEXT,
    client_ts_ms INTEGER NOT NULL,
    visible INTEGER,
    viewport_fraction REAL,
    received_at TEXT NOT NULL
);
CREATE UNIQUE INDEX IF NOT EXISTS events_dedup
    ON events(session_id, type, ifnull(entity_id, ''), client_ts_ms);
CREATE TABLE IF NOT EXISTS survey_responses (
    session_id TEXT NOT NULL,
    question_id TEXT NOT NULL,
    response_value TEXT NOT NULL,
    responded_at TEXT NOT NULL,
    PRIMARY KEY (session_id, question_id)
);
CREATE TABLE IF NOT EXISTS worlds (
    experiment_id TEXT NOT NULL,
    condition_index INTEGER NOT NULL,
    world_index INTEGER NOT NULL,
    session_count INTEGER NOT NULL DEFAULT 0,
    version INTEGER NOT NULL DEFAULT 0,
    PRIMARY KEY (experiment_id, condition_index, world_index)
);
CREATE TABLE IF NOT EXISTS world_entities (
    experiment_id TEXT NOT NULL,
    condition_index INTEGER NOT NULL,
    world_index INTEGER NOT NULL,
    entity_id TEXT NOT NULL,
    shares INTEGER NOT NULL DEFAULT 0,
    likes INTEGER NOT NULL DEFAULT 0,
    dwell_total_ms INTEGER NOT NULL DEFAULT 0,
    dwell_sessions INTEGER NOT NULL DEFAULT 0,
    PRIMARY KEY (experiment_id, condition_index, world_index, entity_id)
);
CREATE TABLE IF NOT EXISTS ranker_failures (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    session_key TEXT NOT NULL,
    reason TEXT NOT NULL,
    detail TEXT,
    at TEXT NOT NULL
);
"""


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _iso(dt: datetime | None) -> str | None:
    return dt.isoformat() if dt else None


def _parse_iso(s: str | None) -> datetime | None:
    return datetime.fromisoformat(s) if s else None


def session_id_for(experiment_id: str, participant_id: str) -> str:
    digest = hashlib.sha256(f"{experiment_id}|{participant_id}".encode()).hexdigest()
    return f"sess-{digest[:16]}"


class Store:
    def __init__(self, path: str = ":memory:", now_fn: Callable[[], datetime] | None = None):
        self._conn = sqlite3.connect(path, check_same_thread=False, isolation_level=None)
        self._conn.row_factory = sqlite3.Row
        self.lock = threading.RLock()  # serializes all writers in this process
        self.now_fn = now_fn or _utcnow
        # read-mostly caches; this Store is the only writer for its DB file
        self._experiment_cache: dict[str, Experiment] = {}
        self._entity_set_cache: dict[str, EntitySet] | None = None
        with self.lock:
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA synchronous=NORMAL")
            self._conn.execute("PRAGMA foreign_keys=ON")
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self.lock:
            self._conn.close()

    def _txn(self):
        return _Txn(self)

    # --- meta ---------------------------------------------------------------

    def server_secret(self) -> bytes:
        """Stable per-deployment secret for completion-token HMACs."""
        with self._txn():
            row = self._conn.execute("SELECT value FROM meta WHERE key='secret'").fetchone()
            if row:
                return bytes.fromhex(row["value"])
            secret = secrets.token_bytes(32)
            self._conn.execute(
                "INSERT INTO meta(key, value) VALUES ('secret', ?)", (secret.hex(),)
            )
            return secret

    # --- entity sets ----------------------------------------------------------

    def put_entity_set(self, entity_set: EntitySet) -> None:
        with self._txn():
            self._conn.execute(
                "INSERT OR REPLACE INTO entity_sets(set_id, name, payload) VALUES (?,?,?)",
                (entity_set.set_id, entity_set.name, json.dumps(entity_set.to_dict())),
            )
            self._entity_set_cache = None

    def get_entity_set(self, set_id: str) -> EntitySet | None:
        return self.entity_sets().get(set_id)

    def entity_sets(self) -> dict[str, EntitySet]:
        if self._entity_set_cache is None:
            rows = self._conn.execute("SELECT payload FROM entity_sets").fetchall()
            cache = {}
            for row in rows:
                es = EntitySet.from_dict(json.loads(row["payload"]))
                cache[es.set_id] = es
            self._entity_set_cache = cache
        return self._entity_set_cache

    # --- experiments ----------------------------------------------------------

    def create_experiment(self, draft: dict, inline_sets: Iterable[EntitySet] = ()) -> Experiment:
        with self._txn():
            for es in inline_sets:
                self.put_entity_set(es)
            slugs = {
                r["slug"] for r in self._conn.execute("SELECT slug FROM experiments")
            }
            experiment = validate_experiment(draft, self.entity_sets(), existing_slugs=slugs)
            try:
                self._conn.execute(
                    "INSERT INTO experiments(experiment_id, slug, status, payload) VALUES (?,?,?,?)",
                    (
                        experiment.experiment_id,
                        experiment.slug,
                        experiment.status.value,
                        json.dumps(experiment.to_dict()),
                    ),
                )
            except sqlite3.IntegrityError as exc:
                raise DuplicateSlug(str(exc)) from exc
            return experiment

    def _experiment_from_row(self, row) -> Experiment:
        cached = self._experiment_cache.get(row["experiment_id"])
        if cached is not None and cached.status.value == row["status"]:
            return cached
        payload = json.loads(row["payload"])
        payload["status"] = row["status"]
        experiment = experiment_from_dict(payload)
        self._experiment_cache[experiment.experiment_id] = experiment
        return experiment

    def get_experiment(self, experiment_id: str) -> Experiment:
        row = self._conn.execute(
            "SELECT * FROM experiments WHERE experiment_id=?", (experiment_id,)
        ).fetchone()
        if row is None:
            raise UnknownExperiment(f"no experiment {experiment_id!r}")
        return self._experiment_from_row(row)

    def get_experiment_by_slug(self, slug: str) -> Experiment:
        row = self._conn.execute("SELECT * FROM experiments WHERE slug=?", (slug,)).fetchone()
        if row is None:
            raise UnknownSlug(f"no experiment at slug {slug!r}")
        return self._experiment_from_row(row)

    def resolve_experiment(self, ref: str) -> Experiment:
        """Accept either an experiment_id or a slug."""
        try:
            return self.get_experiment(ref)
        except UnknownExperiment:
            try:
                return self.get_experiment_by_slug(ref)
            except UnknownSlug:
                raise UnknownExperiment(f"no experiment {ref!r}") from None

    def set_experiment_status(self, experiment_id: str, status: ExperimentStatus) -> None:
        with self._txn():
            cur = self._conn.execute(
                "UPDATE experiments SET status=? WHERE experiment_id=?",
                (status.value, experiment_id),
            )
            if cur.rowcount == 0:
                raise UnknownExperiment(f"no experiment {experiment_id!r}")
            self._experiment_cache.pop(experiment_id, None)

    # --- assignment -------------------------------------------------------------

    def assignment_counts(self, experiment: Experiment) -> AssignmentCounts:
        counts = AssignmentCounts.empty(experiment)
        rows = self._conn.execute(
            "SELECT condition_index, world_index, COUNT(*) AS n FROM assignments "
            "WHERE experiment_id=? GROUP BY condition_index, world_index",
            (experiment.experiment_id,),
        ).fetchall()
        for row in rows:
            counts.per_condition[row["condition_index"]] += row["n"]
            counts.per_world[row["condition_index"]][row["world_index"]] += row["n"]
        return counts

    def get_assignment(self, experiment_id: str, participant_id: str) -> Assignment | None:
        row = self._conn.execute(
            "SELECT * FROM assignments WHERE experiment_id=? AND participant_id=?",
            (experiment_id, participant_id),
        ).fetchone()
        if row is None:
            return None
        return Assignment(
            participant_id=row["participant_id"],
            condition_index=row["condition_index"],
            world_index=row["world_index"],
            assigned_at=_parse_iso(row["assigned_at"]),
        )

    def get_or_create_assignment(self, experiment: Experiment, participant_id: str) -> Assignment:
        with self._txn():
            existing = self.get_assignment(experiment.experiment_id, participant_id)
            if existing is not None:
                return existing
            counts = self.assignment_counts(experiment)
            assignment = make_assignment(experiment, participant_id, counts, now=self.now_fn())
            self._conn.execute(
                "INSERT INTO assignments(experiment_id, participant_id, condition_index, "
                "world_index, assigned_at) VALUES (?,?,?,?,?)",
                (
                    experiment.experiment_id,
                    participant_id,
                    assignment.condition_index,
                    assignment.world_index,
                    _iso(assignment.assigned_at),
                ),
            )
            return assignment

    # --- worlds -----------------------------------------------------------------

    def load_world(
        self, experiment_id: str, condition_index: int, world_index: int
    ) -> WorldAggregates:
        """Immutable snapshot of one world's aggregates."""
        world = WorldAggregates(
            experiment_id=experiment_id,
            condition_index=condition_index,
            world_index=world_index,
        )
        head = self._conn.execute(
            "SELECT session_count, version FROM worlds WHERE experiment_id=? "
            "AND condition_index=? AND world_index=?",
            (experiment_id, condition_index, world_index),
        ).fetchone()
        if head:
            world.session_count = head["session_count"]
            world.version = head["version"]
        rows = self._conn.execute(
            "SELECT * FROM world_entities WHERE experiment_id=? AND condition_index=? "
            "AND world_index=?",
            (experiment_id, condition_index, world_index),
        ).fetchall()
        for row in rows:
            world.per_entity[row["entity_id"]] = EntityAggregate(
                shares=row["shares"],
                likes=row["likes"],
                dwell_total_ms=row["dwell_total_ms"],
                dwell_sessions=row["dwell_sessions"],
            )
        return world

    def _apply_world(self, session: Session) -> None:
        self.apply_outcomes(
            session.experiment_id,
            session.condition_index,
            session.world_index,
            resolve_engagement(session),
        )

    def apply_outcomes(
        self,
        experiment_id: str,
        condition_index: int,
        world_index: int,
        outcomes,
    ) -> None:
        """Fold one session's outcomes into a world and persist.

        finalize_session is the normal-path caller; this is also the hook
        for seeding or backfilling world aggregates directly.
        """
        with self._txn():
            self._apply_outcomes_locked(experiment_id, condition_index, world_index, outcomes)

    def _apply_outcomes_locked(
        self, experiment_id, condition_index, world_index, outcomes
    ) -> None:
        world = self.load_world(experiment_id, condition_index, world_index)
        apply_session_summary(
            world, outcomes, condition_index=condition_index, world_index=world_index
        )
        key = (experiment_id, condition_index, world_index)
        self._conn.execute(
            "INSERT INTO worlds(experiment_id, condition_index, world_index, session_count, version) "
            "VALUES (?,?,?,?,?) ON CONFLICT(experiment_id, condition_index, world_index) "
            "DO UPDATE SET session_count=excluded.session_count, version=excluded.version",
            (*key, world.session_count, world.version),
        )
        for outcome in outcomes:
            agg = world.per_entity[outcome.entity_id]
            self._conn.execute(
                "INSERT INTO world_entities(experiment_id, condition_index, world_index, "
                "entity_id, shares, likes, dwell_total_ms, dwell_sessions) VALUES (?,?,?,?,?,?,?,?) "
                "ON CONFLICT(experiment_id, condition_index, world_index, entity_id) DO UPDATE SET "
                "shares=excluded.shares, likes=excluded.likes, "
                "dwell_total_ms=excluded.dwell_total_ms, dwell_sessions=excluded.dwell_sessions",
                (
                    *key,
                    outcome.entity_id,
                    agg.shares,
                    agg.likes,
                    agg.dwell_total_ms,
                    agg.dwell_sessions,
                ),
            )

    # --- sessions ---------------------------------------------------------------

    def get_or_create_session(
        self,
        experiment: Experiment,
        participant_id: str,
        build: Callable[[Assignment], tuple[DisplayFeed, dict[str, str]]],
    ) -> Session:
        """Idempotent session creation; ``build`` runs only for a new session
        and returns (display_feed, entity_id -> set_id provenance)."""
        with self._txn():
            session_id = session_id_for(experiment.experiment_id, participant_id)
            existing = self._load_session_row(session_id)
            if existing is not None:
                return existing
            assignment = self.get_or_create_assignment(experiment, participant_id)
            feed, set_ids = build(assignment)
            now = self.now_fn()
            self._conn.execute(
                "INSERT INTO sessions(session_id, experiment_id, participant_id, "
                "condition_index, world_index, phase, feed, set_ids, started_at, last_event_at) "
                "VALUES (?,?,?,?,?,?,?,?,?,?)",
                (
                    session_id,
                    experiment.experiment_id,
                    participant_id,
                    assignment.condition_index,
                    assignment.world_index,
                    SessionPhase.IN_FEED.value,
                    json.dumps(feed.to_dict()),
                    json.dumps(set_ids),
                    _iso(now),
                    _iso(now),
                ),
            )
            return self._load_session_row(session_id)

    def _load_session_row(self, session_id: str) -> Session | None:
        row = self._conn.execute(
            "SELECT * FROM sessions WHERE session_id=?", (session_id,)
        ).fetchone()
        if row is None:
            return None
        experiment = self.get_experiment(row["experiment_id"])
        events = [
            ClientEvent(
                type=EventType(er["type"]),
                client_ts_ms=er["client_ts_ms"],
                entity_id=er["entity_id"],
                visible=None if er["visible"] is None else bool(er["visible"]),
                viewport_fraction=er["viewport_fraction"],
            )
            for er in self._conn.execute(
                "SELECT * FROM events WHERE session_id=? ORDER BY seq", (session_id,)
            )
        ]
        responses = {
            sr["question_id"]: json.loads(sr["response_value"])
            for sr in self._conn.execute(
                "SELECT question_id, response_value FROM survey_responses WHERE session_id=?",
                (session_id,),
            )
        }
        return Session(
            session_id=row["session_id"],
            experiment_id=row["experiment_id"],
            participant_id=row["participant_id"],
            condition_index=row["condition_index"],
            world_index=row["world_index"],
            feed=DisplayFeed.from_dict(json.loads(row["feed"])),
            set_id_by_entity=json.loads(row["set_ids"]),
            phase=SessionPhase(row["phase"]),
            events=events,
            survey_responses=responses,
            started_at=_parse_iso(row["started_at"]),
            completed_at=_parse_iso(row["completed_at"]),
            horizon_ms=row["horizon_ms"],
            dwell_config=experiment.dwell_config,
        )

    def load_session(self, session_id: str) -> Session:
        session = self._load_session_row(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id!r}")
        return session

    def append_events(self, session: Session, new_events: list[ClientEvent]) -> None:
        """Persist events accepted by telemetry.ingest_events, plus the
        session's horizon/phase columns, in one transaction."""
        with self._txn():
            now = _iso(self.now_fn())
            for ev in new_events:
                self._conn.execute(
                    "INSERT OR IGNORE INTO events(session_id, type, entity_id, client_ts_ms, "
                    "visible, viewport_fraction, received_at) VALUES (?,?,?,?,?,?,?)",
                    (
                        session.session_id,
                        ev.type.value,
                        ev.entity_id,
                        ev.client_ts_ms,
                        None if ev.visible is None else int(ev.visible),
                        ev.viewport_fraction,
                        now,
                    ),
                )
            self._conn.execute(
                "UPDATE sessions SET phase=?, horizon_ms=?, last_event_at=? WHERE session_id=?",
                (session.phase.value, session.horizon_ms, now, session.session_id),
            )

    def update_session_phase(self, session: Session) -> None:
        with self._txn():
            self._conn.execute(
                "UPDATE sessions SET phase=?, horizon_ms=?, completed_at=? WHERE session_id=?",
                (
                    session.phase.value,
                    session.horizon_ms,
                    _iso(session.completed_at),
                    session.session_id,
                ),
            )

    def completion_token(self, session_id: str) -> str | None:
        row = self._conn.execute(
            "SELECT completion_token FROM sessions WHERE session_id=?", (session_id,)
        ).fetchone()
        return row["completion_token"] if row else None

    def finalize_session(
        self,
        session: Session,
        responses: dict[str, object] | None,
        token: str,
        transition: Transition = Transition.SUBMIT_SURVEY,
    ) -> None:
        """Survey storage, phase advance and world application, exactly once."""
        with self._txn():
            applied = self._conn.execute(
                "SELECT world_applied FROM sessions WHERE session_id=?",
                (session.session_id,),
            ).fetchone()
            if applied is None:
                raise UnknownSession(session.session_id)
            if applied["world_applied"]:
                return  # retries observe the already-final state
            now = self.now_fn()
            if responses:
                for question_id, value in responses.items():
                    self._conn.execute(
                        "INSERT OR REPLACE INTO survey_responses(session_id, question_id, "
                        "response_value, responded_at) VALUES (?,?,?,?)",
                        (session.session_id, question_id, json.dumps(value), _iso(now)),
                    )
                session.survey_responses.update(responses)
            advance_session(session, transition, now=now)
            self._apply_world(session)
            self._conn.execute(
                "UPDATE sessions SET phase=?, completed_at=?, world_applied=1, "
                "completion_token=? WHERE session_id=?",
                (session.phase.value, _iso(session.completed_at), token, session.session_id),
            )

    def finalize_abandoned(self, idle_seconds: float = 1800.0) -> list[str]:
        """Finalize in_feed sessions with no activity for idle_seconds.

        Dwell is truncated (open intervals credit nothing without a
        feed_finished horizon) and outcomes still feed the session's world.
        Returns finalized session ids.
        """
        now = self.now_fn()
        finalized = []
        with self._txn():
            rows = self._conn.execute(
                "SELECT session_id, last_event_at FROM sessions WHERE phase=?",
                (SessionPhase.IN_FEED.value,),
            ).fetchall()
            for row in rows:
                last = _parse_iso(row["last_event_at"])
                if last is None or (now - last).total_seconds() < idle_seconds:
                    continue
                session = self.load_session(row["session_id"])
                self.finalize_session(session, None, token="", transition=Transition.ABANDON)
                finalized.append(row["session_id"])
        return finalized

    # --- introspection used by exports and tests ---------------------------------

    def sessions_for_experiment(self, experiment_id: str) -> list[Session]:
        rows = self._conn.execute(
            "SELECT session_id FROM sessions WHERE experiment_id=? "
            "ORDER BY started_at, session_id",
            (experiment_id,),
        ).fetchall()
        return [self.load_session(r["session_id"]) for r in rows]

    def event_count(self, session_id: str) -> int:
        row = self._conn.execute(
            "SELECT COUNT(*) AS n FROM events WHERE session_id=?", (session_id,)
        ).fetchone()
        return row["n"]

    def record_ranker_failure(self, session_key: str, reason: str, detail: str) -> None:
        with self._txn():
            self._conn.execute(
                "INSERT INTO ranker_failures(session_key, reason, detail, at) VALUES (?,?,?,?)",
                (session_key, reason, detail, _iso(self.now_fn())),
            )

    def ranker_failures(self) -> list[dict]:
        return [
            dict(r)
            for r in self._conn.execute("SELECT * FROM ranker_failures ORDER BY seq")
        ]


class _Txn:
    """Reentrant lock + BEGIN IMMEDIATE transaction scope."""

    def __init__(self, store: Store):
        self.store = store

    def __enter__(self):
        self.store.lock.acquire()
        if not self.store._conn.in_transaction:
            self.store._conn.execute("BEGIN IMMEDIATE")
            self.owns = True
        else:
            self.owns = False
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if self.owns:
                if exc_type is None:
                    self.store._conn.execute("COMMIT")
                else:
                    self.store._conn.execute("ROLLBACK")
        finally:
            self.store.lock.release()
        return False

"""Participant event stream: ingestion, dwell, toggles, session phases.

Dwell is computed server-side from raw visibility transitions rather than a
client-reported total, so it stays auditable and recomputable under a
different DwellConfig after the fact. Durations use client timestamps
(immune to network jitter); the server only orders batches.

Dwell semantics for one entity (see also feedlab._kernels.dwell_py):
the counting state is on while the latest visibility event has visible=true
and viewport_fraction >= threshold. Each span between consecutive events is
credited while on; a span closed by feed_finished (the participant pressed
Continue, so the post really was viewable throughout) is credited fully,
any other span is clipped to idle_gap_ms, and a span that never closes
credits nothing. The per-entity total is capped at per_entity_cap_ms.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from ._kernels import dwell_sweep
from .feed import DisplayFeed
from .model import DwellConfig
from .errors import PhaseViolation

# rejection reasons used in event-batch replies
REASON_UNKNOWN_ENTITY = "unknown_entity"
REASON_MALFORMED = "malformed"
REASON_TIMESTAMP_REGRESSION = "timestamp_regression"
REASON_PHASE_VIOLATION = "phase_violation"


class EventType(str, enum.Enum):
    VISIBILITY = "visibility"
    SHARE = "share"
    UNSHARE = "unshare"
    LIKE = "like"
    UNLIKE = "unlike"
    BOOKMARK = "bookmark"
    UNBOOKMARK = "unbookmark"
    FEED_OPENED = "feed_opened"
    FEED_FINISHED = "feed_finished"


ENGAGEMENT_TYPES = {
    EventType.SHARE,
    EventType.UNSHARE,
    EventType.LIKE,
    EventType.UNLIKE,
    EventType.BOOKMARK,
    EventType.UNBOOKMARK,
}

_TOGGLE_FAMILIES = {
    "share": (EventType.SHARE, EventType.UNSHARE),
    "like": (EventType.LIKE, EventType.UNLIKE),
    "bookmark": (EventType.BOOKMARK, EventType.UNBOOKMARK),
}


@dataclass(frozen=True)
class ClientEvent:
    type: EventType
    client_ts_ms: int
    entity_id: str | None = None
    visible: bool | None = None
    viewport_fraction: float | None = None

    def dedup_key(self) -> tuple:
        return (self.type.value, self.entity_id, self.client_ts_ms)

    def to_dict(self) -> dict:
        d: dict = {"type": self.type.value, "client_ts_ms": self.client_ts_ms}
        if self.entity_id is not None:
            d["entity_id"] = self.entity_id
        if self.visible is not None:
            d["visible"] = self.visible
        if self.viewport_fraction is not None:
            d["viewport_fraction"] = self.viewport_fraction
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClientEvent":
        ev = cls(
            type=EventType(d["type"]),
            client_ts_ms=int(d["client_ts_ms"]),
            entity_id=d.get("entity_id"),
            visible=d.get("visible"),
            viewport_fraction=(
                None if d.get("viewport_fraction") is None else float(d["viewport_fraction"])
            ),
        )
        ev.validate()
        return ev

    def validate(self) -> None:
        if self.client_ts_ms < 0:
            raise ValueError("client_ts_ms must be nonnegative")
        if self.type is EventType.VISIBILITY:
            if self.entity_id is None or self.visible is None or self.viewport_fraction is None:
                raise ValueError("visibility events carry entity_id, visible, viewport_fraction")
            if not (0.0 <= self.viewport_fraction <= 1.0):
                raise ValueError("viewport_fraction must be in [0, 1]")
        elif self.type in ENGAGEMENT_TYPES:
            if not self.entity_id:
                raise ValueError(f"{self.type.value} events carry entity_id")


class SessionPhase(str, enum.Enum):
    CREATED = "created"
    IN_FEED = "in_feed"
    IN_SURVEY = "in_survey"
    COMPLETE = "complete"
    ABANDONED = "abandoned"


class Transition(str, enum.Enum):
    OPEN_FEED = "open_feed"
    FINISH_FEED = "finish_feed"
    SUBMIT_SURVEY = "submit_survey"
    ABANDON = "abandon"


_LEGAL_TRANSITIONS: dict[Transition, tuple[SessionPhase, SessionPhase]] = {
    Transition.OPEN_FEED: (SessionPhase.CREATED, SessionPhase.IN_FEED),
    Transition.FINISH_FEED: (SessionPhase.IN_FEED, SessionPhase.IN_SURVEY),
    Transition.SUBMIT_SURVEY: (SessionPhase.IN_SURVEY, SessionPhase.COMPLETE),
}

FINAL_PHASES = {SessionPhase.COMPLETE, SessionPhase.ABANDONED}


@dataclass
class Session:
    session_id: str
    experiment_id: str
    participant_id: str
    condition_index: int
    world_index: int
    feed: DisplayFeed
    set_id_by_entity: dict[str, str] = field(default_factory=dict)
    phase: SessionPhase = SessionPhase.CREATED
    events: list[ClientEvent] = field(default_factory=list)
    survey_responses: dict[str, object] = field(default_factory=dict)
    started_at: datetime | None = None
    completed_at: datetime | None = None
    horizon_ms: int | None = None  # feed_finished timestamp; dwell truncation point
    dwell_config: DwellConfig = field(default_factory=DwellConfig)

    def last_ts_for(self, entity_id: str | None) -> int | None:
        last = None
        for ev in self.events:
            if ev.entity_id == entity_id:
                last = ev.client_ts_ms
        return last


@dataclass(frozen=True)
class IngestSummary:
    accepted: int
    rejected: tuple[dict, ...] = ()

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "rejected": list(self.rejected)}


def ingest_events(session: Session, batch: list[ClientEvent]) -> tuple[Session, IngestSummary]:
    """Append a batch of client events to a session.

    Per-event rejections (unknown entity, malformed payload, timestamp
    regression, events after feed_finished) are reported by index; exact
    duplicates of already-stored events are accepted without re-appending,
    so retransmitting a batch yields the same session and the same summary.
    Raises PhaseViolation when the session is not accepting events at all.
    """
    if session.phase is not SessionPhase.IN_FEED:
        raise PhaseViolation(f"session {session.session_id} is {session.phase.value}")

    feed_ids = set(session.feed.entity_ids())
    seen_keys = {ev.dedup_key() for ev in session.events}
    last_ts: dict[str | None, int] = {}
    for ev in session.events:
        last_ts[ev.entity_id] = ev.client_ts_ms

    finished = any(ev.type is EventType.FEED_FINISHED for ev in session.events)
    accepted = 0
    rejected: list[dict] = []
    for index, ev in enumerate(batch):
        if ev.dedup_key() in seen_keys:
            accepted += 1  # idempotent replay
            continue
        if finished:
            rejected.append({"index": index, "reason": REASON_PHASE_VIOLATION})
            continue
        try:
            ev.validate()
        except ValueError:
            rejected.append({"index": index, "reason": REASON_MALFORMED})
            continue
        if ev.entity_id is not None and ev.entity_id not in feed_ids:
            rejected.append({"index": index, "reason": REASON_UNKNOWN_ENTITY})
            continue
        prev = last_ts.get(ev.entity_id)
        if prev is not None and ev.client_ts_ms < prev:
            rejected.append({"index": index, "reason": REASON_TIMESTAMP_REGRESSION})
            continue
        session.events.append(ev)
        seen_keys.add(ev.dedup_key())
        last_ts[ev.entity_id] = ev.client_ts_ms
        accepted += 1
        if ev.type is EventType.FEED_FINISHED:
            finished = True
            session.horizon_ms = ev.client_ts_ms
    return session, IngestSummary(accepted=accepted, rejected=tuple(rejected))


def advance_session(
    session: Session,
    transition: Transition,
    now: datetime | None = None,
) -> Session:
    """Move the session forward through its phase machine (forward-only)."""
    if transition is Transition.ABANDON:
        if session.phase in FINAL_PHASES:
            raise PhaseViolation(f"cannot abandon a {session.phase.value} session")
        session.phase = SessionPhase.ABANDONED
        session.completed_at = now
        return session
    legal = _LEGAL_TRANSITIONS[transition]
    if session.phase is not legal[0]:
        raise PhaseViolation(
            f"transition {transition.value} illegal from {session.phase.value}"
        )
    session.phase = legal[1]
    if transition is Transition.SUBMIT_SURVEY:
        session.completed_at = now
    return session


def _visibility_rows(
    events: list[ClientEvent], threshold: float, horizon_ms: int | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows: list[tuple[int, bool, bool]] = []
    for ev in events:
        if ev.type is EventType.VISIBILITY:
            on = bool(ev.visible) and float(ev.viewport_fraction or 0.0) >= threshold
            rows.append((ev.client_ts_ms, on, False))
        elif ev.type is EventType.FEED_FINISHED:
            rows.append((ev.client_ts_ms, False, True))
    if horizon_ms is not None:
        rows.append((horizon_ms, False, True))
    rows.sort(key=lambda r: (r[0], r[2]))  # finish marker sorts after a same-ms event
    ts = np.ascontiguousarray([r[0] for r in rows], dtype=np.int64)
    on = np.ascontiguousarray([r[1] for r in rows], dtype=np.uint8)
    fin = np.ascontiguousarray([r[2] for r in rows], dtype=np.uint8)
    return ts, on, fin


def compute_dwell(
    events: list[ClientEvent],
    config: DwellConfig | None = None,
    horizon_ms: int | None = None,
) -> int:
    """Total viewable time in ms for one entity's visibility stream.

    ``events`` contains the entity's visibility events (time-sorted) and may
    include a feed_finished marker; ``horizon_ms`` injects one. Pathological
    streams yield 0, never negative.
    """
    config = config or DwellConfig()
    ts, on, fin = _visibility_rows(events, config.visibility_threshold, horizon_ms)
    if len(ts) == 0:
        return 0
    return int(dwell_sweep(ts, on, fin, config.idle_gap_ms, config.per_entity_cap_ms))


@dataclass(frozen=True)
class EngagementOutcome:
    entity_id: str
    position: int
    dwell_ms: int
    shared: bool = False
    ever_shared: bool = False
    liked: bool = False
    ever_liked: bool = False
    bookmarked: bool = False
    ever_bookmarked: bool = False

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "position": self.position,
            "dwell_ms": self.dwell_ms,
            "shared": self.shared,
            "ever_shared": self.ever_shared,
            "liked": self.liked,
            "ever_liked": self.ever_liked,
            "bookmarked": self.bookmarked,
            "ever_bookmarked": self.ever_bookmarked,
        }


def _toggle_state(events: list[ClientEvent], positive: EventType, negative: EventType) -> tuple[bool, bool]:
    """(final state, ever toggled on); the last on/off event wins."""
    state = False
    ever = False
    for ev in sorted(events, key=lambda e: e.client_ts_ms):
        if ev.type is positive:
            state = True
            ever = True
        elif ev.type is negative:
            state = False
    return state, ever


def resolve_engagement(session: Session) -> list[EngagementOutcome]:
    """Final per-entity outcomes for a session that has left the feed."""
    if session.phase not in (SessionPhase.IN_SURVEY, *FINAL_PHASES):
        raise PhaseViolation(
            f"cannot resolve engagement while session is {session.phase.value}"
        )
    by_entity: dict[str, list[ClientEvent]] = {}
    for ev in session.events:
        if ev.entity_id is not None:
            by_entity.setdefault(ev.entity_id, []).append(ev)

    outcomes = []
    for entry in session.feed.entries:
        events = by_entity.get(entry.entity_id, [])
        shared, ever_shared = _toggle_state(events, EventType.SHARE, EventType.UNSHARE)
        liked, ever_liked = _toggle_state(events, EventType.LIKE, EventType.UNLIKE)
        bookmarked, ever_bookmarked = _toggle_state(
            events, EventType.BOOKMARK, EventType.UNBOOKMARK
        )
        dwell = compute_dwell(events, session.dwell_config, horizon_ms=session.horizon_ms)
        outcomes.append(
            EngagementOutcome(
                entity_id=entry.entity_id,
                position=entry.position,
                dwell_ms=dwell,
                shared=shared,
                ever_shared=ever_shared,
                liked=liked,
                ever_liked=ever_liked,
                bookmarked=bookmarked,
                ever_bookmarked=ever_bookmarked,
            )
        )
    return outcomes

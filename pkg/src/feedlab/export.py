"""Analysis-ready exports: interaction records, surveys, diversity, figures.

Interaction records are a view recomputed from the raw event log plus the
stored configs, so every export is reproducible after the fact (including
under a changed DwellConfig). CSV output is RFC 4180, UTF-8, LF line
endings; JSONL mirrors the CSV field names one to one. Column orders are
documented in docs/export_schema.md and frozen for golden-file tests.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

from .errors import NoData
from .store import Store
from .telemetry import FINAL_PHASES, SessionPhase, Session, resolve_engagement
from .worlds import diversity_report

INTERACTION_COLUMNS = (
    "experiment_id",
    "participant_id",
    "session_id",
    "condition_index",
    "world_index",
    "entity_id",
    "entity_set_id",
    "position",
    "dwell_ms",
    "shared",
    "ever_shared",
    "liked",
    "ever_liked",
    "bookmarked",
    "ever_bookmarked",
    "shown_shares",
    "shown_likes",
    "intervention_seen_before",
    "session_started_at",
    "session_phase_final",
)

SURVEY_COLUMNS = (
    "session_id",
    "participant_id",
    "question_id",
    "response_value",
    "responded_at",
)

DIVERSITY_COLUMNS = (
    "condition_index",
    "world_index",
    "gini",
    "entropy_bits",
    "top_entity",
    "cross_world_unpredictability",
)

DWELL_BY_POSITION_COLUMNS = ("position", "mean_dwell_ms", "n")

FIGURE_SESSION_COLUMNS = (
    "session_id",
    "participant_id",
    "position",
    "entity_id",
    "dwell_ms",
    "share_marker",
    "like_marker",
    "bookmark_marker",
)


@dataclass(frozen=True)
class InteractionRecord:
    experiment_id: str
    participant_id: str
    session_id: str
    condition_index: int
    world_index: int
    entity_id: str
    entity_set_id: str
    position: int
    dwell_ms: int
    shared: bool
    ever_shared: bool
    liked: bool
    ever_liked: bool
    bookmarked: bool
    ever_bookmarked: bool
    shown_shares: int | None
    shown_likes: int | None
    intervention_seen_before: bool
    session_started_at: str
    session_phase_final: str

    def to_dict(self) -> dict:
        return {c: getattr(self, c) for c in INTERACTION_COLUMNS}


def _session_records(session: Session) -> list[InteractionRecord]:
    outcomes = {o.entity_id: o for o in _resolved(session)}
    intervention_positions = [
        e.position for e in session.feed.entries if e.intervention_before is not None
    ]
    records = []
    for entry in session.feed.entries:
        outcome = outcomes[entry.entity_id]
        records.append(
            InteractionRecord(
                experiment_id=session.experiment_id,
                participant_id=session.participant_id,
                session_id=session.session_id,
                condition_index=session.condition_index,
                world_index=session.world_index,
                entity_id=entry.entity_id,
                entity_set_id=session.set_id_by_entity.get(entry.entity_id, ""),
                position=entry.position,
                dwell_ms=outcome.dwell_ms,
                shared=outcome.shared,
                ever_shared=outcome.ever_shared,
                liked=outcome.liked,
                ever_liked=outcome.ever_liked,
                bookmarked=outcome.bookmarked,
                ever_bookmarked=outcome.ever_bookmarked,
                shown_shares=entry.shown_shares,
                shown_likes=entry.shown_likes,
                intervention_seen_before=any(
                    p <= entry.position for p in intervention_positions
                ),
                session_started_at=_iso_z(session.started_at),
                session_phase_final=session.phase.value,
            )
        )
    return records


def _resolved(session: Session):
    """resolve_engagement for any phase: in-feed sessions get provisional
    outcomes (open intervals credit no dwell)."""
    if session.phase in (SessionPhase.IN_SURVEY, *FINAL_PHASES):
        return resolve_engagement(session)
    probe = Session(**{**session.__dict__, "phase": SessionPhase.IN_SURVEY})
    return resolve_engagement(probe)


def _iso_z(dt) -> str:
    if dt is None:
        return ""
    return dt.isoformat().replace("+00:00", "Z")


def interaction_records(store: Store, experiment_id: str) -> list[InteractionRecord]:
    store.get_experiment(experiment_id)  # raises UnknownExperiment
    records: list[InteractionRecord] = []
    for session in store.sessions_for_experiment(experiment_id):
        records.extend(_session_records(session))
    records.sort(key=lambda r: (r.session_started_at, r.session_id, r.position))
    return records


def _csv_bytes(columns: tuple[str, ...], rows: list[dict]) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row[c]) for c in columns])
    return buf.getvalue().encode("utf-8")


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _jsonl_bytes(rows: list[dict]) -> bytes:
    return "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows).encode("utf-8")


def export_interactions(store: Store, experiment_id: str, format: str = "csv") -> bytes:
    rows = [r.to_dict() for r in interaction_records(store, experiment_id)]
    if format == "jsonl":
        return _jsonl_bytes(rows)
    return _csv_bytes(INTERACTION_COLUMNS, rows)


def survey_rows(store: Store, experiment_id: str) -> list[dict]:
    store.get_experiment(experiment_id)
    rows = []
    for session in store.sessions_for_experiment(experiment_id):
        for question_id in sorted(session.survey_responses):
            rows.append(
                {
                    "session_id": session.session_id,
                    "participant_id": session.participant_id,
                    "question_id": question_id,
                    "response_value": session.survey_responses[question_id],
                    "responded_at": _iso_z(session.completed_at),
                }
            )
    rows.sort(key=lambda r: (r["session_id"], r["question_id"]))
    return rows


def export_surveys(store: Store, experiment_id: str, format: str = "csv") -> bytes:
    rows = survey_rows(store, experiment_id)
    if format == "jsonl":
        return _jsonl_bytes(rows)
    return _csv_bytes(SURVEY_COLUMNS, rows)


def dwell_by_position(store: Store, experiment_id: str) -> list[dict]:
    """Mean dwell per feed position across finalized sessions."""
    store.get_experiment(experiment_id)
    sums: dict[int, int] = {}
    counts: dict[int, int] = {}
    for session in store.sessions_for_experiment(experiment_id):
        if session.phase not in FINAL_PHASES:
            continue
        for outcome in resolve_engagement(session):
            sums[outcome.position] = sums.get(outcome.position, 0) + outcome.dwell_ms
            counts[outcome.position] = counts.get(outcome.position, 0) + 1
    if not counts:
        raise NoData(f"experiment {experiment_id!r} has no finalized sessions")
    return [
        {"position": p, "mean_dwell_ms": sums[p] / counts[p], "n": counts[p]}
        for p in sorted(counts)
    ]


def export_dwell_by_position(store: Store, experiment_id: str) -> bytes:
    return _csv_bytes(DWELL_BY_POSITION_COLUMNS, dwell_by_position(store, experiment_id))


def diversity_rows(store: Store, experiment_id: str) -> list[dict]:
    experiment = store.get_experiment(experiment_id)
    sets = store.entity_sets()
    rows = []
    for condition in experiment.conditions:
        universe: list[str] = []
        for draw in condition.draws:
            universe.extend(sets[draw.set_id].entity_ids())
        worlds = [
            store.load_world(experiment_id, condition.condition_index, w)
            for w in range(condition.world_count)
        ]
        report = diversity_report(
            worlds, sorted(set(universe)), condition_index=condition.condition_index
        )
        for wd in report.per_world:
            rows.append(
                {
                    "condition_index": condition.condition_index,
                    "world_index": wd.world_index,
                    "gini": wd.gini,
                    "entropy_bits": wd.entropy_bits,
                    "top_entity": wd.top_entity,
                    "cross_world_unpredictability": report.cross_world_unpredictability,
                }
            )
    return rows


def export_diversity(store: Store, experiment_id: str, format: str = "csv") -> bytes:
    rows = diversity_rows(store, experiment_id)
    if format == "jsonl":
        return _jsonl_bytes(rows)
    return _csv_bytes(DIVERSITY_COLUMNS, rows)


def _marker(final: bool, ever: bool, on_word: str, off_word: str) -> str:
    if final:
        return on_word
    if ever:
        return off_word  # toggled on and then off again
    return ""


def figure_rows_from_records(records: list[dict]) -> list[dict]:
    """Markered dwell series from interaction-record dicts (e.g. parsed
    JSONL export), so the CLI can build figures from the API alone."""
    if not records:
        raise NoData("no interaction records to plot")
    return [
        {
            "session_id": r["session_id"],
            "participant_id": r["participant_id"],
            "position": r["position"],
            "entity_id": r["entity_id"],
            "dwell_ms": r["dwell_ms"],
            "share_marker": _marker(r["shared"], r["ever_shared"], "shared", "unshared"),
            "like_marker": _marker(r["liked"], r["ever_liked"], "liked", "unliked"),
            "bookmark_marker": _marker(
                r["bookmarked"], r["ever_bookmarked"], "bookmarked", "unbookmarked"
            ),
        }
        for r in records
    ]


def figure_session_rows(store: Store, experiment_id: str) -> list[dict]:
    """Per-session dwell-vs-position series with engagement markers."""
    records = [r.to_dict() for r in interaction_records(store, experiment_id)]
    return figure_rows_from_records(records)


def emit_figure_data(store: Store, experiment_id: str) -> dict[str, bytes]:
    """Plot-ready CSVs: one per-session series file, one mean-dwell curve."""
    return {
        "figure_sessions.csv": _csv_bytes(
            FIGURE_SESSION_COLUMNS, figure_session_rows(store, experiment_id)
        ),
        "figure_mean_dwell.csv": export_dwell_by_position(store, experiment_id),
    }

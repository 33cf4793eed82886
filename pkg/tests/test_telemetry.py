from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feedlab._kernels import available_backends
from feedlab.errors import PhaseViolation
from feedlab.feed import DisplayFeed, FeedEntry
from feedlab.model import DwellConfig
from feedlab.telemetry import (
    ClientEvent,
    EventType,
    Session,
    SessionPhase,
    Transition,
    advance_session,
    compute_dwell,
    ingest_events,
    resolve_engagement,
)
from helpers import dwell_oracle_ms, random_visibility_stream


def vis(ts, visible, fraction=1.0, eid="e"):
    return ClientEvent(
        type=EventType.VISIBILITY,
        client_ts_ms=ts,
        entity_id=eid,
        visible=visible,
        viewport_fraction=fraction,
    )


def ev(kind, ts, eid="e"):
    return ClientEvent(type=EventType(kind), client_ts_ms=ts, entity_id=eid)


def finished(ts):
    return ClientEvent(type=EventType.FEED_FINISHED, client_ts_ms=ts)


def _feed(*eids) -> DisplayFeed:
    return DisplayFeed(
        entries=tuple(FeedEntry(entity_id=e, position=i) for i, e in enumerate(eids))
    )


def _session(*eids, phase=SessionPhase.IN_FEED) -> Session:
    return Session(
        session_id="s1",
        experiment_id="x1",
        participant_id="p1",
        condition_index=0,
        world_index=0,
        feed=_feed(*eids),
        phase=phase,
    )


# --- compute_dwell -----------------------------------------------------------


def test_simple_visible_interval():
    assert compute_dwell([vis(0, True), vis(1500, False)]) == 1500


def test_below_threshold_counts_nothing():
    assert compute_dwell([vis(0, True, fraction=0.3), vis(1000, False)]) == 0


def test_fraction_dip_splits_interval():
    events = [
        vis(0, True, 1.0),
        vis(500, True, 0.4),  # drops below the 0.5 default threshold
        vis(900, True, 0.8),
        vis(1400, False),
    ]
    assert compute_dwell(events) == 1000


def test_open_interval_truncated_at_finish_then_capped():
    events = [vis(0, True), finished(300_000)]
    assert compute_dwell(events) == 120_000


def test_open_interval_without_any_horizon_counts_nothing():
    assert compute_dwell([vis(0, True)]) == 0


def test_horizon_parameter_equivalent_to_marker():
    events = [vis(0, True)]
    assert compute_dwell(events, horizon_ms=300_000) == 120_000


def test_idle_gap_clips_silent_spans():
    # 100 s of silence between events is treated as idle beyond the 60 s gap
    config = DwellConfig()
    events = [vis(0, True), vis(100_000, False)]
    assert compute_dwell(events, config) == 60_000
    # but a span closed by feed_finished is credited in full (cap still rules)
    assert compute_dwell([vis(0, True), finished(100_000)], config) == 100_000


def test_threshold_boundary_is_inclusive():
    cfg = DwellConfig(visibility_threshold=0.5)
    assert compute_dwell([vis(0, True, 0.5), vis(800, False)], cfg) == 800


def test_empty_stream_is_zero():
    assert compute_dwell([]) == 0


def test_matches_spec_examples_against_oracle():
    cfg = DwellConfig()
    cases = [
        [vis(0, True), vis(1500, False)],
        [vis(0, True, 0.3), vis(1000, False)],
        [vis(0, True), vis(500, True, 0.4), vis(900, True, 0.8), vis(1400, False)],
        [vis(0, True), finished(300_000)],
    ]
    for events in cases:
        assert compute_dwell(events, cfg) == dwell_oracle_ms(events, cfg)


@pytest.mark.parametrize("backend", sorted(available_backends()))
def test_randomized_streams_match_ms_oracle(backend):
    from feedlab import telemetry as tel

    sweep = available_backends()[backend]
    rng = np.random.default_rng(20_220_601)
    orig = tel.dwell_sweep
    tel.dwell_sweep = sweep
    try:
        for _ in range(300):
            events, config, horizon = random_visibility_stream(rng)
            got = compute_dwell(events, config, horizon_ms=horizon)
            want = dwell_oracle_ms(events, config, horizon_ms=horizon)
            assert got == want
    finally:
        tel.dwell_sweep = orig


@given(
    data=st.lists(
        st.tuples(st.integers(0, 300), st.booleans(), st.floats(0, 1)),
        min_size=0,
        max_size=30,
    ),
    tail=st.tuples(st.integers(1, 2000), st.integers(1, 2000)),
)
@settings(max_examples=200, deadline=None)
def test_appending_a_visible_interval_never_decreases_dwell(data, tail):
    cfg = DwellConfig(per_entity_cap_ms=10**9)  # property below the cap
    ts = 0
    events = []
    for dt, visible, fraction in data:
        ts += dt
        events.append(vis(ts, visible, fraction))
    base = compute_dwell(events, cfg)
    gap, width = tail
    extended = events + [vis(ts + gap, True, 1.0), vis(ts + gap + width, False)]
    assert compute_dwell(extended, cfg) >= base


# --- ingest_events -----------------------------------------------------------


def test_empty_batch_unchanged():
    s = _session("e")
    before = list(s.events)
    _, summary = ingest_events(s, [])
    assert s.events == before
    assert summary.accepted == 0 and summary.rejected == ()


def test_share_event_appended():
    s = _session("e")
    _, summary = ingest_events(s, [ev("share", 100)])
    assert summary.accepted == 1
    assert s.events[-1].type is EventType.SHARE


def test_unknown_entity_rejected():
    s = _session("e")
    _, summary = ingest_events(s, [ev("share", 100, eid="ghost")])
    assert summary.accepted == 0
    assert summary.rejected[0]["reason"] == "unknown_entity"


def test_duplicate_batch_is_idempotent():
    batch = [vis(0, True), ev("share", 50), vis(900, False), finished(1000)]
    s1 = _session("e")
    ingest_events(s1, list(batch))
    first = [e.to_dict() for e in s1.events]
    _, summary = ingest_events(s1, list(batch))
    assert [e.to_dict() for e in s1.events] == first
    assert summary.accepted == len(batch)  # replay accepted, nothing re-appended

    s2 = _session("e")
    ingest_events(s2, list(batch))
    assert [e.to_dict() for e in s2.events] == first


def test_events_after_finish_rejected():
    s = _session("e")
    _, summary = ingest_events(s, [finished(1000), ev("share", 1500)])
    assert summary.accepted == 1
    assert summary.rejected[0]["reason"] == "phase_violation"


def test_wrong_phase_raises():
    s = _session("e", phase=SessionPhase.IN_SURVEY)
    with pytest.raises(PhaseViolation):
        ingest_events(s, [ev("share", 1)])


def test_timestamp_regression_rejected():
    s = _session("e")
    ingest_events(s, [vis(1000, True)])
    _, summary = ingest_events(s, [vis(500, False)])
    assert summary.rejected[0]["reason"] == "timestamp_regression"


def test_malformed_visibility_rejected():
    s = _session("e")
    bad = ClientEvent(type=EventType.VISIBILITY, client_ts_ms=10, entity_id="e")
    _, summary = ingest_events(s, [bad])
    assert summary.rejected[0]["reason"] == "malformed"


# --- resolve_engagement ------------------------------------------------------


def _finished_session(events, *eids):
    s = _session(*eids)
    ingest_events(s, events)
    advance_session(s, Transition.FINISH_FEED)
    return s


def test_share_then_unshare():
    s = _finished_session([ev("share", 10), ev("unshare", 20), finished(30)], "e")
    (outcome,) = resolve_engagement(s)
    assert outcome.shared is False
    assert outcome.ever_shared is True


def test_untouched_entity_all_false():
    s = _finished_session([finished(10)], "e", "f")
    outcomes = {o.entity_id: o for o in resolve_engagement(s)}
    assert outcomes["f"].shared is False
    assert outcomes["f"].ever_shared is False
    assert outcomes["f"].dwell_ms == 0
    assert outcomes["f"].position == 1


def test_share_unshare_share_ends_shared():
    s = _finished_session(
        [ev("share", 10), ev("unshare", 20), ev("share", 30), finished(40)], "e"
    )
    (outcome,) = resolve_engagement(s)
    assert outcome.shared is True and outcome.ever_shared is True


@given(st.lists(st.sampled_from(["share", "unshare"]), min_size=0, max_size=12))
@settings(max_examples=100, deadline=None)
def test_toggle_parity_last_event_wins(seq):
    events = [ev(kind, 10 * (i + 1)) for i, kind in enumerate(seq)]
    s = _finished_session(events + [finished(1000)], "e")
    (outcome,) = resolve_engagement(s)
    last = next((k for k in reversed(seq)), None)
    assert outcome.shared == (last == "share")
    assert outcome.ever_shared == ("share" in seq)


def test_likes_and_bookmarks_independent():
    s = _finished_session(
        [ev("like", 10), ev("bookmark", 20), ev("unbookmark", 30), finished(40)], "e"
    )
    (o,) = resolve_engagement(s)
    assert o.liked and o.ever_liked
    assert not o.bookmarked and o.ever_bookmarked
    assert not o.shared and not o.ever_shared


def test_dwell_uses_feed_finished_horizon():
    s = _finished_session([vis(0, True), finished(2500)], "e")
    (o,) = resolve_engagement(s)
    assert o.dwell_ms == 2500


def test_resolve_requires_post_feed_phase():
    s = _session("e")
    with pytest.raises(PhaseViolation):
        resolve_engagement(s)


# --- advance_session ---------------------------------------------------------


def test_phase_walk_forward():
    s = _session("e", phase=SessionPhase.CREATED)
    advance_session(s, Transition.OPEN_FEED)
    assert s.phase is SessionPhase.IN_FEED
    advance_session(s, Transition.FINISH_FEED)
    assert s.phase is SessionPhase.IN_SURVEY
    advance_session(s, Transition.SUBMIT_SURVEY)
    assert s.phase is SessionPhase.COMPLETE


def test_backward_transition_rejected():
    s = _session("e", phase=SessionPhase.IN_SURVEY)
    with pytest.raises(PhaseViolation):
        advance_session(s, Transition.OPEN_FEED)


def test_abandon_from_feed_but_not_from_complete():
    s = _session("e")
    advance_session(s, Transition.ABANDON)
    assert s.phase is SessionPhase.ABANDONED
    with pytest.raises(PhaseViolation):
        advance_session(s, Transition.ABANDON)


def test_no_ingest_after_abandon():
    s = _session("e")
    advance_session(s, Transition.ABANDON)
    with pytest.raises(PhaseViolation):
        ingest_events(s, [ev("share", 1)])

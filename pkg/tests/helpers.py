"""Independent oracles and stream generators shared by unit and acceptance tests.

The dwell oracle here deliberately avoids the interval arithmetic of
feedlab.telemetry: it materializes the timeline and classifies every single
millisecond, so agreement with the production sweep is meaningful.
"""

from __future__ import annotations

import numpy as np

from feedlab.model import DwellConfig
from feedlab.telemetry import ClientEvent, EventType


def dwell_oracle_ms(events, config: DwellConfig, horizon_ms: int | None = None) -> int:
    """Brute-force dwell: walk the timeline millisecond by millisecond.

    A millisecond counts when the latest visibility state at that instant is
    on (visible and fraction >= threshold) and either its span is closed by
    the feed_finished marker or the millisecond lies within idle_gap_ms of
    the span's starting event. Total is capped at per_entity_cap_ms.
    """
    rows = []
    for ev in events:
        if ev.type is EventType.VISIBILITY:
            on = bool(ev.visible) and float(ev.viewport_fraction or 0.0) >= config.visibility_threshold
            rows.append((ev.client_ts_ms, 0, on))
        elif ev.type is EventType.FEED_FINISHED:
            rows.append((ev.client_ts_ms, 1, False))
    if horizon_ms is not None:
        rows.append((horizon_ms, 1, False))
    if not rows:
        return 0
    rows.sort(key=lambda r: (r[0], r[1]))

    finish_ts = next((ts for ts, fin, _ in rows if fin), None)
    end = finish_ts if finish_ts is not None else rows[-1][0]
    start = rows[0][0]
    if end <= start:
        return 0

    ts = np.array([r[0] for r in rows], dtype=np.int64)
    is_fin = np.array([r[1] for r in rows], dtype=bool)
    on = np.array([r[2] for r in rows], dtype=bool)
    closed_by_finish = np.zeros(len(rows), dtype=bool)
    closed_by_finish[:-1] = is_fin[1:]

    ms = np.arange(start, end, dtype=np.int64)
    idx = np.searchsorted(ts, ms, side="right") - 1
    counted = on[idx] & (closed_by_finish[idx] | (ms - ts[idx] < config.idle_gap_ms))
    return int(min(int(counted.sum()), config.per_entity_cap_ms))


def random_visibility_stream(rng: np.random.Generator, max_events: int = 50):
    """A random per-entity visibility stream plus a random DwellConfig."""
    n = int(rng.integers(1, max_events + 1))
    ts = 0
    events = []
    for _ in range(n):
        ts += int(rng.integers(0, 400))
        events.append(
            ClientEvent(
                type=EventType.VISIBILITY,
                client_ts_ms=ts,
                entity_id="e",
                visible=bool(rng.integers(0, 2)),
                viewport_fraction=float(rng.uniform(0, 1)),
            )
        )
    horizon = None
    if rng.uniform() < 0.5:
        horizon = ts + int(rng.integers(0, 5000))
    config = DwellConfig(
        visibility_threshold=float(rng.uniform(0.05, 1.0)),
        per_entity_cap_ms=int(rng.integers(500, 50_000)),
        idle_gap_ms=int(rng.integers(100, 5_000)),
    )
    return events, config, horizon


def gini_oracle_pairwise(values) -> float:
    """Mean absolute difference formula: sum |xi - xj| / (2 n^2 mean)."""
    arr = np.asarray(list(values), dtype=np.float64)
    n = arr.size
    total = arr.sum()
    if total == 0:
        return 0.0
    diff_sum = np.abs(arr[:, None] - arr[None, :]).sum()
    return float(diff_sum / (2 * n * n * (total / n)))

"""Pure-Python dwell sweep, the reference for the compiled kernel.

Input arrays describe one entity's visibility timeline, already reduced by
the caller (feedlab.telemetry): ``ts`` event times in ms, ``on`` the
counting state holding after each event (visible AND fraction >= threshold),
``is_finish`` flags the feed_finished horizon marker.

Crediting rule: every inter-event span whose starting state is on is
credited; a span closed by feed_finished is credited in full, any other
span is clipped to idle_gap_ms (silence longer than the gap is treated as
idle time). A span left open by the end of the stream is credited nothing.
The total is clamped to per-entity cap.
"""

from __future__ import annotations

BACKEND = "python"


def dwell_sweep(ts, on, is_finish, idle_gap_ms: int, cap_ms: int) -> int:
    total = 0
    prev_ts = 0
    prev_on = False
    for i in range(len(ts)):
        t = int(ts[i])
        if prev_on:
            span = t - prev_ts
            if is_finish[i]:
                total += span
            else:
                total += span if span < idle_gap_ms else idle_gap_ms
        if is_finish[i]:
            prev_on = False
            break
        prev_on = bool(on[i])
        prev_ts = t
    if total < 0:
        return 0
    return total if total < cap_ms else cap_ms

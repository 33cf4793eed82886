// Session-relative monotonic clock. Dwell durations come from differences
// of these timestamps, so wall-clock adjustments must never leak in.

export type Clock = () => number;

export function makeSessionClock(): Clock {
  const origin = performance.now();
  return () => Math.round(performance.now() - origin);
}

/** Clock that also hands out strictly increasing values on demand, for
 * event streams where same-millisecond taps must stay ordered. */
export class MonotonicStamper {
  private last = -1;

  constructor(private readonly clock: Clock) {}

  next(): number {
    const now = Math.max(this.clock(), this.last + 1);
    this.last = now;
    return now;
  }

  /** Nondecreasing read (used by visibility, where same-ms is fine). */
  now(): number {
    const now = Math.max(this.clock(), this.last);
    this.last = now;
    return now;
  }
}

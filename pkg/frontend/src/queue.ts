// At-least-once, in-order delivery of client events.
//
// Events accumulate and flush every 2 s (or sooner on page-hide and feed
// completion), at most 100 per batch. A batch is only removed from the
// queue once the server acknowledges it, so a lost reply means the same
// batch is retransmitted — the server dedups exact duplicates. Failures
// back off exponentially; after maxRetries the failure callback fires
// (the UI shows a nonblocking toast) but events are kept for final flush.

import { ClientEvent } from "./types.js";

export type SendBatch = (events: ClientEvent[]) => Promise<void>;

export interface QueueOptions {
  flushIntervalMs?: number;
  maxBatch?: number;
  baseBackoffMs?: number;
  maxBackoffMs?: number;
  maxRetries?: number;
  onPersistentFailure?: (error: unknown) => void;
  setTimer?: typeof setTimeout;
  clearTimer?: typeof clearTimeout;
}

export class EventQueue {
  private pending: ClientEvent[] = [];
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private consecutiveFailures = 0;
  private stopped = false;

  readonly flushIntervalMs: number;
  readonly maxBatch: number;
  private readonly baseBackoffMs: number;
  private readonly maxBackoffMs: number;
  private readonly maxRetries: number;
  private readonly onPersistentFailure: (error: unknown) => void;
  private readonly setTimer: typeof setTimeout;
  private readonly clearTimer: typeof clearTimeout;

  constructor(private readonly send: SendBatch, options: QueueOptions = {}) {
    this.flushIntervalMs = options.flushIntervalMs ?? 2000;
    this.maxBatch = options.maxBatch ?? 100;
    this.baseBackoffMs = options.baseBackoffMs ?? 500;
    this.maxBackoffMs = options.maxBackoffMs ?? 8000;
    this.maxRetries = options.maxRetries ?? 5;
    this.onPersistentFailure = options.onPersistentFailure ?? (() => {});
    this.setTimer = options.setTimer ?? setTimeout;
    this.clearTimer = options.clearTimer ?? clearTimeout;
  }

  get size(): number {
    return this.pending.length;
  }

  push(event: ClientEvent): void {
    this.pending.push(event);
    this.schedule(this.flushIntervalMs);
  }

  private schedule(delayMs: number): void {
    if (this.stopped || this.timer !== null) return;
    this.timer = this.setTimer(() => {
      this.timer = null;
      void this.flush();
    }, delayMs);
  }

  /** Failure path: the backoff delay overrides any pending interval timer. */
  private reschedule(delayMs: number): void {
    if (this.timer !== null) {
      this.clearTimer(this.timer);
      this.timer = null;
    }
    this.schedule(delayMs);
  }

  /** Drain everything currently queued; resolves true when all delivered. */
  async flush(): Promise<boolean> {
    if (this.inFlight) return false;
    this.inFlight = true;
    try {
      while (this.pending.length > 0) {
        const batch = this.pending.slice(0, this.maxBatch);
        try {
          await this.send(batch);
        } catch (error) {
          this.consecutiveFailures += 1;
          if (this.consecutiveFailures >= this.maxRetries) {
            this.onPersistentFailure(error);
          }
          const backoff = Math.min(
            this.baseBackoffMs * 2 ** (this.consecutiveFailures - 1),
            this.maxBackoffMs,
          );
          this.reschedule(backoff);
          return false;
        }
        // acknowledged: only now does the batch leave the queue
        this.pending.splice(0, batch.length);
        this.consecutiveFailures = 0;
      }
      return true;
    } finally {
      this.inFlight = false;
    }
  }

  /** Final drain (page-hide / feed completion): keeps retrying until
   * delivered or attempts exhaust. */
  async flushHard(attempts = 3): Promise<boolean> {
    for (let i = 0; i < attempts; i++) {
      if (await this.flush()) return true;
    }
    return false;
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) {
      this.clearTimer(this.timer);
      this.timer = null;
    }
  }
}

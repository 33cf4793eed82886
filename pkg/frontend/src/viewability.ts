// Per-post viewability tracking with the server's threshold.
//
// Each post holds a latch: an event is emitted exactly when the visible
// fraction crosses the threshold (enter) or falls back below it (exit),
// never for unchanged state. Tab-hide emits an exit for every latched
// post so no interval is left dangling on the client side.

import { MonotonicStamper } from "./clock.js";
import { ClientEvent } from "./types.js";

export type VisibilityEmit = (event: ClientEvent) => void;

interface PostState {
  latched: boolean;
  everVisible: boolean;
  lastFraction: number;
}

export class ViewabilityTracker {
  private posts = new Map<string, PostState>();
  private observer: IntersectionObserver | null = null;
  private elements = new Map<Element, string>();

  constructor(
    private readonly threshold: number,
    private readonly emit: VisibilityEmit,
    private readonly stamper: MonotonicStamper,
  ) {}

  track(entityId: string): void {
    if (!this.posts.has(entityId)) {
      this.posts.set(entityId, { latched: false, everVisible: false, lastFraction: 0 });
    }
  }

  /** Wire a DOM element through IntersectionObserver (browser path). */
  observe(entityId: string, element: Element): void {
    this.track(entityId);
    if (this.observer === null && typeof IntersectionObserver !== "undefined") {
      // thresholds straddle the viewability cutoff so crossings always fire
      const t = this.threshold;
      this.observer = new IntersectionObserver(
        (entries) => {
          for (const entry of entries) {
            const id = this.elements.get(entry.target);
            if (id !== undefined) {
              this.report(id, entry.isIntersecting ? entry.intersectionRatio : 0);
            }
          }
        },
        { threshold: [0, Math.max(0, t - 0.01), t, Math.min(1, t + 0.01), 1] },
      );
    }
    this.elements.set(element, entityId);
    this.observer?.observe(element);
  }

  /** Core latch logic; also the test seam (observer callbacks call this). */
  report(entityId: string, fraction: number): void {
    const state = this.posts.get(entityId);
    if (!state) return;
    state.lastFraction = fraction;
    const viewable = fraction >= this.threshold;
    if (viewable && !state.latched) {
      state.latched = true;
      state.everVisible = true;
      this.emit({
        type: "visibility",
        entity_id: entityId,
        client_ts_ms: this.stamper.now(),
        visible: true,
        viewport_fraction: round2(fraction),
      });
    } else if (!viewable && state.latched) {
      state.latched = false;
      this.emit({
        type: "visibility",
        entity_id: entityId,
        client_ts_ms: this.stamper.now(),
        visible: false,
        viewport_fraction: round2(fraction),
      });
    }
  }

  /** Tab hidden or feed left: close every open interval. */
  hideAll(): void {
    for (const [entityId, state] of this.posts) {
      if (state.latched) {
        state.latched = false;
        this.emit({
          type: "visibility",
          entity_id: entityId,
          client_ts_ms: this.stamper.now(),
          visible: false,
          viewport_fraction: 0,
        });
      }
    }
  }

  everVisible(entityId: string): boolean {
    return this.posts.get(entityId)?.everVisible ?? false;
  }

  isLatched(entityId: string): boolean {
    return this.posts.get(entityId)?.latched ?? false;
  }

  disconnect(): void {
    this.observer?.disconnect();
    this.elements.clear();
  }
}

function round2(x: number): number {
  return Math.round(x * 100) / 100;
}

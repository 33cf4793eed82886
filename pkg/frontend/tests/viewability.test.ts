import { describe, expect, it } from "vitest";

import { MonotonicStamper } from "../src/clock.js";
import { ClientEvent } from "../src/types.js";
import { ViewabilityTracker } from "../src/viewability.js";

function tracked(threshold = 0.5) {
  const events: ClientEvent[] = [];
  let t = 0;
  const stamper = new MonotonicStamper(() => (t += 10));
  const tracker = new ViewabilityTracker(threshold, (e) => events.push(e), stamper);
  return { tracker, events };
}

describe("ViewabilityTracker", () => {
  it("emits exactly one enter per threshold crossing", () => {
    const { tracker, events } = tracked();
    tracker.track("a");
    tracker.report("a", 0.8);
    tracker.report("a", 0.9); // still above: no duplicate
    tracker.report("a", 1.0);
    expect(events).toHaveLength(1);
    expect(events[0]).toMatchObject({ type: "visibility", entity_id: "a", visible: true });
  });

  it("emits exit when falling below the threshold", () => {
    const { tracker, events } = tracked();
    tracker.track("a");
    tracker.report("a", 0.7);
    tracker.report("a", 0.3);
    tracker.report("a", 0.1); // already below: no duplicate
    expect(events.map((e) => e.visible)).toEqual([true, false]);
  });

  it("threshold is inclusive on entry", () => {
    const { tracker, events } = tracked(0.5);
    tracker.track("a");
    tracker.report("a", 0.5);
    expect(events).toHaveLength(1);
    expect(events[0].visible).toBe(true);
  });

  it("never emits for posts that stay below threshold", () => {
    const { tracker, events } = tracked();
    tracker.track("a");
    tracker.report("a", 0.2);
    tracker.report("a", 0.4);
    tracker.report("a", 0.0);
    expect(events).toHaveLength(0);
  });

  it("enter/exit strictly alternate and timestamps never decrease", () => {
    const { tracker, events } = tracked();
    tracker.track("a");
    let state = 0x9e3779b9;
    const next = () => {
      // deterministic xorshift so the fuzz is reproducible
      state ^= state << 13;
      state ^= state >>> 17;
      state ^= state << 5;
      return ((state >>> 0) % 101) / 100;
    };
    for (let i = 0; i < 500; i++) tracker.report("a", next());
    expect(events.length).toBeGreaterThan(10);
    for (let i = 0; i < events.length; i++) {
      const expected = i % 2 === 0; // first must be an enter
      expect(events[i].visible).toBe(expected);
      if (i > 0) {
        expect(events[i].client_ts_ms).toBeGreaterThanOrEqual(events[i - 1].client_ts_ms);
      }
    }
  });

  it("tab-hide emits exit for every latched post only", () => {
    const { tracker, events } = tracked();
    for (const id of ["a", "b", "c"]) tracker.track(id);
    tracker.report("a", 1.0);
    tracker.report("b", 0.2); // never latched
    tracker.report("c", 0.9);
    events.length = 0;
    tracker.hideAll();
    expect(events.map((e) => [e.entity_id, e.visible])).toEqual([
      ["a", false],
      ["c", false],
    ]);
    tracker.hideAll(); // idempotent
    expect(events).toHaveLength(2);
  });

  it("tracks ever-visible for the continue gate", () => {
    const { tracker } = tracked();
    tracker.track("a");
    expect(tracker.everVisible("a")).toBe(false);
    tracker.report("a", 0.9);
    tracker.report("a", 0.0);
    expect(tracker.everVisible("a")).toBe(true);
  });
});

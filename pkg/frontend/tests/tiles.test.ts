import { describe, expect, it } from "vitest";

import type { StreamMessage } from "../src/api.js";
import { renderTiles, StreamReducer } from "../src/tiles.js";

const message = (seq: number, type: string, data: Record<string, unknown> = {}): StreamMessage => ({
  seq,
  type,
  data,
});

describe("StreamReducer", () => {
  it("applies messages in sequence order", () => {
    const reducer = new StreamReducer(() => 0);
    expect(reducer.feed(message(1, "event_ingested", { event_id: "a" }))).toHaveLength(1);
    expect(reducer.feed(message(2, "event_ingested", { event_id: "b" }))).toHaveLength(1);
    expect(reducer.state.eventsIngested).toBe(2);
    expect(reducer.state.lastEventId).toBe("b");
  });

  it("buffers out-of-order messages until the gap fills", () => {
    const reducer = new StreamReducer(() => 0);
    expect(reducer.feed(message(3, "event_ingested", { event_id: "later" }))).toHaveLength(0);
    expect(reducer.bufferedCount()).toBe(1);
    expect(reducer.feed(message(2, "event_ingested", { event_id: "mid" }))).toHaveLength(0);
    const applied = reducer.feed(message(1, "event_ingested", { event_id: "first" }));
    expect(applied.map((m) => m.seq)).toEqual([1, 2, 3]);
    expect(reducer.state.lastEventId).toBe("later");
    expect(reducer.bufferedCount()).toBe(0);
  });

  it("drops at-least-once duplicates", () => {
    const reducer = new StreamReducer(() => 0);
    reducer.feed(message(1, "event_ingested", { event_id: "a" }));
    expect(reducer.feed(message(1, "event_ingested", { event_id: "a" }))).toHaveLength(0);
    expect(reducer.state.eventsIngested).toBe(1);
  });

  it("tracks the latest metric table per workflow", () => {
    const reducer = new StreamReducer(() => 42);
    reducer.feed(
      message(1, "metrics_updated", {
        workflow: "goalpct",
        outputs: {
          "reid.table": [{ player: "P7", goals: 3, behinds: 1, goal_pct: 75.0 }],
        },
      }),
    );
    expect(reducer.state.metricTables.goalpct).toEqual([
      { player: "P7", goals: 3, behinds: 1, goal_pct: 75.0 },
    ]);
    expect(reducer.state.metricUpdatedAt.goalpct).toBe(42);
  });

  it("ignores hello and unknown message types", () => {
    const reducer = new StreamReducer(() => 0);
    expect(reducer.feed(message(0, "hello"))).toHaveLength(0);
    expect(reducer.feed(message(1, "mystery", {}))).toHaveLength(1); // applied, no-op
    expect(reducer.state.lastSeq).toBe(1);
  });
});

describe("renderTiles", () => {
  it("renders one tile per player with the formatted percentage", () => {
    const html = renderTiles(
      [
        { player: "P7", goals: 3, behinds: 1, goal_pct: 75.0 },
        { player: "P12", goals: 0, behinds: 2, goal_pct: 0.0 },
      ],
      false,
    );
    expect(html).toContain("P7");
    expect(html).toContain("75.0%");
    expect(html).toContain("0.0%");
    expect(html).toContain("3 goals / 1 behinds");
  });

  it("renders the undefined ratio as a dash and escapes names", () => {
    const html = renderTiles([{ player: "<b>", goals: 0, behinds: 0, goal_pct: null }], true);
    expect(html).toContain("–");
    expect(html).toContain("&lt;b&gt;");
    expect(html).toContain("tile-dirty");
  });

  it("shows a placeholder when empty", () => {
    expect(renderTiles(null, false)).toContain("no metrics yet");
    expect(renderTiles([], false)).toContain("no metrics yet");
  });
});

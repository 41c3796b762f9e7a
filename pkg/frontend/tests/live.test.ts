/**
 * Live-loop test against a real service: spawn the backend, enter the
 * five-event goal fixture through the hotkey layer, and require the Goal%
 * tile to reflect each event within two seconds.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { bindingForKey, buildEvent } from "../src/hotkeys.js";
import { StreamReducer } from "../src/tiles.js";

const MAPPING = { P3: "Ax03", P7: "Ax07", P12: "Ax12" };

const WORKFLOW = {
  workflow_id: "goalpct",
  steps: [
    { step_id: "load", builtin: "load_events" },
    {
      step_id: "deid",
      builtin: "join_mapping",
      params: { direction: "deidentify", fields: ["player", "target_player"] },
    },
    { step_id: "pct", builtin: "compute_goal_pct" },
    {
      step_id: "reid",
      builtin: "join_mapping",
      params: { direction: "reidentify", fields: ["player"] },
    },
  ],
  edges: [
    { from: ["load", "table"], to: ["deid", "table"] },
    { from: ["deid", "table"], to: ["pct", "table"] },
    { from: ["pct", "table"], to: ["reid", "table"] },
  ],
};

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const port = (probe.address() as { port: number }).port;
      probe.close(() => resolve(port));
    });
  });
}

async function waitForService(api: ApiClient, deadlineMs: number): Promise<void> {
  const start = Date.now();
  for (;;) {
    try {
      await api.chains("warmup");
      return;
    } catch (error) {
      // connection refused until the server binds; API errors mean it's up
      if (error instanceof Error && error.name !== "TypeError") return;
      if (Date.now() - start > deadlineMs) throw new Error("service did not come up");
      await new Promise((resolve) => setTimeout(resolve, 100));
    }
  }
}

describe("live loop against a running service", () => {
  let child: ChildProcess;
  let api: ApiClient;
  const reducer = new StreamReducer();
  const abort = new AbortController();

  beforeAll(async () => {
    const port = await freePort();
    const store = mkdtempSync(join(tmpdir(), "sportprov-live-"));
    child = spawn(
      "python3",
      ["-m", "sportprov.cli", "--store", store, "serve", "--port", String(port)],
      { stdio: "ignore" },
    );
    api = new ApiClient(`http://127.0.0.1:${port}`);
    await waitForService(api, 15000);
    void api.stream((message) => reducer.feed(message), abort.signal).catch(() => {});
    await api.defineWorkflow(WORKFLOW);
    await api.runWorkflow("goalpct", {
      "load.source": { $game: "live" },
      "deid.mapping": MAPPING,
      "reid.mapping": MAPPING,
    });
  }, 30000);

  afterAll(() => {
    abort.abort();
    child?.kill();
  });

  it("each hotkey entry updates the Goal% tile within 2 seconds", async () => {
    // B, T(P3), K(P12), K(P7), G(P7) — the motivating goal chain
    const strokes: Array<{ key: string; player: string | null }> = [
      { key: "b", player: null },
      { key: "t", player: "P3" },
      { key: "k", player: "P12" },
      { key: "k", player: "P7" },
      { key: "g", player: "P7" },
    ];
    let counter = 0;
    let clockMs = 0;
    for (const stroke of strokes) {
      counter += 1;
      clockMs += 2000;
      const payload = buildEvent(
        bindingForKey(stroke.key)!,
        { player: stroke.player, bodyPart: "knee", videoRef: "live.mp4", counter },
        clockMs,
      );
      const before = reducer.state.metricUpdatedAt["goalpct"] ?? 0;
      const started = Date.now();
      const summary = await api.postEvent("live", payload);
      expect(summary.skipped).toBe(false);
      // wait for the stream to deliver the metric refresh for this event
      while ((reducer.state.metricUpdatedAt["goalpct"] ?? 0) <= before) {
        if (Date.now() - started > 2000) {
          throw new Error(`metric tile not updated within 2s after ${stroke.key}`);
        }
        await new Promise((resolve) => setTimeout(resolve, 25));
      }
      expect(Date.now() - started).toBeLessThan(2000);
    }
    const table = reducer.state.metricTables["goalpct"];
    expect(table).toBeDefined();
    const row = table!.find((r) => r.player === "P7");
    expect(row).toMatchObject({ goals: 1, behinds: 0, goal_pct: 100.0 });

    // the timeline endpoint shows one closed chain ending in the goal
    const chains = await api.chains("live");
    expect(chains.finalized).toHaveLength(1);
    expect(chains.finalized[0].terminal).toBe("Goal");
    expect(chains.finalized[0].events).toHaveLength(5);
  }, 30000);

  it("server rejections surface as structured errors (stale clock)", async () => {
    const payload = buildEvent(
      bindingForKey("k")!,
      { player: "P3", bodyPart: "", videoRef: "live.mp4", counter: 99 },
      1, // far behind the last ingested timestamp
    );
    await expect(api.postEvent("live", payload)).rejects.toMatchObject({
      status: 409,
      code: "OutOfOrderEvent",
    });
  });
});

/**
 * Live dashboard state driven by the push stream.
 *
 * The stream is at-least-once with a monotone sequence number: messages at or
 * below the last applied seq are dropped as duplicates, gaps are buffered and
 * replayed once the missing messages arrive, so application order always
 * matches sequence order.
 */

import type { MetricRow, StreamMessage } from "./api.js";

export interface DashboardState {
  lastSeq: number;
  eventsIngested: number;
  lastEventId: string | null;
  metricTables: Record<string, MetricRow[]>;
  metricUpdatedAt: Record<string, number>;
  runStates: Record<string, string>;
}

export function initialDashboard(): DashboardState {
  return {
    lastSeq: 0,
    eventsIngested: 0,
    lastEventId: null,
    metricTables: {},
    metricUpdatedAt: {},
    runStates: {},
  };
}

export class StreamReducer {
  readonly state: DashboardState = initialDashboard();
  private pending = new Map<number, StreamMessage>();

  constructor(private now: () => number = () => Date.now()) {}

  /**
   * Feed one raw stream message. Returns the messages applied (in order) as
   * a result — usually just this one, more when it unblocks buffered ones,
   * none when it was a duplicate or arrived ahead of a gap.
   */
  feed(message: StreamMessage): StreamMessage[] {
    if (message.type === "hello") return [];
    if (message.seq <= this.state.lastSeq) return []; // duplicate delivery
    this.pending.set(message.seq, message);
    const applied: StreamMessage[] = [];
    for (;;) {
      const next = this.pending.get(this.state.lastSeq + 1);
      if (next === undefined) break;
      this.pending.delete(next.seq);
      this.apply(next);
      applied.push(next);
    }
    return applied;
  }

  /** Number of messages waiting on a sequence gap. */
  bufferedCount(): number {
    return this.pending.size;
  }

  private apply(message: StreamMessage): void {
    this.state.lastSeq = message.seq;
    const data = message.data as Record<string, unknown>;
    switch (message.type) {
      case "event_ingested": {
        if (data.skipped !== true) {
          this.state.eventsIngested += 1;
          this.state.lastEventId = (data.event_id as string) ?? null;
        }
        break;
      }
      case "metrics_updated": {
        const workflow = data.workflow as string;
        const outputs = (data.outputs ?? {}) as Record<string, unknown>;
        const table = firstTable(outputs);
        if (table !== null) {
          this.state.metricTables[workflow] = table;
        }
        this.state.metricUpdatedAt[workflow] = this.now();
        break;
      }
      case "run_state": {
        this.state.runStates[data.run_id as string] = data.status as string;
        break;
      }
      default:
        break; // forward-compatible: unknown message types are ignored
    }
  }
}

function firstTable(outputs: Record<string, unknown>): MetricRow[] | null {
  for (const key of Object.keys(outputs).sort()) {
    const value = outputs[key];
    if (Array.isArray(value) && value.every((row) => typeof row === "object" && row !== null)) {
      return value as MetricRow[];
    }
  }
  return null;
}

export function formatPct(value: number | null): string {
  return value === null ? "–" : `${value.toFixed(1)}%`;
}

/** Render the per-player metric tiles as an HTML string. */
export function renderTiles(table: MetricRow[] | null, dirty: boolean): string {
  if (!table || table.length === 0) {
    return `<div class="tile tile-empty">no metrics yet</div>`;
  }
  const tiles = table
    .map(
      (row) => `
      <div class="tile${dirty ? " tile-dirty" : ""}">
        <div class="tile-player">${escapeHtml(row.player)}</div>
        <div class="tile-value">${formatPct(row.goal_pct)}</div>
        <div class="tile-detail">${row.goals} goals / ${row.behinds} behinds</div>
      </div>`,
    )
    .join("");
  return tiles;
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

/** Possession-chain timeline: one row per chain, events as dots in time order. */

import type { ChainsResponse } from "./api.js";
import { escapeHtml } from "./tiles.js";

export interface TimelineRow {
  chainId: string;
  events: string[];
  terminal: string | null; // null = still open
}

export function timelineRows(chains: ChainsResponse): TimelineRow[] {
  const rows: TimelineRow[] = chains.finalized.map((chain) => ({
    chainId: chain.chain_id,
    events: chain.events,
    terminal: chain.terminal,
  }));
  if (chains.open) {
    rows.push({ chainId: chains.open.chain_id, events: chains.open.events, terminal: null });
  }
  return rows;
}

const TERMINAL_BADGES: Record<string, string> = {
  Goal: "🟢 goal",
  Behind: "🟡 behind",
  Turnover: "🔁 turnover",
  Reset: "⚪ reset",
};

export function renderTimeline(rows: TimelineRow[]): string {
  if (rows.length === 0) {
    return `<div class="chain chain-empty">no possession chains yet — press B for the centre bounce</div>`;
  }
  return rows
    .map((row) => {
      const badge = row.terminal === null ? "▶ open" : TERMINAL_BADGES[row.terminal] ?? row.terminal;
      const dots = row.events
        .map((eventId) => `<span class="chain-event" title="${escapeHtml(eventId)}">●</span>`)
        .join("");
      return `
      <div class="chain${row.terminal === null ? " chain-open" : ""}">
        <span class="chain-badge">${badge}</span>
        <span class="chain-dots">${dots}</span>
        <span class="chain-count">${row.events.length} events</span>
      </div>`;
    })
    .join("");
}

/**
 * Page wiring: hotkey entry posts events, the stream drives the tiles and
 * timeline, and the provenance viewer re-queries as filters change. All
 * domain logic lives on the server; this file only moves JSON around.
 */

import { ApiClient, ApiError, type GameEventPayload, type TraceFilter } from "./api.js";
import { GameClock } from "./clock.js";
import { layoutGraph, renderSvg } from "./graphview.js";
import { KEY_BINDINGS, bindingForKey, buildEvent, MissingPlayer } from "./hotkeys.js";
import { legendEntries } from "./notation.js";
import { renderTimeline, timelineRows } from "./timeline.js";
import { escapeHtml, renderTiles, StreamReducer } from "./tiles.js";

const $ = <T extends HTMLElement>(selector: string): T => {
  const element = document.querySelector(selector);
  if (!element) throw new Error(`missing element ${selector}`);
  return element as T;
};

const api = new ApiClient("");
const clock = new GameClock();
const reducer = new StreamReducer();

const state = {
  game: "live",
  workflow: "goalpct",
  roster: ["P3", "P7", "P12"],
  player: null as string | null,
  bodyPart: "knee",
  counter: 0,
  pending: new Map<string, GameEventPayload>(), // optimistic, awaiting stream echo
  traceTarget: null as string | null,
};

// ---- toasts -----------------------------------------------------------

function toast(text: string, kind: "info" | "error", retry?: () => void): void {
  const container = $("#toasts");
  const element = document.createElement("div");
  element.className = `toast toast-${kind}`;
  element.textContent = text;
  if (retry) {
    const button = document.createElement("button");
    button.textContent = "retry";
    button.addEventListener("click", () => {
      element.remove();
      retry();
    });
    element.appendChild(button);
  }
  container.appendChild(element);
  setTimeout(() => element.remove(), kind === "error" ? 8000 : 3500);
}

// ---- event entry -------------------------------------------------------

function renderEntryPanel(): void {
  $("#hotkey-buttons").innerHTML = KEY_BINDINGS.map(
    (binding) =>
      `<button class="hotkey" data-key="${binding.key}">
         <kbd>${binding.key.toUpperCase()}</kbd> ${binding.label}
       </button>`,
  ).join("");
  $("#player-picker").innerHTML = state.roster
    .map(
      (player) =>
        `<button class="player${state.player === player ? " selected" : ""}" data-player="${escapeHtml(player)}">${escapeHtml(player)}</button>`,
    )
    .join("");
}

async function submitKey(key: string): Promise<void> {
  const binding = bindingForKey(key);
  if (!binding) return;
  if (!clock.running) {
    toast("clock is stopped — press Start first", "error");
    return;
  }
  let payload: GameEventPayload;
  try {
    state.counter += 1;
    payload = buildEvent(
      binding,
      {
        player: state.player,
        bodyPart: state.bodyPart,
        videoRef: `${state.game}.mp4`,
        counter: state.counter,
      },
      clock.nowMs(),
    );
  } catch (error) {
    if (error instanceof MissingPlayer) {
      toast(error.message, "error");
      return;
    }
    throw error;
  }
  await postEvent(payload, binding.label);
}

async function postEvent(payload: GameEventPayload, label: string): Promise<void> {
  state.pending.set(payload.event_id, payload); // optimistic
  renderPending();
  try {
    await api.postEvent(state.game, payload);
  } catch (error) {
    state.pending.delete(payload.event_id);
    renderPending();
    if (error instanceof ApiError) {
      // stale clock / invalid entry: the event was not added
      toast(`${label} rejected (${error.code}): ${error.message}`, "error", () => {
        void postEvent({ ...payload, ts_ms: clock.nowMs() }, label);
      });
      return;
    }
    throw error;
  }
}

function renderPending(): void {
  $("#pending").textContent = state.pending.size
    ? `${state.pending.size} event(s) awaiting confirmation`
    : "";
}

// ---- stream ------------------------------------------------------------

async function connectStream(): Promise<void> {
  const status = $("#stream-status");
  for (;;) {
    try {
      status.textContent = "● live";
      status.className = "status-ok";
      await api.stream((message) => {
        for (const applied of reducer.feed(message)) {
          if (applied.type === "event_ingested") {
            const eventId = applied.data["event_id"] as string;
            state.pending.delete(eventId); // reconciled by the stream echo
            renderPending();
            void refreshTimeline();
          }
          if (applied.type === "metrics_updated") {
            renderMetrics();
          }
        }
      });
    } catch {
      // fall through to reconnect
    }
    status.textContent = "○ reconnecting";
    status.className = "status-bad";
    await new Promise((resolve) => setTimeout(resolve, 1500));
  }
}

function renderMetrics(): void {
  const table = reducer.state.metricTables[state.workflow] ?? null;
  $("#tiles").innerHTML = renderTiles(table, false);
}

async function refreshTimeline(): Promise<void> {
  try {
    const chains = await api.chains(state.game);
    $("#timeline").innerHTML = renderTimeline(timelineRows(chains));
  } catch {
    // the game may not exist yet; leave the placeholder
  }
}

// ---- provenance viewer ---------------------------------------------------

function currentFilter(): TraceFilter {
  const depthRaw = $<HTMLSelectElement>("#filter-depth").value;
  const kinds = [...document.querySelectorAll<HTMLInputElement>(".filter-kind:checked")].map(
    (box) => box.value,
  );
  return {
    node_kinds: kinds.length ? kinds : null,
    max_activity_depth: depthRaw === "" ? null : Number(depthRaw),
    stop_at_reset: $<HTMLInputElement>("#filter-reset").checked,
  };
}

async function runTrace(): Promise<void> {
  const target = $<HTMLInputElement>("#trace-target").value.trim();
  if (!target) {
    toast("enter a node id to trace (e.g. live:state:ui-5-…)", "error");
    return;
  }
  state.traceTarget = target;
  try {
    const answer = await api.trace(target, currentFilter());
    if (answer.graph.nodes.length <= 1 && answer.graph.edges.length === 0) {
      $("#graph").innerHTML = `<div class="placeholder">no contributing events</div>`;
      return;
    }
    const model = layoutGraph(answer.graph);
    $("#graph").innerHTML = renderSvg(model);
    for (const group of document.querySelectorAll<SVGGElement>("#graph g.node")) {
      group.addEventListener("click", () => {
        const videoRef = group.dataset.videoRef;
        if (videoRef) {
          $("#clip").textContent =
            `clip: ${videoRef} [${group.dataset.clipStart || "?"} – ${group.dataset.clipEnd || "?"} ms]`;
        } else {
          $("#clip").textContent = `node: ${group.dataset.nodeId}`;
        }
      });
    }
  } catch (error) {
    if (error instanceof ApiError) {
      toast(`trace failed (${error.code}): ${error.message}`, "error");
      return;
    }
    throw error;
  }
}

function renderLegend(): void {
  $("#legend").innerHTML = legendEntries()
    .map((entry) => {
      const sample = entry.style
        ? `<span class="legend-symbol" style="color:${entry.style.colour}">${entry.style.icon}</span>`
        : `<span class="legend-line" style="border-top: 3px ${entry.edge?.dash ? "dashed" : "solid"} ${entry.edge?.colour}"></span>`;
      return `<div class="legend-entry">${sample}<b>${entry.construct}</b> <span>${entry.description}</span></div>`;
    })
    .join("");
}

// ---- bootstrap -----------------------------------------------------------

function bindUi(): void {
  renderEntryPanel();
  renderLegend();
  window.addEventListener("keydown", (event) => {
    const target = event.target as HTMLElement;
    if (target.tagName === "INPUT" || target.tagName === "SELECT" || target.isContentEditable) {
      return;
    }
    if (event.ctrlKey || event.metaKey || event.altKey) return;
    if (bindingForKey(event.key)) {
      event.preventDefault();
      void submitKey(event.key);
    }
  });
  $("#hotkey-buttons").addEventListener("click", (event) => {
    const button = (event.target as HTMLElement).closest<HTMLElement>("button.hotkey");
    if (button?.dataset.key) void submitKey(button.dataset.key);
  });
  $("#player-picker").addEventListener("click", (event) => {
    const button = (event.target as HTMLElement).closest<HTMLElement>("button.player");
    if (!button?.dataset.player) return;
    state.player = button.dataset.player;
    renderEntryPanel();
  });
  $("#clock-start").addEventListener("click", () => clock.start());
  $("#clock-pause").addEventListener("click", () => clock.pause());
  setInterval(() => {
    $("#clock-display").textContent = clock.format();
  }, 250);
  $("#run-trace").addEventListener("click", () => void runTrace());
  $("#filter-depth").addEventListener("change", () => {
    if (state.traceTarget) void runTrace();
  });
  $("#filter-reset").addEventListener("change", () => {
    if (state.traceTarget) void runTrace();
  });
  document.querySelectorAll(".filter-kind").forEach((box) =>
    box.addEventListener("change", () => {
      if (state.traceTarget) void runTrace();
    }),
  );
  void refreshTimeline();
  void connectStream();
}

document.addEventListener("DOMContentLoaded", bindUi);

/**
 * One keystroke per event kind, plus a player picker for the kinds that need
 * one. Building a payload is pure so the bindings can be tested without a
 * DOM; the app layer owns the clock and the POST.
 */

import type { GameEventPayload } from "./api.js";

export interface KeyBinding {
  key: string;
  kind: string;
  label: string;
  needsPlayer: boolean;
}

export const KEY_BINDINGS: KeyBinding[] = [
  { key: "b", kind: "CentreBounce", label: "Bounce", needsPlayer: false },
  { key: "t", kind: "Tap", label: "Tap", needsPlayer: true },
  { key: "k", kind: "Kick", label: "Kick", needsPlayer: true },
  { key: "m", kind: "Mark", label: "Mark", needsPlayer: true },
  { key: "g", kind: "Goal", label: "Goal", needsPlayer: true },
  { key: "h", kind: "Behind", label: "Behind", needsPlayer: true },
  { key: "i", kind: "Injury", label: "Injury", needsPlayer: true },
  { key: "w", kind: "WindGust", label: "Wind", needsPlayer: false },
];

const BY_KEY = new Map(KEY_BINDINGS.map((b) => [b.key, b]));

export function bindingForKey(key: string): KeyBinding | undefined {
  return BY_KEY.get(key.toLowerCase());
}

export interface EntryContext {
  player: string | null;
  bodyPart: string; // used for injuries
  videoRef: string;
  counter: number; // per-session id counter
}

export class MissingPlayer extends Error {
  constructor(kind: string) {
    super(`${kind} needs a selected player`);
  }
}

/** Build the event payload a keystroke should post, or throw MissingPlayer. */
export function buildEvent(
  binding: KeyBinding,
  context: EntryContext,
  tsMs: number,
): GameEventPayload {
  if (binding.needsPlayer && !context.player) {
    throw new MissingPlayer(binding.kind);
  }
  const attrs: Record<string, unknown> = {};
  if (binding.kind === "Injury") {
    attrs.body_part = context.bodyPart || "unspecified";
  }
  return {
    event_id: `ui-${context.counter}-${tsMs}`,
    ts_ms: Math.max(0, Math.round(tsMs)),
    kind: binding.kind,
    player: binding.needsPlayer ? context.player : null,
    target_player: null,
    video_ref: context.videoRef,
    attrs,
  };
}

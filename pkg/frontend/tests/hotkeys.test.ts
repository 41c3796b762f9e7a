import { describe, expect, it } from "vitest";

import { bindingForKey, buildEvent, KEY_BINDINGS, MissingPlayer } from "../src/hotkeys.js";

const context = { player: "P7", bodyPart: "knee", videoRef: "live.mp4", counter: 3 };

describe("key bindings", () => {
  it("covers every event kind with a unique key", () => {
    const kinds = KEY_BINDINGS.map((b) => b.kind);
    expect(kinds.sort()).toEqual(
      ["Behind", "CentreBounce", "Goal", "Injury", "Kick", "Mark", "Tap", "WindGust"].sort(),
    );
    const keys = KEY_BINDINGS.map((b) => b.key);
    expect(new Set(keys).size).toBe(keys.length);
  });

  it("maps the documented hotkeys", () => {
    expect(bindingForKey("b")?.kind).toBe("CentreBounce");
    expect(bindingForKey("T")?.kind).toBe("Tap"); // case-insensitive
    expect(bindingForKey("k")?.kind).toBe("Kick");
    expect(bindingForKey("g")?.kind).toBe("Goal");
    expect(bindingForKey("h")?.kind).toBe("Behind");
    expect(bindingForKey("i")?.kind).toBe("Injury");
    expect(bindingForKey("w")?.kind).toBe("WindGust");
    expect(bindingForKey("x")).toBeUndefined();
  });
});

describe("buildEvent", () => {
  it("builds a goal with the current clock time and selected player", () => {
    const payload = buildEvent(bindingForKey("g")!, context, 20000);
    expect(payload).toMatchObject({
      kind: "Goal",
      player: "P7",
      ts_ms: 20000,
      video_ref: "live.mp4",
    });
    expect(payload.event_id).toContain("ui-3-");
  });

  it("bounces and wind gusts carry no player", () => {
    expect(buildEvent(bindingForKey("b")!, context, 0).player).toBeNull();
    expect(buildEvent(bindingForKey("w")!, context, 5).player).toBeNull();
  });

  it("injuries require a body part attribute", () => {
    const payload = buildEvent(bindingForKey("i")!, context, 7000);
    expect(payload.attrs).toEqual({ body_part: "knee" });
  });

  it("refuses player-required kinds without a selection", () => {
    expect(() => buildEvent(bindingForKey("k")!, { ...context, player: null }, 1)).toThrow(
      MissingPlayer,
    );
  });

  it("clamps negative clock readings to zero", () => {
    expect(buildEvent(bindingForKey("b")!, context, -5).ts_ms).toBe(0);
  });
});

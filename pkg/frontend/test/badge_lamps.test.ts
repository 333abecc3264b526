import { describe, expect, it } from "vitest";

import { TI_CONTROLLED_THRESHOLD, tiBadgeColor, tiBadgeLabel, tiBadgeState } from "../src/badge";
import { applyEvent, applyFrame, initialSafetyState } from "../src/lamps";
import type { FramePayload } from "../src/protocol";

function frameWith(flags: string[], engaged = true): FramePayload {
  return {
    t_s: 0,
    features: null,
    ti: 0.4,
    assist: { need: 0.5, torque: 1, level: 1, engaged },
    safety_flags: flags,
    snippets: {},
    psd: null,
    kinematics: null,
    session_state: "running",
  };
}

describe("tremor-index badge", () => {
  it("shows controlled at or below the prespecified threshold", () => {
    expect(TI_CONTROLLED_THRESHOLD).toBe(0.3);
    expect(tiBadgeState(0.28)).toBe("controlled");
    expect(tiBadgeState(0.3)).toBe("controlled");
    expect(tiBadgeColor("controlled")).toBe("#2e9e6b"); // green
  });

  it("shows elevated above the threshold", () => {
    expect(tiBadgeState(0.31)).toBe("elevated");
    expect(tiBadgeState(0.447)).toBe("elevated");
  });

  it("handles missing values", () => {
    expect(tiBadgeState(null)).toBe("no-data");
    expect(tiBadgeLabel(null)).toBe("TI --");
    expect(tiBadgeLabel(0.283)).toBe("TI 0.283");
  });
});

describe("safety lamps", () => {
  it("tracks per-frame clamp flags", () => {
    const s = initialSafetyState();
    applyFrame(s, frameWith(["torque", "jerk"]));
    expect(s.lamps.torque).toBe(true);
    expect(s.lamps.jerk).toBe(true);
    expect(s.lamps.angle).toBe(false);
    applyFrame(s, frameWith([]));
    expect(s.lamps.torque).toBe(false);
  });

  it("stall disengage turns the lamp red and logs an alarm entry", () => {
    const s = initialSafetyState();
    applyEvent(s, { t_s: 12.3, event: "disengage", flags: ["stall_timeout"] });
    expect(s.engaged).toBe(false);
    expect(s.lamps.stall_timeout).toBe(true);
    expect(s.log.length).toBe(1);
    expect(s.log[0].severity).toBe("alarm");
    expect(s.log[0].text).toContain("disengaged");
  });

  it("reset clears the disengage and logs it", () => {
    const s = initialSafetyState();
    applyEvent(s, { t_s: 1, event: "disengage" });
    applyEvent(s, { t_s: 2, event: "reset" });
    expect(s.engaged).toBe(true);
    expect(s.lamps.stall_timeout).toBe(false);
    expect(s.log.map((e) => e.severity)).toEqual(["alarm", "info"]);
  });
});

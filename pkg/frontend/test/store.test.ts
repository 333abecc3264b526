import { describe, expect, it } from "vitest";

import type { FramePayload, Message } from "../src/protocol";
import { applyMessage, displayTrend, initialState } from "../src/store";

function frameMsg(seq: number, overrides: Partial<FramePayload> = {}): Message {
  return {
    type: "frame",
    seq,
    payload: {
      t_s: seq / 25,
      features: null,
      ti: null,
      assist: { need: 0.4, torque: 0.8, level: 1, engaged: true },
      safety_flags: [],
      snippets: {},
      psd: null,
      kinematics: null,
      session_state: "running",
      ...overrides,
    },
  };
}

describe("store", () => {
  it("updates the badge synchronously with the frame that carried the value", () => {
    const s = initialState();
    applyMessage(s, frameMsg(0, { ti: 0.41 }));
    expect(s.badge).toBe("elevated");
    expect(s.tiUpdatedAtSeq).toBe(0);
    // the badge flips in the same apply call, not on some later tick:
    // within one frame of the window emission
    applyMessage(s, frameMsg(1, { ti: 0.28 }));
    expect(s.badge).toBe("controlled");
    expect(s.tiUpdatedAtSeq).toBe(1);
  });

  it("collects the median-frequency series once per window", () => {
    const s = initialState();
    const feats = { rms: 0.5, mav: 0.4, zc_count: 60, median_freq_hz: 91.0, window_start_s: 0.25 };
    applyMessage(s, frameMsg(0, { features: feats }));
    applyMessage(s, frameMsg(1, { features: feats })); // same window held
    applyMessage(s, frameMsg(2, { features: { ...feats, window_start_s: 0.375, median_freq_hz: 90.5 } }));
    expect(s.fmedSeries.map((p) => p.t_s)).toEqual([0.25, 0.375]);
  });

  it("kinematic counters mirror the service payload", () => {
    const s = initialState();
    const kin = { rom_deg: 71.2, reps: 9, reps_per_min: 10.1, pacing: 0.99, target_reps_per_min: 10.2 };
    applyMessage(s, frameMsg(0, { kinematics: kin }));
    expect(s.kinematics).toEqual(kin);
  });

  it("safety events flip controls.engaged immediately", () => {
    const s = initialState();
    applyMessage(s, { type: "safety_event", seq: 5, payload: { t_s: 1.2, event: "disengage" } });
    expect(s.safety.engaged).toBe(false);
    expect(s.controls.engaged).toBe(false);
  });

  it("session_state resets per-session panels on idle", () => {
    const s = initialState();
    applyMessage(s, frameMsg(0, { ti: 0.4, features: { rms: 1, mav: 1, zc_count: 1, median_freq_hz: 90, window_start_s: 0.25 } }));
    applyMessage(s, { type: "session_state", seq: 1, payload: { state: "idle" } });
    expect(s.fmedSeries).toEqual([]);
    expect(s.ti).toBeNull();
    expect(s.badge).toBe("no-data");
    expect(s.controls.session).toBe("idle");
  });
});

describe("displayTrend", () => {
  it("is a moving median of the plotted points (outlier-resistant)", () => {
    const series = [90, 91, 200, 89, 90].map((hz, i) => ({ t_s: i, hz }));
    const trend = displayTrend(series, 5);
    expect(trend.length).toBe(5);
    expect(trend[2].hz).toBe(90); // median of the full window [89,90,90,91,200]
  });

  it("keeps timestamps", () => {
    const series = [{ t_s: 2.5, hz: 90 }];
    expect(displayTrend(series)[0].t_s).toBe(2.5);
  });
});

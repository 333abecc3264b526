// Central app state: every displayed number originates from a service
// message. applyMessage() is synchronous, so panel state (badge, lamps,
// counters) updates in the same render pass as the frame that carried it.

import { tiBadgeState, type BadgeState } from "./badge";
import { applyEvent, applyFrame, initialSafetyState, type SafetyPanelState } from "./lamps";
import type { ControlsState } from "./controls";
import { initialControls } from "./controls";
import type { FramePayload, Kinematics, Message, WindowFeatures } from "./protocol";

export interface FmedPoint {
  t_s: number;
  hz: number;
}

export interface AppState {
  controls: ControlsState;
  safety: SafetyPanelState;
  lastFrame: FramePayload | null;
  ti: number | null;
  badge: BadgeState;
  tiUpdatedAtSeq: number;
  features: WindowFeatures | null;
  kinematics: Kinematics | null;
  fmedSeries: FmedPoint[];
  framesSeen: number;
}

export function initialState(): AppState {
  return {
    controls: initialControls(),
    safety: initialSafetyState(),
    lastFrame: null,
    ti: null,
    badge: "no-data",
    tiUpdatedAtSeq: -1,
    features: null,
    kinematics: null,
    fmedSeries: [],
    framesSeen: 0,
  };
}

const MAX_FMED_POINTS = 2000;

export function applyMessage(state: AppState, msg: Message): void {
  switch (msg.type) {
    case "frame": {
      const frame = msg.payload;
      state.lastFrame = frame;
      state.framesSeen += 1;
      if (frame.ti !== state.ti) {
        state.ti = frame.ti;
        state.tiUpdatedAtSeq = msg.seq;
      }
      state.badge = tiBadgeState(frame.ti);
      state.features = frame.features;
      state.kinematics = frame.kinematics;
      if (frame.features && frame.features.median_freq_hz !== null) {
        const last = state.fmedSeries[state.fmedSeries.length - 1];
        if (!last || last.t_s !== frame.features.window_start_s) {
          state.fmedSeries.push({ t_s: frame.features.window_start_s, hz: frame.features.median_freq_hz });
          if (state.fmedSeries.length > MAX_FMED_POINTS) state.fmedSeries.shift();
        }
      }
      applyFrame(state.safety, frame);
      break;
    }
    case "safety_event":
      applyEvent(state.safety, msg.payload);
      state.controls.engaged = state.safety.engaged;
      break;
    case "session_state": {
      const p = msg.payload;
      state.controls.session = p.state;
      if (p.condition === "baseline" || p.condition === "assisted") {
        state.controls.condition = p.condition;
      }
      if (typeof p.task === "string") state.controls.task = p.task;
      if (typeof p.assist_level === "number") state.controls.assistLevel = p.assist_level;
      if (p.state === "idle" || p.state === "staging") {
        state.fmedSeries = [];
        state.safety = initialSafetyState();
        state.ti = null;
        state.badge = "no-data";
        state.kinematics = null;
      }
      break;
    }
  }
}

/** Display smoothing for the fatigue trend line: moving median over the
 * plotted points. Purely visual; the reported slope comes from the
 * analysis summary endpoint, never from the client. */
export function displayTrend(series: FmedPoint[], window = 15): FmedPoint[] {
  if (series.length === 0) return [];
  const half = Math.floor(window / 2);
  const out: FmedPoint[] = [];
  for (let i = 0; i < series.length; i++) {
    const lo = Math.max(0, i - half);
    const hi = Math.min(series.length, i + half + 1);
    const values = series.slice(lo, hi).map((p) => p.hz).sort((a, b) => a - b);
    const mid = values.length >> 1;
    const med = values.length % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
    out.push({ t_s: series[i].t_s, hz: med });
  }
  return out;
}

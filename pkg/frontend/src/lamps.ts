// Safety-envelope status lamps and the event log. One lamp per clamp kind;
// a stall/time-out disengage turns the panel red until the operator resets.

import type { FramePayload, SafetyEventPayload } from "./protocol";

export const LAMP_KINDS = ["angle", "torque", "jerk", "stall_timeout"] as const;
export type LampKind = (typeof LAMP_KINDS)[number];

export interface LogEntry {
  t_s: number;
  text: string;
  severity: "info" | "alarm";
}

export interface SafetyPanelState {
  lamps: Record<LampKind, boolean>;
  engaged: boolean;
  log: LogEntry[];
}

export function initialSafetyState(): SafetyPanelState {
  return {
    lamps: { angle: false, torque: false, jerk: false, stall_timeout: false },
    engaged: true,
    log: [],
  };
}

const MAX_LOG = 200;

function pushLog(state: SafetyPanelState, entry: LogEntry): void {
  state.log.push(entry);
  if (state.log.length > MAX_LOG) state.log.shift();
}

/** Per-frame lamp refresh: lamps track the latest frame's clamp flags. */
export function applyFrame(state: SafetyPanelState, frame: FramePayload): void {
  for (const kind of LAMP_KINDS) {
    state.lamps[kind] = frame.safety_flags.includes(kind);
  }
  state.engaged = frame.assist.engaged;
}

/** Safety events flip the disengage state immediately and log it. */
export function applyEvent(state: SafetyPanelState, ev: SafetyEventPayload): void {
  if (ev.event === "disengage") {
    state.engaged = false;
    state.lamps.stall_timeout = true;
    pushLog(state, {
      t_s: ev.t_s,
      text: `assist disengaged (${(ev.flags ?? []).join(", ") || "stall/time-out"})`,
      severity: "alarm",
    });
  } else if (ev.event === "reset") {
    state.engaged = true;
    state.lamps.stall_timeout = false;
    pushLog(state, { t_s: ev.t_s, text: "safety reset: assist re-engaged", severity: "info" });
  }
}

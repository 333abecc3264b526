// Telemetry protocol: JSON text messages {type, seq, payload} over the
// persistent socket, plus the REST control surface. The dashboard displays
// service numbers verbatim; nothing clinical is recomputed client-side.

export type MessageType = "frame" | "safety_event" | "session_state";

export interface WindowFeatures {
  rms: number;
  mav: number;
  zc_count: number;
  median_freq_hz: number | null;
  window_start_s: number;
}

export interface AssistInfo {
  need: number;
  torque: number;
  level: number;
  engaged: boolean;
}

export interface Kinematics {
  rom_deg: number;
  reps: number;
  reps_per_min: number;
  pacing: number | null;
  target_reps_per_min: number | null;
}

export interface FramePayload {
  t_s: number;
  features: WindowFeatures | null;
  ti: number | null;
  assist: AssistInfo;
  safety_flags: string[];
  snippets: Record<string, Array<number | null>>;
  psd: { freqs_hz: number[]; power: number[] } | null;
  kinematics: Kinematics | null;
  session_state: string;
}

export interface SafetyEventPayload {
  t_s: number;
  event: "disengage" | "reset";
  engaged?: boolean;
  flags?: string[];
}

export interface SessionStatePayload {
  state: "idle" | "staging" | "running" | "stopping" | "stopped";
  subject_id?: string;
  task?: string;
  condition?: string;
  assist_level?: number;
}

export type Message =
  | { type: "frame"; seq: number; payload: FramePayload }
  | { type: "safety_event"; seq: number; payload: SafetyEventPayload }
  | { type: "session_state"; seq: number; payload: SessionStatePayload };

export class ProtocolError extends Error {}

const MESSAGE_TYPES: ReadonlySet<string> = new Set(["frame", "safety_event", "session_state"]);

/** Parse one socket text message; malformed input throws ProtocolError. */
export function parseMessage(text: string): Message {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new ProtocolError("not JSON");
  }
  if (typeof raw !== "object" || raw === null) {
    throw new ProtocolError("not an object");
  }
  const msg = raw as { type?: unknown; seq?: unknown; payload?: unknown };
  if (typeof msg.type !== "string" || !MESSAGE_TYPES.has(msg.type)) {
    throw new ProtocolError(`unknown message type: ${String(msg.type)}`);
  }
  if (typeof msg.seq !== "number" || !Number.isInteger(msg.seq) || msg.seq < 0) {
    throw new ProtocolError("missing or invalid seq");
  }
  if (typeof msg.payload !== "object" || msg.payload === null) {
    throw new ProtocolError("missing payload");
  }
  return msg as Message;
}

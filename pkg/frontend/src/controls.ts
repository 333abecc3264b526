// Session controls: a small state machine over the REST control surface.
// Conditions are fixed per session (select before start); the assist-level
// slider is live only during assisted runs; every action resolves to an
// acknowledgement or a verbatim error toast. A pending guard makes double
// clicks idempotent on the client; the service rejects duplicates anyway.

export type UiSessionState = "idle" | "staging" | "running" | "stopping" | "stopped";

export interface ControlsState {
  session: UiSessionState;
  task: string;
  condition: "baseline" | "assisted";
  assistLevel: number;
  engaged: boolean;
  pending: boolean;
  lastError: string | null;
}

export function initialControls(): ControlsState {
  return {
    session: "idle",
    task: "push_extend",
    condition: "baseline",
    assistLevel: 1.0,
    engaged: true,
    pending: false,
    lastError: null,
  };
}

export function canStart(s: ControlsState): boolean {
  return s.session === "idle" && !s.pending;
}

export function canStop(s: ControlsState): boolean {
  return (s.session === "running" || s.session === "stopped") && !s.pending;
}

export function canSelectTaskAndCondition(s: ControlsState): boolean {
  // per-session protocol rule: no condition changes once a run is staged
  return s.session === "idle" && !s.pending;
}

export function canAdjustAssistLevel(s: ControlsState): boolean {
  return s.session === "running" && s.condition === "assisted";
}

export function canResetSafety(s: ControlsState): boolean {
  return s.session === "running" && !s.engaged;
}

export interface ControlApi {
  post(path: string, body: unknown): Promise<{ ok: boolean; status: number; error?: string }>;
}

export function restControlApi(base = ""): ControlApi {
  return {
    async post(path, body) {
      const resp = await fetch(`${base}${path}`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
      if (resp.ok) return { ok: true, status: resp.status };
      // surface rejected actions verbatim
      const text = await resp.text();
      return { ok: false, status: resp.status, error: text || resp.statusText };
    },
  };
}

async function guarded(
  state: ControlsState,
  allowed: boolean,
  action: () => Promise<{ ok: boolean; status: number; error?: string }>,
): Promise<boolean> {
  if (!allowed || state.pending) return false;
  state.pending = true;
  state.lastError = null;
  try {
    const res = await action();
    if (!res.ok) state.lastError = res.error ?? `rejected (${res.status})`;
    return res.ok;
  } catch (e) {
    state.lastError = String(e);
    return false;
  } finally {
    state.pending = false;
  }
}

export function startSession(state: ControlsState, api: ControlApi): Promise<boolean> {
  return guarded(state, canStart(state), () =>
    api.post("/api/session/start", { task: state.task, condition: state.condition, assist_level: state.assistLevel }),
  );
}

export function stopSession(state: ControlsState, api: ControlApi): Promise<boolean> {
  return guarded(state, canStop(state), () => api.post("/api/session/stop", {}));
}

export function setAssistLevel(state: ControlsState, api: ControlApi, level: number): Promise<boolean> {
  state.assistLevel = level;
  return guarded(state, canAdjustAssistLevel(state), () => api.post("/api/assist/level", { level }));
}

export function resetSafety(state: ControlsState, api: ControlApi): Promise<boolean> {
  return guarded(state, canResetSafety(state), () => api.post("/api/safety/reset", {}));
}

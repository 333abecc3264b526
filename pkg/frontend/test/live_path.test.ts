// Live-path behaviour against a scripted mock socket speaking the service
// protocol: badge latency relative to window emission, stall lamp within
// one telemetry frame, reconnect banner, decimation gap handling.

import { describe, expect, it } from "vitest";

import { minMaxBins } from "../src/decimate";
import type { Message } from "../src/protocol";
import { RenderQueue } from "../src/queue";
import { backoffDelayMs, TelemetryLink, type LinkState, type SocketLike } from "../src/reconnect";
import { applyMessage, initialState } from "../src/store";

class MockSocket implements SocketLike {
  onmessage: ((ev: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  onopen: (() => void) | null = null;
  closed = false;

  open(): void {
    this.onopen?.();
  }

  send(msg: Message): void {
    this.onmessage?.({ data: JSON.stringify(msg) });
  }

  sendRaw(text: string): void {
    this.onmessage?.({ data: text });
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }
}

function frameMsg(seq: number, t_s: number, ti: number | null, flags: string[] = [], engaged = true): Message {
  return {
    type: "frame",
    seq,
    payload: {
      t_s,
      features: ti === null ? null : { rms: 0.5, mav: 0.4, zc_count: 60, median_freq_hz: 91, window_start_s: t_s - 0.25 },
      ti,
      assist: { need: 0.5, torque: 1.0, level: 1, engaged },
      safety_flags: flags,
      snippets: {},
      psd: null,
      kinematics: null,
      session_state: "running",
    },
  };
}

function pipeline() {
  const state = initialState();
  const queue = new RenderQueue(64);
  const socket = new MockSocket();
  const states: LinkState[] = [];
  const link = new TelemetryLink({
    connect: () => socket,
    onMessage: (m) => queue.push(m),
    onState: (s) => states.push(s),
    scheduler: () => {}, // reconnects are driven manually in tests
  });
  link.open();
  socket.open();
  const render = () => {
    for (const m of queue.drain()) applyMessage(state, m);
  };
  return { state, queue, socket, states, link, render };
}

describe("live path", () => {
  it("badge updates on the first frame after window emission (well under 500 ms)", () => {
    const { state, socket, render } = pipeline();
    // window [0, 0.25) emits at 0.25; the 25 Hz frame at 0.28 carries its value
    socket.send(frameMsg(0, 0.24, null));
    render();
    expect(state.badge).toBe("no-data");
    socket.send(frameMsg(1, 0.28, 0.29));
    render();
    expect(state.badge).toBe("controlled");
    // frame cadence at 25-50 Hz puts the badge 20-40 ms behind emission,
    // far inside the 500 ms budget
    const latency_s = 0.28 - 0.25;
    expect(latency_s).toBeLessThan(0.5);
  });

  it("a stall raises the lamp within one telemetry frame", () => {
    const { state, socket, render } = pipeline();
    socket.send(frameMsg(0, 0.4, 0.35));
    socket.send({ type: "safety_event", seq: 1, payload: { t_s: 0.41, event: "disengage", flags: ["stall_timeout"] } });
    render(); // the event precedes the next frame in seq order
    expect(state.safety.lamps.stall_timeout).toBe(true);
    expect(state.safety.engaged).toBe(false);
    socket.send(frameMsg(2, 0.44, 0.35, ["stall_timeout"], false));
    render();
    expect(state.safety.engaged).toBe(false);
    expect(state.safety.log.at(-1)?.severity).toBe("alarm");
  });

  it("malformed socket data is counted and dropped, never rendered", () => {
    const { state, socket, render, link } = pipeline();
    socket.sendRaw("{broken json");
    socket.sendRaw(JSON.stringify({ type: "mystery", seq: 0, payload: {} }));
    render();
    expect(link.badMessages).toBe(2);
    expect(state.framesSeen).toBe(0);
  });

  it("disconnect flips the banner and backoff grows capped", () => {
    const { socket, states } = pipeline();
    expect(states.at(-1)).toBe("live");
    socket.close();
    expect(states.at(-1)).toBe("reconnecting");
    expect(backoffDelayMs(0)).toBe(500);
    expect(backoffDelayMs(1)).toBe(1000);
    expect(backoffDelayMs(10)).toBe(8000); // capped
  });

  it("reconnect schedules a fresh socket", () => {
    const sockets: MockSocket[] = [];
    const pending: Array<() => void> = [];
    const link = new TelemetryLink({
      connect: () => {
        const s = new MockSocket();
        sockets.push(s);
        return s;
      },
      onMessage: () => {},
      onState: () => {},
      scheduler: (fn) => pending.push(fn),
    });
    link.open();
    sockets[0].open();
    sockets[0].close();
    expect(pending.length).toBe(1);
    pending.pop()!();
    expect(sockets.length).toBe(2);
  });
});

describe("waveform decimation", () => {
  it("preserves extremes per bin", () => {
    const values = Array.from({ length: 100 }, (_, i) => (i === 37 ? 9 : Math.sin(i / 5)));
    const bins = minMaxBins(values, 10);
    expect(bins.length).toBe(10);
    expect(bins[3]!.max).toBe(9);
  });

  it("dropout samples produce gap bins, not interpolation", () => {
    const values: Array<number | null> = [1, 1, null, 1, 1, 1];
    const bins = minMaxBins(values, 3);
    expect(bins[1]).toBeNull();
    expect(bins[0]).toEqual({ min: 1, max: 1 });
  });
});

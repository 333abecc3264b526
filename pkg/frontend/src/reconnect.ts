// Telemetry socket wrapper: parses messages into the render queue and
// reconnects with capped exponential backoff, exposing a banner state so a
// disconnect is always visible.

import { parseMessage, ProtocolError, type Message } from "./protocol";

export type LinkState = "connecting" | "live" | "reconnecting";

export function backoffDelayMs(attempt: number, baseMs = 500, capMs = 8000): number {
  if (attempt < 0) throw new Error("attempt must be >= 0");
  return Math.min(baseMs * 2 ** attempt, capMs);
}

export interface SocketLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onopen: (() => void) | null;
  close(): void;
}

export interface TelemetryLinkOptions {
  connect: () => SocketLike;
  onMessage: (msg: Message) => void;
  onState: (state: LinkState) => void;
  scheduler?: (fn: () => void, ms: number) => void;
}

export class TelemetryLink {
  private attempt = 0;
  private socket: SocketLike | null = null;
  private stopped = false;
  badMessages = 0;

  constructor(private readonly opts: TelemetryLinkOptions) {}

  open(): void {
    this.stopped = false;
    this.opts.onState(this.attempt === 0 ? "connecting" : "reconnecting");
    const sock = this.opts.connect();
    this.socket = sock;
    sock.onopen = () => {
      this.attempt = 0;
      this.opts.onState("live");
    };
    sock.onmessage = (ev) => {
      try {
        this.opts.onMessage(parseMessage(ev.data));
      } catch (e) {
        if (e instanceof ProtocolError) {
          this.badMessages += 1; // count and drop; never render garbage
        } else {
          throw e;
        }
      }
    };
    sock.onclose = () => {
      if (this.stopped) return;
      this.opts.onState("reconnecting");
      const delay = backoffDelayMs(this.attempt);
      this.attempt += 1;
      const schedule = this.opts.scheduler ?? ((fn, ms) => setTimeout(fn, ms));
      schedule(() => this.open(), delay);
    };
  }

  close(): void {
    this.stopped = true;
    this.socket?.close();
  }
}

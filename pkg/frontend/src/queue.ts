// Bounded client-side message queue decoupling socket receipt from
// rendering. Overflow drops the oldest entries (the render loop always
// catches up to live data) and raises the dropout indicator; sequence-number
// regressions are discarded so frames render in seq order, and gaps are
// surfaced as explicit dropouts, never painted over.

import type { Message } from "./protocol";

export interface Dropout {
  kind: "overflow" | "seq_gap";
  missed: number;
  atSeq: number;
}

export class RenderQueue {
  private items: Message[] = [];
  private lastSeq = -1;
  private dropouts_: Dropout[] = [];
  overflowDropped = 0;

  constructor(private readonly maxlen: number = 256) {
    if (maxlen < 1) throw new Error("maxlen must be >= 1");
  }

  /** Enqueue a parsed message; returns false when it was discarded. */
  push(msg: Message): boolean {
    if (msg.seq <= this.lastSeq) {
      return false; // stale or duplicate: frames render in seq order only
    }
    if (this.lastSeq >= 0 && msg.seq > this.lastSeq + 1) {
      this.dropouts_.push({ kind: "seq_gap", missed: msg.seq - this.lastSeq - 1, atSeq: msg.seq });
    }
    this.lastSeq = msg.seq;
    this.items.push(msg);
    while (this.items.length > this.maxlen) {
      this.items.shift();
      this.overflowDropped += 1;
      this.dropouts_.push({ kind: "overflow", missed: 1, atSeq: msg.seq });
    }
    return true;
  }

  /** All pending messages, oldest first; clears the queue. */
  drain(): Message[] {
    const out = this.items;
    this.items = [];
    return out;
  }

  /** Dropout markers accumulated since the last call. */
  takeDropouts(): Dropout[] {
    const out = this.dropouts_;
    this.dropouts_ = [];
    return out;
  }

  get pending(): number {
    return this.items.length;
  }
}

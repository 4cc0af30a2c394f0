// Trace model: events render strictly in seq order no matter how they arrive.

import type { StreamEvent } from './types.js';

export type TraceStatus = 'pending' | 'complete' | 'error';

export class TraceView {
  private buffered = new Map<number, StreamEvent>();
  private nextSeq = 0;
  rendered: StreamEvent[] = [];
  status: TraceStatus = 'pending';
  errorDetail: string | null = null;

  /** Buffer an event; returns the events that became renderable, in order. */
  addEvent(event: StreamEvent): StreamEvent[] {
    if (event.seq < this.nextSeq || this.buffered.has(event.seq)) {
      return []; // duplicate delivery
    }
    this.buffered.set(event.seq, event);
    const released: StreamEvent[] = [];
    while (this.buffered.has(this.nextSeq)) {
      const next = this.buffered.get(this.nextSeq)!;
      this.buffered.delete(this.nextSeq);
      this.nextSeq += 1;
      this.rendered.push(next);
      released.push(next);
      if (next.type === 'final') {
        this.status = 'complete';
      } else if (next.type === 'error') {
        this.status = 'error';
        this.errorDetail = next.payload.detail ?? next.payload.error ?? 'stream error';
      }
    }
    return released;
  }

  /** Connection dropped before a terminal event; the partial trace stays. */
  markDisconnected(detail: string): void {
    if (this.status === 'pending') {
      this.status = 'error';
      this.errorDetail = detail;
    }
  }

  get isTerminal(): boolean {
    return this.status !== 'pending';
  }

  finalAnswerEvent(): StreamEvent | null {
    const last = this.rendered[this.rendered.length - 1];
    return last && last.type === 'final' ? last : null;
  }
}

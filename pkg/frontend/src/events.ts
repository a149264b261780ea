import type { ProgressEvent } from "./types.js";

export type StreamFrame = { id: number; event: ProgressEvent };

// Parse a server-sent-events body into frames. The server emits
// "id: <seq>\ndata: <json>\n\n" blocks; anything else is ignored.
export function parseStream(text: string): StreamFrame[] {
  const frames: StreamFrame[] = [];
  for (const block of text.split("\n\n")) {
    let id: number | null = null;
    let data = "";
    for (const line of block.split("\n")) {
      if (line.startsWith("id:")) id = Number(line.slice(3).trim());
      if (line.startsWith("data:")) data += line.slice(5).trim();
    }
    if (id === null || !data) continue;
    try {
      frames.push({ id, event: JSON.parse(data) as ProgressEvent });
    } catch {
      // a torn frame at a reconnect boundary; the resend will be whole
    }
  }
  return frames;
}

/** Ordered, de-duplicated view of the progress stream.
 *
 * The cursor is the highest seq ever accepted; frames at or below it are
 * dropped, so replaying an overlapping stream after a reconnect renders
 * nothing twice. A gap (seq jumping by more than one) is remembered so the
 * caller can resubscribe from the cursor instead of trusting the hole.
 */
export class EventLog {
  cursor = 0;
  events: ProgressEvent[] = [];
  gaps: number[] = [];

  apply(frame: StreamFrame): ProgressEvent | null {
    if (frame.event.seq <= this.cursor) return null;
    if (this.cursor > 0 && frame.event.seq > this.cursor + 1) {
      this.gaps.push(this.cursor + 1);
    }
    this.cursor = frame.event.seq;
    this.events.push(frame.event);
    return frame.event;
  }

  applyAll(frames: StreamFrame[]): ProgressEvent[] {
    const accepted: ProgressEvent[] = [];
    for (const frame of frames) {
      const event = this.apply(frame);
      if (event) accepted.push(event);
    }
    return accepted;
  }

  /** True when seqs run 1..cursor with no holes. */
  isDense(): boolean {
    return this.gaps.length === 0 && this.events.length === this.cursor;
  }
}

export type EventSourceLike = {
  onmessage: ((ev: { lastEventId: string; data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
};

export type EventSourceFactory = (url: string) => EventSourceLike;

/** Subscribe to the live stream; on drop, reopen from the log's cursor so
 * nothing is re-delivered. Returns a disposer. */
export function connectEvents(
  urlFor: (after: number) => string,
  log: EventLog,
  onEvent: (event: ProgressEvent) => void,
  makeSource?: EventSourceFactory,
): () => void {
  const factory: EventSourceFactory =
    makeSource ?? ((url) => new EventSource(url) as unknown as EventSourceLike);
  let source: EventSourceLike | null = null;
  let closed = false;

  const open = () => {
    if (closed) return;
    source = factory(urlFor(log.cursor));
    source.onmessage = (message) => {
      const accepted = log.apply({
        id: Number(message.lastEventId),
        event: JSON.parse(message.data) as ProgressEvent,
      });
      if (accepted) onEvent(accepted);
    };
    source.onerror = () => {
      source?.close();
      open();
    };
  };

  open();
  return () => {
    closed = true;
    source?.close();
  };
}

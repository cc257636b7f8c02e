/**
 * /live stream consumer.
 *
 * Keeps a LiveCounts mirror fed from server-sent deltas.  On every
 * (re)connect, and again when acquisition quiesces, the mirror is
 * replaced from /status, so displayed totals settle on exactly what the
 * service reports.  A dropped stream retries with doubling backoff and
 * flags the view as stale until the next successful open.
 */

import type { LiveEvent, StatusPayload } from "./api.js";
import { LiveCounts } from "./state.js";

// Loose mirror of the DOM EventSource handler slots, so a real
// EventSource satisfies it and tests can substitute a scripted fake.
export interface EventSourceLike {
  onopen: ((ev?: any) => void) | null;
  onmessage: ((ev: any) => void) | null;
  onerror: ((ev?: any) => void) | null;
  close(): void;
}

export interface LiveFeedDeps {
  openStream: (url: string) => EventSourceLike;
  liveUrl: (channel: string) => string;
  fetchStatus: (channel: string) => Promise<StatusPayload>;
}

export interface LiveFeedHooks {
  onUpdate: (counts: LiveCounts) => void;
  onStale: (stale: boolean) => void;
}

export const INITIAL_RETRY_MS = 500;
export const MAX_RETRY_MS = 8000;

export class LiveFeed {
  readonly counts = new LiveCounts(0);
  connected = false;

  private es: EventSourceLike | null = null;
  private channel = "0:0";
  private retryMs = INITIAL_RETRY_MS;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = true;

  constructor(
    private deps: LiveFeedDeps,
    private hooks: LiveFeedHooks,
  ) {}

  start(channel: string): void {
    this.channel = channel;
    this.stopped = false;
    this.connect();
  }

  /** Swap the watched channel; the histogram follows the new stream. */
  setChannel(channel: string): void {
    if (channel === this.channel) return;
    this.channel = channel;
    this.counts.resetHistogram();
    if (!this.stopped) {
      this.closeStream();
      this.connect();
    }
  }

  stop(): void {
    this.stopped = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    this.closeStream();
  }

  private closeStream(): void {
    if (this.es) {
      this.es.onopen = this.es.onmessage = this.es.onerror = null;
      this.es.close();
      this.es = null;
    }
    this.connected = false;
  }

  private connect(): void {
    const es = this.deps.openStream(this.deps.liveUrl(this.channel));
    this.es = es;
    es.onopen = () => {
      this.connected = true;
      this.retryMs = INITIAL_RETRY_MS;
      this.hooks.onStale(false);
      this.resync();
    };
    es.onmessage = (ev) => this.onEvent(JSON.parse(ev.data) as LiveEvent);
    es.onerror = () => this.onDrop();
  }

  private onEvent(ev: LiveEvent): void {
    const wasAcquiring = this.counts.acquiring;
    this.counts.apply(ev);
    if (wasAcquiring && !ev.acquiring) {
      // counters are frozen now; the snapshot is the exact final word
      this.resync();
    }
    this.hooks.onUpdate(this.counts);
  }

  private onDrop(): void {
    if (this.stopped) return;
    this.closeStream();
    this.hooks.onStale(true);
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      if (!this.stopped) this.connect();
    }, this.retryMs);
    this.retryMs = Math.min(this.retryMs * 2, MAX_RETRY_MS);
  }

  private resync(): void {
    this.deps.fetchStatus(this.channel).then(
      (status) => {
        this.counts.replaceFrom(status);
        this.hooks.onUpdate(this.counts);
      },
      () => this.hooks.onStale(true),
    );
  }
}

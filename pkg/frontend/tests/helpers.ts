/**
 * Fixture loading and fakes shared by the dashboard tests.
 *
 * The JSON fixtures are captured verbatim from a live control service
 * (see fixtures/capture.py), so every test below runs against the real
 * wire format.
 */

import fs from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";

import type { LiveEvent, RunStatus, StatusPayload } from "../src/api";
import type { EventSourceLike, LiveFeedDeps } from "../src/live";

const FIXTURES = path.join(path.dirname(fileURLToPath(import.meta.url)), "fixtures");

export interface LiveFixture {
  channel: string;
  events: LiveEvent[];
  status: StatusPayload;
}

export function loadLive(name: string): LiveFixture {
  return JSON.parse(fs.readFileSync(path.join(FIXTURES, name), "utf8"));
}

export function loadRun(name: string): RunStatus {
  return JSON.parse(fs.readFileSync(path.join(FIXTURES, name), "utf8"));
}

/** Scriptable stand-in for EventSource. */
export class FakeEventSource implements EventSourceLike {
  static instances: FakeEventSource[] = [];

  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: string }) => void) | null = null;
  onerror: (() => void) | null = null;
  closed = false;

  constructor(readonly url: string) {
    FakeEventSource.instances.push(this);
  }

  static reset(): void {
    FakeEventSource.instances = [];
  }

  static latest(): FakeEventSource {
    return FakeEventSource.instances[FakeEventSource.instances.length - 1];
  }

  close(): void {
    this.closed = true;
  }

  open(): void {
    this.onopen?.();
  }

  emit(ev: unknown): void {
    this.onmessage?.({ data: JSON.stringify(ev) });
  }

  fail(): void {
    this.onerror?.();
  }
}

/** LiveFeed deps wired to FakeEventSource and a canned /status. */
export function fakeFeedDeps(statusFor: () => StatusPayload): LiveFeedDeps {
  return {
    openStream: (url) => new FakeEventSource(url),
    liveUrl: (channel) => `/live?channel=${channel}`,
    fetchStatus: () => Promise.resolve(statusFor()),
  };
}

/** Let pending promise callbacks run. */
export async function flush(): Promise<void> {
  for (let i = 0; i < 5; i++) {
    await Promise.resolve();
  }
}

/** A /status payload with every counter at zero. */
export function zeroStatus(nVmm: number, channel: string): StatusPayload {
  return {
    board_type: nVmm === 8 ? "sfeb" : "pfeb",
    n_vmm: nVmm,
    run_state: "stopped",
    acquiring: false,
    total_hits: 0,
    rate_hz: 0,
    counts: Array.from({ length: nVmm }, () => new Array<number>(64).fill(0)),
    channel,
    histogram: new Array<number>(64).fill(0),
  };
}

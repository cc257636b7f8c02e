/**
 * Stream lifecycle: resync on connect and at quiesce, reconnect with
 * doubling backoff, the stale badge, and channel swaps.
 */

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import type { StatusPayload } from "../src/api";
import { INITIAL_RETRY_MS, LiveFeed, MAX_RETRY_MS } from "../src/live";
import {
  FakeEventSource,
  fakeFeedDeps,
  flush,
  loadLive,
  zeroStatus,
} from "./helpers";

function makeFeed(statusFor: () => StatusPayload) {
  const updates: number[] = [];
  const stale: boolean[] = [];
  const feed = new LiveFeed(fakeFeedDeps(statusFor), {
    onUpdate: (counts) => updates.push(counts.totalHits),
    onStale: (s) => stale.push(s),
  });
  return { feed, updates, stale };
}

beforeEach(() => {
  FakeEventSource.reset();
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("LiveFeed", () => {
  it("lands on the /status totals even when it joins mid-run", async () => {
    const fx = loadLive("live_mode2.json");
    // the service has already seen some hits when the page connects
    let snapshot = zeroStatus(3, fx.channel);
    const { feed } = makeFeed(() => snapshot);
    feed.start(fx.channel);
    const es = FakeEventSource.latest();
    es.open();
    await flush();

    // miss the first two events entirely, then follow the stream
    for (const ev of fx.events.slice(2)) {
      snapshot = fx.status;
      es.emit(ev);
      await flush();
    }
    expect(feed.counts.totalHits).toBe(fx.status.total_hits);
    expect(feed.counts.counts).toEqual(fx.status.counts);
    expect(feed.counts.histogram).toEqual(fx.status.histogram);
  });

  it("resyncs from /status when acquisition quiesces", async () => {
    const fx = loadLive("live_mode2.json");
    let statusFetches = 0;
    const { feed } = makeFeed(() => {
      statusFetches++;
      return fx.status;
    });
    feed.start(fx.channel);
    FakeEventSource.latest().open();
    await flush();
    const afterOpen = statusFetches;

    const running = fx.events.filter((e) => e.acquiring);
    const stopped = fx.events.filter((e) => !e.acquiring);
    for (const ev of running) {
      FakeEventSource.latest().emit(ev);
    }
    expect(statusFetches).toBe(afterOpen);
    FakeEventSource.latest().emit(stopped[0]);
    await flush();
    expect(statusFetches).toBe(afterOpen + 1);
    // later stopped events do not refetch
    FakeEventSource.latest().emit(stopped[1]);
    await flush();
    expect(statusFetches).toBe(afterOpen + 1);
    expect(feed.counts.totalHits).toBe(fx.status.total_hits);
  });

  it("keeps the counters static across post-stop events", async () => {
    const fx = loadLive("live_mode2.json");
    const { feed } = makeFeed(() => fx.status);
    feed.start(fx.channel);
    FakeEventSource.latest().open();
    await flush();
    for (const ev of fx.events) {
      FakeEventSource.latest().emit(ev);
    }
    await flush();
    const frozen = JSON.stringify(feed.counts.counts);
    const tail = fx.events[fx.events.length - 1];
    FakeEventSource.latest().emit(tail);
    expect(JSON.stringify(feed.counts.counts)).toBe(frozen);
  });

  it("reconnects with doubling backoff and shows the stale badge", async () => {
    const { feed, stale } = makeFeed(() => zeroStatus(3, "0:0"));
    feed.start("0:0");
    expect(FakeEventSource.instances.length).toBe(1);

    FakeEventSource.latest().fail();
    expect(stale).toEqual([true]);
    expect(FakeEventSource.instances.length).toBe(1);
    await vi.advanceTimersByTimeAsync(INITIAL_RETRY_MS);
    expect(FakeEventSource.instances.length).toBe(2);

    // second drop waits twice as long
    FakeEventSource.latest().fail();
    await vi.advanceTimersByTimeAsync(INITIAL_RETRY_MS);
    expect(FakeEventSource.instances.length).toBe(2);
    await vi.advanceTimersByTimeAsync(INITIAL_RETRY_MS);
    expect(FakeEventSource.instances.length).toBe(3);

    // a successful open clears the badge and resets the backoff
    FakeEventSource.latest().open();
    await flush();
    expect(stale[stale.length - 1]).toBe(false);
    expect(feed.connected).toBe(true);
    FakeEventSource.latest().fail();
    await vi.advanceTimersByTimeAsync(INITIAL_RETRY_MS);
    expect(FakeEventSource.instances.length).toBe(4);
    feed.stop();
  });

  it("caps the backoff delay", async () => {
    const { feed } = makeFeed(() => zeroStatus(3, "0:0"));
    feed.start("0:0");
    for (let i = 0; i < 10; i++) {
      FakeEventSource.latest().fail();
      await vi.advanceTimersByTimeAsync(MAX_RETRY_MS);
    }
    // still reconnecting, one source per MAX_RETRY_MS window at worst
    expect(FakeEventSource.instances.length).toBeGreaterThanOrEqual(10);
    feed.stop();
  });

  it("swaps streams and clears the histogram on channel change", async () => {
    const fx = loadLive("live_mode2.json");
    const { feed } = makeFeed(() => fx.status);
    feed.start("0:0");
    const first = FakeEventSource.latest();
    first.open();
    await flush();
    expect(feed.counts.histogram).toEqual(fx.status.histogram);

    feed.setChannel("1:7");
    expect(first.closed).toBe(true);
    const second = FakeEventSource.latest();
    expect(second).not.toBe(first);
    expect(second.url).toContain("1:7");
    // cleared until the new stream's snapshot arrives
    expect(feed.counts.histogram.every((n) => n === 0)).toBe(true);
  });
});

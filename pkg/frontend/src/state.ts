/**
 * Dashboard state: what is selected, what the live stream has
 * accumulated, and the latest reports.
 *
 * The accumulator only adds the deltas the stream hands it and can be
 * replaced wholesale from a /status snapshot; no statistic is computed
 * client-side.
 */

import type { Classification, LiveEvent, ReportSet, StatusPayload } from "./api.js";

export const N_CHANNELS = 64;
export const HIST_BINS = 64;

/** Peak-amplitude full scale: pdo code 1023 corresponds to 1000 mV. */
export const PDO_FULL_SCALE = 1023;
export const ADC_RANGE_MV = 1000;

export function pdoCodeToMv(code: number): number {
  return (code / PDO_FULL_SCALE) * ADC_RANGE_MV;
}

function zeros(n: number): number[] {
  return new Array<number>(n).fill(0);
}

/** Absolute counters mirrored from the stream, one row per vmm. */
export class LiveCounts {
  counts: number[][];
  histogram: number[];
  totalHits = 0;
  rateHz = 0;
  runState = "stopped";
  acquiring = false;

  constructor(public nVmm: number) {
    this.counts = Array.from({ length: nVmm }, () => zeros(N_CHANNELS));
    this.histogram = zeros(HIST_BINS);
  }

  /** Reset every counter to a /status snapshot. */
  replaceFrom(status: StatusPayload): void {
    this.nVmm = status.n_vmm;
    this.counts = status.counts.map((row) => row.slice());
    this.histogram = status.histogram
      ? status.histogram.slice()
      : zeros(HIST_BINS);
    this.totalHits = status.total_hits;
    this.rateHz = status.rate_hz;
    this.runState = status.run_state;
    this.acquiring = status.acquiring;
  }

  /** Add one stream delta. Keys in counts_delta are "vmm:channel". */
  apply(ev: LiveEvent): void {
    for (const [key, dn] of Object.entries(ev.counts_delta)) {
      const sep = key.indexOf(":");
      const vmm = Number(key.slice(0, sep));
      const ch = Number(key.slice(sep + 1));
      if (vmm >= 0 && vmm < this.nVmm && ch >= 0 && ch < N_CHANNELS) {
        this.counts[vmm][ch] += dn;
      }
    }
    if (ev.histogram_delta) {
      for (let b = 0; b < HIST_BINS; b++) {
        this.histogram[b] += ev.histogram_delta[b];
      }
    }
    this.totalHits = ev.total_hits;
    this.rateHz = ev.rate_hz;
    this.runState = ev.run_state;
    this.acquiring = ev.acquiring;
  }

  /** Clear the watched-channel histogram, e.g. on channel change. */
  resetHistogram(): void {
    this.histogram = zeros(HIST_BINS);
  }
}

function clampChannel(n: number): number {
  if (!Number.isFinite(n)) return 0;
  return Math.min(N_CHANNELS - 1, Math.max(0, Math.trunc(n)));
}

export class ViewState {
  boardId = "";
  boardType = "";
  nVmm = 0;
  private vmm = 0;
  private channel = 0;
  liveConnected = false;
  /** Run id and test of the scan in flight, if any. */
  activeRun: { runId: string; test: string } | null = null;
  reports: ReportSet = {};
  classification: Classification | null = null;

  get selectedVmm(): number {
    return this.vmm;
  }

  get selectedChannel(): number {
    return this.channel;
  }

  /** Selection is clamped so the watch key is always a real channel. */
  select(vmm: number, channel: number): void {
    const top = Math.max(0, this.nVmm - 1);
    this.vmm = Math.min(top, Math.max(0, Math.trunc(vmm) || 0));
    this.channel = clampChannel(channel);
  }

  get watchKey(): string {
    return `${this.vmm}:${this.channel}`;
  }
}

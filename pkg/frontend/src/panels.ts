/**
 * Scan control pane: config edits, scan launches, run progress, and the
 * verdict with per-channel flags once a run completes.
 */

import { ApiError, Classification, ReportSet, RunStatus } from "./api.js";
import { ViewState } from "./state.js";

/** The slice of the HTTP client the panel drives. */
export interface ScanApi {
  applyConfig(
    vmm: number | "all",
    fields: Record<string, number>,
  ): Promise<unknown>;
  launchRun(
    test: string,
    params: Record<string, number>,
  ): Promise<{ run_id: string }>;
  run(runId: string): Promise<RunStatus>;
}

export const GAIN_MV_PER_FC = [0.5, 1.0, 3.0, 4.5, 6.0, 9.0, 12.0, 16.0];
export const PEAK_TIME_NS = [25, 50, 100, 200];

const SCANS = ["all", "baseline", "threshold_cal", "pulser_cal", "gain", "dead_channel"];

function options(values: string[]): string {
  return values.map((v) => `<option value="${v}">${v}</option>`).join("");
}

export interface PanelDeps {
  api: ScanApi;
  state: ViewState;
  /** Called after a run finishes and the reports cache changed. */
  onReports: () => void;
  pollMs?: number;
}

export class ScanPanel {
  private launchBtn: HTMLButtonElement;
  private applyBtn: HTMLButtonElement;
  private notice: HTMLElement;
  private banner: HTMLElement;
  private verdictBox: HTMLElement;
  private pollMs: number;

  constructor(
    private root: HTMLElement,
    private deps: PanelDeps,
  ) {
    this.pollMs = deps.pollMs ?? 500;
    root.innerHTML = `
      <h2>configuration</h2>
      <form class="config-form">
        <label>gain
          <select name="gain_sel">
            ${GAIN_MV_PER_FC.map((g, i) => `<option value="${i}"${i === 2 ? " selected" : ""}>${g} mV/fC</option>`).join("")}
          </select>
        </label>
        <label>peak time
          <select name="peak_time_sel">
            ${PEAK_TIME_NS.map((t, i) => `<option value="${i}">${t} ns</option>`).join("")}
          </select>
        </label>
        <label>polarity
          <select name="polarity">
            <option value="0">negative</option>
            <option value="1">positive</option>
          </select>
        </label>
        <label>threshold DAC
          <input name="threshold_dac" type="number" value="100" min="0" max="1023">
        </label>
        <label>pulser DAC
          <input name="pulser_dac" type="number" value="300" min="0" max="1023">
        </label>
        <button type="submit" class="apply-btn">apply to all vmms</button>
      </form>
      <h2>scans</h2>
      <form class="scan-form">
        <label>test <select name="test">${options(SCANS)}</select></label>
        <label>baseline samples
          <input name="baseline_samples" type="number" value="100" min="2">
        </label>
        <label>samples per point
          <input name="samples_per_point" type="number" value="16" min="1">
        </label>
        <label>dead-channel pulses
          <input name="dead_pulses" type="number" value="1000" min="1">
        </label>
        <button type="submit" class="launch-btn">launch scan</button>
      </form>
      <p class="run-notice hidden"></p>
      <div class="error-banner hidden"></div>
      <div class="verdict-box"></div>
    `;
    this.launchBtn = root.querySelector<HTMLButtonElement>(".launch-btn")!;
    this.applyBtn = root.querySelector<HTMLButtonElement>(".apply-btn")!;
    this.notice = root.querySelector<HTMLElement>(".run-notice")!;
    this.banner = root.querySelector<HTMLElement>(".error-banner")!;
    this.verdictBox = root.querySelector<HTMLElement>(".verdict-box")!;

    root.querySelector<HTMLFormElement>(".config-form")!.addEventListener(
      "submit",
      (ev) => {
        ev.preventDefault();
        void this.applyConfig();
      },
    );
    root.querySelector<HTMLFormElement>(".scan-form")!.addEventListener(
      "submit",
      (ev) => {
        ev.preventDefault();
        void this.launch();
      },
    );
  }

  private field(form: string, name: string): HTMLInputElement {
    return this.root.querySelector<HTMLInputElement>(
      `${form} [name="${name}"]`,
    )!;
  }

  private showError(err: unknown): void {
    // API error bodies go to the operator verbatim
    const text =
      err instanceof ApiError ? err.body : err instanceof Error ? err.message : String(err);
    this.banner.textContent = text;
    this.banner.classList.remove("hidden");
  }

  private clearError(): void {
    this.banner.textContent = "";
    this.banner.classList.add("hidden");
  }

  private setBusy(busy: boolean, text: string): void {
    this.launchBtn.disabled = busy;
    this.applyBtn.disabled = busy;
    this.notice.textContent = text;
    this.notice.classList.toggle("hidden", !busy);
  }

  async applyConfig(): Promise<void> {
    this.clearError();
    const fields: Record<string, number> = {};
    for (const name of [
      "gain_sel",
      "peak_time_sel",
      "polarity",
      "threshold_dac",
      "pulser_dac",
    ]) {
      fields[name] = Number(this.field(".config-form", name).value);
    }
    try {
      await this.deps.api.applyConfig("all", fields);
    } catch (err) {
      this.showError(err);
    }
  }

  async launch(): Promise<void> {
    if (this.deps.state.activeRun) return;
    this.clearError();
    const test = this.field(".scan-form", "test").value;
    const params: Record<string, number> = {};
    for (const name of ["baseline_samples", "samples_per_point", "dead_pulses"]) {
      params[name] = Number(this.field(".scan-form", name).value);
    }
    this.setBusy(true, `scan in progress: ${test}`);
    let runId: string;
    try {
      const res = await this.deps.api.launchRun(test, params);
      runId = res.run_id;
    } catch (err) {
      this.setBusy(false, "");
      this.showError(err);
      return;
    }
    this.deps.state.activeRun = { runId, test };
    this.poll(runId);
  }

  private poll(runId: string): void {
    setTimeout(async () => {
      let run: RunStatus;
      try {
        run = await this.deps.api.run(runId);
      } catch (err) {
        this.finish(null);
        this.showError(err);
        return;
      }
      if (run.status === "running") {
        this.poll(runId);
        return;
      }
      this.finish(run);
    }, this.pollMs);
  }

  private finish(run: RunStatus | null): void {
    this.deps.state.activeRun = null;
    this.setBusy(false, "");
    if (!run) return;
    if (run.status === "failed") {
      this.showError(run.error ?? `run ${run.run_id} failed`);
      return;
    }
    if (run.reports) {
      this.deps.state.reports = run.reports;
    }
    this.deps.state.classification = run.classification ?? null;
    if (run.classification) {
      renderVerdict(this.verdictBox, run.classification);
    }
    this.deps.onReports();
  }
}

export function renderVerdict(root: HTMLElement, cls: Classification): void {
  const verdict = cls.status === "pass" ? "PASS" : "FAIL";
  const reasons = cls.reasons
    .map((r) => `<li class="reason">${r}</li>`)
    .join("");
  root.innerHTML = `
    <p class="verdict verdict-${cls.status}">${verdict}</p>
    ${reasons ? `<ul class="reasons">${reasons}</ul>` : ""}
  `;
}

/** Channels flagged by the verdict, for one vmm. */
export function flaggedChannels(
  cls: Classification | undefined,
  vmm: number,
): Set<number> {
  const out = new Set<number>();
  for (const [v, c] of cls?.flagged_channels ?? []) {
    if (v === vmm) out.add(c);
  }
  return out;
}

/**
 * Per-channel flag table plus calibration summaries from a report set.
 * Flagged rows carry the channel coordinates as data attributes so the
 * fault is visible at a glance.
 */
export function renderReportTables(
  root: HTMLElement,
  reports: ReportSet,
  cls?: Classification,
): void {
  const parts: string[] = [];

  const flags: [number, number, string][] = [];
  for (const [v, c, flag] of cls?.flagged_channels ?? []) {
    flags.push([v, c, flag]);
  }
  if (reports.dead_channel) {
    for (const conf of reports.dead_channel.confirmations) {
      if (!flags.some(([fv, fc]) => fv === conf.vmm && fc === conf.channel)) {
        flags.push([conf.vmm, conf.channel, conf.flag]);
      }
    }
  }
  if (flags.length > 0) {
    flags.sort((a, b) => a[0] - b[0] || a[1] - b[1]);
    const rows = flags
      .map(
        ([v, c, flag]) =>
          `<tr class="flagged" data-vmm="${v}" data-channel="${c}">` +
          `<td>${v}</td><td>${c}</td><td>${flag}</td></tr>`,
      )
      .join("");
    parts.push(`
      <h3>flagged channels</h3>
      <table class="flag-table">
        <thead><tr><th>vmm</th><th>channel</th><th>flag</th></tr></thead>
        <tbody>${rows}</tbody>
      </table>
    `);
  }

  for (const target of ["threshold_cal", "pulser_cal"] as const) {
    const cal = reports[target];
    if (!cal) continue;
    parts.push(`
      <h3>${target.replace("_", " ")}</h3>
      <p class="cal-summary" data-target="${cal.target}">
        slope ${cal.slope_mv_per_count.toFixed(4)} mV/count,
        intercept ${cal.intercept_mv.toFixed(2)} mV,
        max residual ${cal.max_residual_mv.toFixed(3)} mV
      </p>
    `);
  }

  if (reports.gain) {
    const g = reports.gain;
    const bad: string[] = [];
    g.vmms.forEach((entry, v) => {
      entry.status.forEach((st, c) => {
        if (st !== "ok") {
          const m = entry.measured_mv_per_fc[c];
          bad.push(
            `<tr class="flagged" data-vmm="${v}" data-channel="${c}">` +
              `<td>${v}</td><td>${c}</td><td>${st}</td>` +
              `<td>${m == null ? "—" : m.toFixed(3)}</td></tr>`,
          );
        }
      });
    });
    parts.push(`
      <h3>gain (${g.configured_mv_per_fc} mV/fC configured)</h3>
      ${
        bad.length > 0
          ? `<table class="gain-table"><thead><tr><th>vmm</th><th>channel</th>` +
            `<th>status</th><th>measured mV/fC</th></tr></thead>` +
            `<tbody>${bad.join("")}</tbody></table>`
          : `<p class="gain-ok">all channels within tolerance</p>`
      }
    `);
  }

  root.innerHTML = parts.join("\n");
}

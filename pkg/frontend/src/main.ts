/**
 * Dashboard entry point: three panes (live, scans, reports) wired to
 * the control service the page was served from.
 */

import { ApiClient } from "./api.js";
import { renderBaselinePlot, renderCountsCharts, renderHistogram } from "./charts.js";
import { LiveFeed } from "./live.js";
import { flaggedChannels, renderReportTables, ScanPanel } from "./panels.js";
import { LiveCounts, ViewState } from "./state.js";

const api = new ApiClient("");
const state = new ViewState();

function byId<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function renderLive(counts: LiveCounts): void {
  state.liveConnected = feed.connected;
  byId("total-hits").textContent = counts.totalHits.toLocaleString();
  byId("hit-rate").textContent = `${Math.round(counts.rateHz).toLocaleString()} hits/s`;
  byId("run-state").textContent = counts.runState;
  renderCountsCharts(byId("counts-charts"), counts.counts, {
    vmm: state.selectedVmm,
    channel: state.selectedChannel,
  });
  renderHistogram(byId("histogram"), counts.histogram, state.watchKey);
}

function setStale(stale: boolean): void {
  state.liveConnected = !stale;
  byId("stale-badge").classList.toggle("hidden", !stale);
}

const feed = new LiveFeed(
  {
    openStream: (url) => new EventSource(url),
    liveUrl: (ch) => api.liveUrl(ch),
    fetchStatus: (ch) => api.status(ch),
  },
  { onUpdate: renderLive, onStale: setStale },
);

function renderReports(): void {
  byId("reports-hint").classList.toggle(
    "hidden",
    state.activeRun !== null || Object.keys(state.reports).length > 0,
  );
  const cls = state.classification ?? undefined;
  renderReportTables(byId("report-tables"), state.reports, cls);
  const baseline = state.reports.baseline;
  if (baseline) {
    byId("baseline-title").textContent =
      `baseline, vmm ${state.selectedVmm} (mean +/- std per channel)`;
    renderBaselinePlot(
      byId("baseline-plot"),
      baseline,
      state.selectedVmm,
      flaggedChannels(cls, state.selectedVmm),
    );
  }
}

function applySelection(): void {
  const vmm = Number(byId<HTMLSelectElement>("vmm-select").value);
  const ch = Number(byId<HTMLInputElement>("channel-input").value);
  state.select(vmm, ch);
  byId<HTMLInputElement>("channel-input").value = String(state.selectedChannel);
  feed.setChannel(state.watchKey);
  renderLive(feed.counts);
  renderReports();
}

async function boot(): Promise<void> {
  const status = await api.status(state.watchKey);
  state.nVmm = status.n_vmm;
  state.boardType = status.board_type;
  byId("board-type").textContent =
    `${status.board_type} (${status.n_vmm} vmms)`;

  const vmmSelect = byId<HTMLSelectElement>("vmm-select");
  vmmSelect.innerHTML = Array.from(
    { length: status.n_vmm },
    (_, v) => `<option value="${v}">vmm ${v}</option>`,
  ).join("");
  vmmSelect.addEventListener("change", applySelection);
  byId<HTMLInputElement>("channel-input").addEventListener(
    "change",
    applySelection,
  );

  new ScanPanel(byId("scan-pane"), {
    api,
    state,
    onReports: renderReports,
  });

  feed.start(state.watchKey);
}

boot().catch((err) => {
  byId("board-type").textContent = `control service unreachable: ${err}`;
});

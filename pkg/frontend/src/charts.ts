/**
 * DOM chart builders.  Bars are plain divs and the baseline plot is
 * inline SVG, so every rendered value is inspectable as an attribute.
 */

import type { BaselineReport } from "./api.js";
import { HIST_BINS, N_CHANNELS, PDO_FULL_SCALE, pdoCodeToMv } from "./state.js";

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function barRow(parent: HTMLElement, n: number): HTMLElement[] {
  const row = el("div", "bars");
  const bars: HTMLElement[] = [];
  for (let i = 0; i < n; i++) {
    const bar = el("div", "bar");
    bar.dataset.index = String(i);
    bars.push(bar);
    row.appendChild(bar);
  }
  parent.appendChild(row);
  return bars;
}

function setBar(bar: HTMLElement, value: number, max: number): void {
  bar.dataset.count = String(value);
  const pct = max > 0 ? (value / max) * 100 : 0;
  bar.style.height = `${pct.toFixed(2)}%`;
}

/**
 * One 64-bar hit-count chart per vmm.  The chart set is built on first
 * call (or when the vmm count changes) and bars update in place on
 * every later delta.
 */
export function renderCountsCharts(
  root: HTMLElement,
  counts: number[][],
  watch?: { vmm: number; channel: number },
): void {
  if (root.childElementCount !== counts.length) {
    root.textContent = "";
    for (let v = 0; v < counts.length; v++) {
      const chart = el("div", "vmm-chart");
      chart.dataset.vmm = String(v);
      chart.appendChild(el("h3", "chart-title", `VMM ${v}`));
      barRow(chart, N_CHANNELS);
      root.appendChild(chart);
    }
  }
  for (let v = 0; v < counts.length; v++) {
    const row = counts[v];
    const max = Math.max(...row);
    const chart = root.children[v] as HTMLElement;
    const bars = chart.querySelectorAll<HTMLElement>(".bar");
    for (let c = 0; c < N_CHANNELS; c++) {
      const bar = bars[c];
      setBar(bar, row[c], max);
      bar.title = `vmm ${v} ch ${c}: ${row[c]} hits`;
      bar.classList.toggle(
        "watched",
        watch !== undefined && watch.vmm === v && watch.channel === c,
      );
    }
  }
}

const AXIS_BINS = [0, 16, 32, 48, 64];

/**
 * 64-bin amplitude histogram for the watched channel, with the axis
 * labelled both in pdo counts and in mV.
 */
export function renderHistogram(
  root: HTMLElement,
  histogram: number[],
  channelKey: string,
): void {
  let title = root.querySelector<HTMLElement>(".chart-title");
  if (!title) {
    root.textContent = "";
    title = el("h3", "chart-title");
    root.appendChild(title);
    barRow(root, HIST_BINS);
    const axis = el("div", "axis");
    for (const bin of AXIS_BINS) {
      const code = Math.min(bin * 16, PDO_FULL_SCALE);
      const mv = pdoCodeToMv(code);
      axis.appendChild(el("span", "tick", `${code} / ${mv.toFixed(0)} mV`));
    }
    root.appendChild(axis);
  }
  title.textContent = `amplitude, channel ${channelKey} (pdo counts)`;
  const max = Math.max(...histogram);
  const bars = root.querySelectorAll<HTMLElement>(".bar");
  for (let b = 0; b < HIST_BINS; b++) {
    const bar = bars[b];
    setBar(bar, histogram[b], max);
    const lo = b * 16;
    const hi = Math.min(lo + 15, PDO_FULL_SCALE);
    bar.title =
      `pdo ${lo}-${hi} (${pdoCodeToMv(lo).toFixed(0)}-` +
      `${pdoCodeToMv(hi).toFixed(0)} mV): ${histogram[b]}`;
  }
}

const SVG_NS = "http://www.w3.org/2000/svg";
const PLOT_W = 660;
const PLOT_H = 280;
const M_LEFT = 48;
const M_BOTTOM = 28;
const M_TOP = 12;

function svgEl(tag: string, attrs: Record<string, string>): SVGElement {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) {
    node.setAttribute(k, v);
  }
  return node;
}

/**
 * Baseline summary for one vmm: channel number against mean pedestal
 * with a +/- one-std error bar, every value read off the report.
 * Channels in `flagged` are drawn in the fault style.
 */
export function renderBaselinePlot(
  root: HTMLElement,
  report: BaselineReport,
  vmm: number,
  flagged: Set<number>,
): void {
  root.textContent = "";
  const entry = report.vmms[vmm];
  if (!entry) return;

  let lo = Infinity;
  let hi = -Infinity;
  for (let c = 0; c < N_CHANNELS; c++) {
    const mean = entry.mean_mv[c];
    const std = entry.std_mv[c];
    if (mean == null || std == null) continue;
    lo = Math.min(lo, mean - std);
    hi = Math.max(hi, mean + std);
  }
  if (lo > hi) {
    lo = 0;
    hi = 1;
  }
  const pad = Math.max((hi - lo) * 0.1, 1);
  lo -= pad;
  hi += pad;

  const innerW = PLOT_W - M_LEFT - 8;
  const innerH = PLOT_H - M_TOP - M_BOTTOM;
  const x = (c: number) => M_LEFT + ((c + 0.5) / N_CHANNELS) * innerW;
  const y = (mv: number) => M_TOP + ((hi - mv) / (hi - lo)) * innerH;

  const svg = svgEl("svg", {
    viewBox: `0 0 ${PLOT_W} ${PLOT_H}`,
    class: "baseline-plot",
    role: "img",
  }) as SVGSVGElement;

  svg.appendChild(
    svgEl("line", {
      class: "axis-line",
      x1: String(M_LEFT),
      y1: String(M_TOP + innerH),
      x2: String(PLOT_W - 8),
      y2: String(M_TOP + innerH),
    }),
  );
  svg.appendChild(
    svgEl("line", {
      class: "axis-line",
      x1: String(M_LEFT),
      y1: String(M_TOP),
      x2: String(M_LEFT),
      y2: String(M_TOP + innerH),
    }),
  );
  for (const mv of [lo + pad, hi - pad]) {
    const label = svgEl("text", {
      class: "axis-label",
      x: String(M_LEFT - 6),
      y: String(y(mv) + 4),
      "text-anchor": "end",
    });
    label.textContent = `${mv.toFixed(1)} mV`;
    svg.appendChild(label);
  }
  for (const c of [0, 16, 32, 48, 63]) {
    const label = svgEl("text", {
      class: "axis-label",
      x: String(x(c)),
      y: String(PLOT_H - 8),
      "text-anchor": "middle",
    });
    label.textContent = String(c);
    svg.appendChild(label);
  }

  for (let c = 0; c < N_CHANNELS; c++) {
    const mean = entry.mean_mv[c];
    const std = entry.std_mv[c];
    if (mean == null || std == null) continue;
    const cls = flagged.has(c) ? " dead" : "";
    svg.appendChild(
      svgEl("line", {
        class: `error-bar${cls}`,
        "data-channel": String(c),
        x1: String(x(c)),
        y1: String(y(mean - std)),
        x2: String(x(c)),
        y2: String(y(mean + std)),
      }),
    );
    const point = svgEl("circle", {
      class: `point${cls}`,
      "data-channel": String(c),
      "data-mean-mv": String(mean),
      "data-std-mv": String(std),
      cx: String(x(c)),
      cy: String(y(mean)),
      r: "3",
    });
    svg.appendChild(point);
  }
  root.appendChild(svg);

  if (flagged.size > 0) {
    const note = el(
      "p",
      "dead-note",
      `flagged channels: ${[...flagged].sort((a, b) => a - b).join(", ")}`,
    );
    root.appendChild(note);
  }
}

/**
 * Typed client for the control-service HTTP API.
 *
 * Every shape here mirrors a JSON payload the service emits; the
 * dashboard renders these fields directly and never derives statistics
 * of its own.
 */

export interface StatusPayload {
  board_type: string;
  n_vmm: number;
  run_state: string;
  acquiring: boolean;
  total_hits: number;
  rate_hz: number;
  counts: number[][];
  channel: string | null;
  histogram: number[] | null;
}

/** One `data:` event from GET /live. Deltas are since the previous event. */
export interface LiveEvent {
  counts_delta: Record<string, number>;
  histogram_delta: number[] | null;
  total_hits: number;
  rate_hz: number;
  run_state: string;
  acquiring: boolean;
  channel: string | null;
}

export interface BaselineVmmEntry {
  /** null for channels that errored out (see `errored`). */
  mean_mv: (number | null)[];
  std_mv: (number | null)[];
  n_samples: number[];
  errored: number[];
  median_mv: number;
  spread_mv: number;
  outliers: number[];
}

export interface BaselineReport {
  test: string;
  board_id: string;
  board_type: string;
  vmms: BaselineVmmEntry[];
  suggested_threshold_dac: number | null;
}

export interface DacCalReport {
  test: string;
  target: string;
  slope_mv_per_count: number;
  intercept_mv: number;
  max_residual_mv: number;
  points: [number, number][];
  excluded_codes: number[];
  errored_codes: number[];
}

export interface GainVmmEntry {
  /** null for channels with too few fit points (see `status`). */
  measured_mv_per_fc: (number | null)[];
  max_residual_mv: (number | null)[];
  deviation_ratio: (number | null)[];
  status: string[];
}

export interface GainReport {
  test: string;
  gain_sel: number;
  configured_mv_per_fc: number;
  vmms: GainVmmEntry[];
}

export interface DeadVmmEntry {
  counts: number[];
  flags: (string | null)[];
}

export interface DeadConfirmation {
  vmm: number;
  channel: number;
  flag: string;
  confirmed: boolean;
  method: string;
  detail: string;
}

export interface DeadChannelReport {
  test: string;
  expected_per_channel: number;
  vmms: DeadVmmEntry[];
  confirmations: DeadConfirmation[];
}

export interface ReportSet {
  baseline?: BaselineReport;
  threshold_cal?: DacCalReport;
  pulser_cal?: DacCalReport;
  gain?: GainReport;
  dead_channel?: DeadChannelReport;
}

export interface Classification {
  status: string;
  reasons: string[];
  flagged_channels: [number, number, string][];
}

export interface RunStatus {
  run_id: string;
  board_id: string;
  test: string;
  status: string;
  started: number;
  finished: number | null;
  error?: string;
  reports?: ReportSet;
  classification?: Classification;
  report_files?: Record<string, string>;
}

/** Non-2xx response; `body` is the raw response text, shown verbatim. */
export class ApiError extends Error {
  constructor(readonly status: number, readonly body: string) {
    super(`HTTP ${status}: ${body}`);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const res = await fetch(url, init);
  const text = await res.text();
  if (!res.ok) {
    throw new ApiError(res.status, text);
  }
  return JSON.parse(text) as T;
}

function post<T>(url: string, body: unknown): Promise<T> {
  return request<T>(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  status(channel?: string): Promise<StatusPayload> {
    const q = channel ? `?channel=${encodeURIComponent(channel)}` : "";
    return request<StatusPayload>(`${this.base}/status${q}`);
  }

  liveUrl(channel: string): string {
    return `${this.base}/live?channel=${encodeURIComponent(channel)}`;
  }

  applyConfig(
    vmm: number | "all",
    fields: Record<string, number>,
  ): Promise<{ applied: boolean; crc: Record<string, number> }> {
    return post(`${this.base}/config`, { vmm, fields });
  }

  control(
    action: string,
    extra: Record<string, unknown> = {},
  ): Promise<unknown> {
    return post(`${this.base}/control`, { action, ...extra });
  }

  launchRun(
    test: string,
    params: Record<string, number>,
  ): Promise<{ run_id: string }> {
    return post(`${this.base}/runs`, { test, params });
  }

  run(runId: string): Promise<RunStatus> {
    return request<RunStatus>(`${this.base}/runs/${runId}`);
  }

  boardReports(boardId: string): Promise<RunStatus[]> {
    return request<RunStatus[]>(
      `${this.base}/boards/${encodeURIComponent(boardId)}/reports`,
    );
  }
}

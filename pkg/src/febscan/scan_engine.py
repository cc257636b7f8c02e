"""The five production tests: baseline scan, threshold and pulser DAC
calibrations, gain test, dead-channel test, plus the pass/fail
classification over their reports.

All tests drive the board through a BoardClient and leave the board in
its pre-scan state (configuration rewritten, acquisition stopped) on both
success and error paths.  There is no configuration readback in the
protocol, so "pre-scan state" is the base configuration the engine was
given, and the restoring write appears in the frame transcript where it
can be audited.

Analysis conventions, fixed across all tests:
  monitor mV   v = code / 4095 * 1000
  pdo mV       v = code / 1023 * 1000
  std          sample standard deviation, n-1 denominator
No auto-ranging.  Railed monitor points (every sample at code 0 or 4095)
carry no slope information and are excluded from calibration fits but
still reported.
"""

from __future__ import annotations

import datetime
import json
import logging
import math
import os
import queue
import threading
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .client import BoardClient, BoardTimeoutError, BoardErrorResponse
from .config_codec import (
    GAIN_TABLE_MV_PER_FC,
    MONITOR_MUX_PULSER,
    MONITOR_MUX_THRESHOLD,
    N_CHANNELS,
    VmmConfig,
)
from .emulator import BoardDescriptor
from .device_model import PDO_FULL_SCALE, XADC_FULL_SCALE, ADC_RANGE_MV

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Paired with the spread / residual / deviation limits in classify_board.
BASELINE_SPREAD_LIMIT_MV = 20.0
DAC_RESIDUAL_LIMIT_MV = 2.0
GAIN_DEVIATION_LIMIT = 0.10

DEFAULT_PULSER_FC_PER_COUNT = 0.3
DEFAULT_GAIN_SEL = 2
GAIN_PULSES_PER_CHARGE = 32
DEAD_STIMULUS_CHARGE_FC = 40.0
NOISY_PROBE_CYCLES = 64
THRESHOLD_MARGIN_MV = 10.0


class ScanError(Exception):
    pass


class ScanInProgressError(ScanError):
    pass


class ScanFailedError(ScanError):
    """The scan could not produce a usable report at all."""


def utcnow() -> float:
    return time.time()


def iso(ts: float) -> str:
    return datetime.datetime.fromtimestamp(ts, datetime.timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%S.%fZ")


def wire_floats(xs: list) -> list:
    """JSON has no NaN/Infinity: non-finite entries (channels with no
    measurement; the errored/status arrays say why) serialize as null."""
    return [x if math.isfinite(x) else None for x in xs]


def monitor_code_to_mv(codes) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) / XADC_FULL_SCALE * ADC_RANGE_MV


def pdo_code_to_mv(codes) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) / PDO_FULL_SCALE * ADC_RANGE_MV


# ---------------------------------------------------------------------------
# parameters

@dataclass
class ScanParams:
    baseline_samples: int = 100
    dac_sweep: tuple = tuple(list(range(0, 1023, 64)) + [1023])
    samples_per_point: int = 16
    gain_charges_fc: tuple = (10.0, 20.0, 40.0, 80.0)
    dead_pulses: int = 1000
    dead_ratio: float = 0.5
    timeout_ms: int = 500
    retries: int = 3

    def __post_init__(self):
        if self.baseline_samples < 2:
            raise ValueError("baseline_samples must be >= 2")
        sweep = tuple(int(c) for c in self.dac_sweep)
        if len(sweep) < 2 or any(b <= a for a, b in zip(sweep, sweep[1:])):
            raise ValueError("dac_sweep must be strictly increasing with >= 2 codes")
        if sweep[0] < 0 or sweep[-1] > 1023:
            raise ValueError("dac_sweep codes must lie in 0..1023")
        object.__setattr__(self, "dac_sweep", sweep)
        object.__setattr__(self, "gain_charges_fc", tuple(float(q) for q in self.gain_charges_fc))
        if not self.gain_charges_fc or min(self.gain_charges_fc) <= 0:
            raise ValueError("gain_charges_fc must be positive")
        if not 0 < self.dead_ratio < 1:
            raise ValueError("dead_ratio must be in (0,1)")
        if self.dead_pulses < 1:
            raise ValueError("dead_pulses must be >= 1")
        if self.samples_per_point < 1:
            raise ValueError("samples_per_point must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dac_sweep"] = list(self.dac_sweep)
        d["gain_charges_fc"] = list(self.gain_charges_fc)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScanParams":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown scan parameter(s): {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# least squares

@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    residuals: tuple

    @property
    def max_abs_residual(self) -> float:
        return max(abs(r) for r in self.residuals) if self.residuals else 0.0


def linear_fit(points) -> FitResult:
    """Ordinary least squares y = slope*x + intercept.

    Mean-centered accumulation keeps the normal equations well conditioned
    for DAC-code abscissas.
    """
    pts = list(points)
    if len(pts) < 2:
        raise ValueError("linear_fit needs at least 2 points")
    x = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.array([p[1] for p in pts], dtype=np.float64)
    xm = x.mean()
    ym = y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise ValueError("linear_fit abscissas are degenerate (all x equal)")
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    intercept = ym - slope * xm
    residuals = y - (slope * x + intercept)
    return FitResult(slope, float(intercept), tuple(float(r) for r in residuals))


# ---------------------------------------------------------------------------
# reports

@dataclass
class VmmBaseline:
    mean_mv: list
    std_mv: list
    n_samples: list
    errored: list
    median_mv: float = 0.0
    spread_mv: float = 0.0
    outliers: list = field(default_factory=list)


@dataclass
class BaselineReport:
    test_name = "baseline"
    board_id: str
    board_type: str
    params: ScanParams
    started: float
    finished: float = 0.0
    vmms: list = field(default_factory=list)
    suggested_threshold_dac: int | None = None
    transcript: list = field(default_factory=list)

    def channel_mean(self, vmm: int, channel: int) -> float:
        return self.vmms[vmm].mean_mv[channel]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "test": self.test_name,
            "board_id": self.board_id,
            "board_type": self.board_type,
            "params": self.params.to_dict(),
            "started": self.started,
            "started_iso": iso(self.started),
            "finished": self.finished,
            "finished_iso": iso(self.finished),
            "suggested_threshold_dac": self.suggested_threshold_dac,
            "vmms": [
                {
                    "mean_mv": wire_floats(v.mean_mv),
                    "std_mv": wire_floats(v.std_mv),
                    "n_samples": v.n_samples,
                    "errored": v.errored,
                    "median_mv": v.median_mv,
                    "spread_mv": v.spread_mv,
                    "outliers": v.outliers,
                }
                for v in self.vmms
            ],
        }


@dataclass
class DacCalibration:
    test_name = "dac_calibration"
    board_id: str
    board_type: str
    target: str  # "threshold" or "pulser"
    params: ScanParams
    started: float
    finished: float = 0.0
    slope_mv_per_count: float = 0.0
    intercept_mv: float = 0.0
    max_residual_mv: float = 0.0
    points: list = field(default_factory=list)  # (code, mean_mv)
    excluded_codes: list = field(default_factory=list)
    errored_codes: list = field(default_factory=list)
    transcript: list = field(default_factory=list)

    def dac_for_voltage(self, v_mv: float) -> int:
        """Smallest code whose fitted voltage is >= v_mv, clamped to range."""
        if self.slope_mv_per_count <= 0:
            raise ScanError("calibration slope is not positive")
        code = math.ceil((v_mv - self.intercept_mv) / self.slope_mv_per_count)
        return min(max(code, 0), 1023)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "test": self.test_name,
            "target": self.target,
            "board_id": self.board_id,
            "board_type": self.board_type,
            "params": self.params.to_dict(),
            "started": self.started,
            "started_iso": iso(self.started),
            "finished": self.finished,
            "finished_iso": iso(self.finished),
            "slope_mv_per_count": self.slope_mv_per_count,
            "intercept_mv": self.intercept_mv,
            "max_residual_mv": self.max_residual_mv,
            "points": [[c, m] for c, m in self.points],
            "excluded_codes": self.excluded_codes,
            "errored_codes": self.errored_codes,
        }


@dataclass
class VmmGain:
    measured_mv_per_fc: list
    max_residual_mv: list
    deviation_ratio: list
    status: list  # "ok" | "fail" | "dead_in_gain_test"


@dataclass
class GainReport:
    test_name = "gain"
    board_id: str
    board_type: str
    gain_sel: int
    configured_mv_per_fc: float
    params: ScanParams
    started: float
    finished: float = 0.0
    vmms: list = field(default_factory=list)
    transcript: list = field(default_factory=list)

    def failed_channels(self) -> list:
        out = []
        for v, g in enumerate(self.vmms):
            for c in range(N_CHANNELS):
                if g.status[c] != "ok":
                    out.append((v, c, g.status[c]))
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "test": self.test_name,
            "board_id": self.board_id,
            "board_type": self.board_type,
            "gain_sel": self.gain_sel,
            "configured_mv_per_fc": self.configured_mv_per_fc,
            "params": self.params.to_dict(),
            "started": self.started,
            "started_iso": iso(self.started),
            "finished": self.finished,
            "finished_iso": iso(self.finished),
            "vmms": [
                {
                    "measured_mv_per_fc": wire_floats(g.measured_mv_per_fc),
                    "max_residual_mv": wire_floats(g.max_residual_mv),
                    "deviation_ratio": wire_floats(g.deviation_ratio),
                    "status": g.status,
                }
                for g in self.vmms
            ],
        }


@dataclass
class Confirmation:
    vmm: int
    channel: int
    flag: str
    confirmed: bool
    method: str
    detail: str


@dataclass
class VmmDead:
    counts: list
    flags: list  # "ok" | "dead" | "noisy"


@dataclass
class DeadChannelReport:
    test_name = "dead_channel"
    board_id: str
    board_type: str
    expected_per_channel: int
    params: ScanParams
    started: float
    finished: float = 0.0
    vmms: list = field(default_factory=list)
    confirmations: list = field(default_factory=list)
    transcript: list = field(default_factory=list)

    def confirmed_channels(self) -> list:
        return [(c.vmm, c.channel, c.flag) for c in self.confirmations if c.confirmed]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "test": self.test_name,
            "board_id": self.board_id,
            "board_type": self.board_type,
            "expected_per_channel": self.expected_per_channel,
            "params": self.params.to_dict(),
            "started": self.started,
            "started_iso": iso(self.started),
            "finished": self.finished,
            "finished_iso": iso(self.finished),
            "vmms": [{"counts": v.counts, "flags": v.flags} for v in self.vmms],
            "confirmations": [asdict(c) for c in self.confirmations],
        }


@dataclass
class Classification:
    status: str  # "pass" | "fail" | "incomplete"
    reasons: list = field(default_factory=list)
    flagged_channels: list = field(default_factory=list)  # (vmm, channel, kind)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "reasons": self.reasons,
            "flagged_channels": [list(t) for t in self.flagged_channels],
        }


REPORT_TESTS = ("baseline", "threshold_cal", "pulser_cal", "gain", "dead_channel")


def classify_board(reports: dict) -> Classification:
    """Combine the five test reports into a pass/fail verdict.

    `reports` keys: baseline, threshold_cal, pulser_cal, gain, dead_channel.
    """
    missing = [t for t in REPORT_TESTS if reports.get(t) is None]
    if missing:
        return Classification("incomplete", [f"missing report: {t}" for t in missing])

    reasons = []
    flagged = []

    for v, vb in enumerate(reports["baseline"].vmms):
        if vb.spread_mv > BASELINE_SPREAD_LIMIT_MV:
            reasons.append(
                f"vmm {v} baseline spread {vb.spread_mv:.1f} mV exceeds "
                f"{BASELINE_SPREAD_LIMIT_MV:.0f} mV")

    for key in ("threshold_cal", "pulser_cal"):
        cal = reports[key]
        if cal.max_residual_mv > DAC_RESIDUAL_LIMIT_MV:
            reasons.append(
                f"{cal.target} DAC fit residual {cal.max_residual_mv:.2f} mV exceeds "
                f"{DAC_RESIDUAL_LIMIT_MV:.0f} mV")

    for v, c, status in reports["gain"].failed_channels():
        flagged.append((v, c, f"gain:{status}"))
        reasons.append(f"vmm {v} channel {c} gain {status}")

    for v, c, flag in reports["dead_channel"].confirmed_channels():
        flagged.append((v, c, flag))
        reasons.append(f"vmm {v} channel {c} confirmed {flag}")

    return Classification("fail" if reasons else "pass", reasons, flagged)


# ---------------------------------------------------------------------------
# engine

def _base_config() -> VmmConfig:
    return VmmConfig.default()


class ScanEngine:
    """Runs the production tests against one board endpoint.

    One scan at a time per engine; a second call while one is active gets
    ScanInProgressError rather than queueing, mirroring the one-board,
    one-operator bench setup.
    """

    def __init__(self, client: BoardClient, board: BoardDescriptor,
                 params: ScanParams | None = None, board_id: str = "board",
                 base_config: VmmConfig | None = None):
        self.client = client
        self.board = board
        self.params = params or ScanParams()
        self.board_id = board_id
        self.base_config = base_config or _base_config()
        self._lock = threading.Lock()
        client.timeout_ms = self.params.timeout_ms
        client.retries = self.params.retries

    # -- scan framing ------------------------------------------------------

    def _begin(self) -> int:
        if not self._lock.acquire(blocking=False):
            raise ScanInProgressError("another scan is active on this endpoint")
        # Transcripts are part of the report contract, whatever the client
        # was doing before the scan.
        self._prior_record = self.client.record
        self.client.record = True
        return len(self.client.transcript)

    def _finish(self, mark: int) -> list:
        """Restore board state and slice out this scan's transcript."""
        try:
            self.client.run_stop()
            for v in range(self.board.n_vmm):
                self.client.write_config(v, self.base_config)
        except Exception:
            log.exception("board state restore failed")
        finally:
            transcript = self.client.transcript[mark:]
            self.client.record = self._prior_record
            self._lock.release()
        return transcript

    # -- baseline ----------------------------------------------------------

    def run_baseline_scan(self) -> BaselineReport:
        """Per-channel pedestal mean/std via the monitor ADC."""
        p = self.params
        mark = self._begin()
        report = BaselineReport(self.board_id, self.board.board_type, p, utcnow())
        try:
            for v in range(self.board.n_vmm):
                means = [float("nan")] * N_CHANNELS
                stds = [float("nan")] * N_CHANNELS
                counts = [0] * N_CHANNELS
                errored = [False] * N_CHANNELS
                for c in range(N_CHANNELS):
                    cfg = self.base_config.with_global(
                        monitor_mux=c, monitor_enable=1, acq_enable=0)
                    try:
                        self.client.write_config(v, cfg)
                        codes = self.client.xadc(v, p.baseline_samples)
                    except BoardTimeoutError:
                        errored[c] = True
                        log.warning("baseline vmm %d channel %d timed out", v, c)
                        continue
                    # Stats in the code domain, scaled once: a run of
                    # identical samples then yields the exact quantized
                    # pedestal and a width of exactly zero.
                    means[c] = float(monitor_code_to_mv(np.mean(codes)))
                    stds[c] = float(monitor_code_to_mv(np.std(codes, ddof=1)))
                    counts[c] = len(codes)
                vb = VmmBaseline(means, stds, counts, errored)
                good = [c for c in range(N_CHANNELS) if not errored[c]]
                if good:
                    gm = np.array([means[c] for c in good])
                    gs = np.array([stds[c] for c in good])
                    vb.median_mv = float(np.median(gm))
                    vb.spread_mv = float(gm.max() - gm.min())
                    med_std = float(np.median(gs))
                    vb.outliers = [
                        c for c in good
                        if abs(means[c] - vb.median_mv) > 5.0 * med_std
                    ]
                report.vmms.append(vb)
            if all(all(vb.errored) for vb in report.vmms):
                raise ScanFailedError("baseline scan: every channel errored")
            report.finished = utcnow()
            return report
        finally:
            report.transcript = self._finish(mark)

    # -- DAC calibrations --------------------------------------------------

    def run_dac_calibration(self, target: str) -> DacCalibration:
        """Sweep the threshold or pulser DAC against the monitor ADC."""
        if target not in ("threshold", "pulser"):
            raise ValueError("target must be 'threshold' or 'pulser'")
        p = self.params
        mux = MONITOR_MUX_THRESHOLD if target == "threshold" else MONITOR_MUX_PULSER
        mark = self._begin()
        cal = DacCalibration(self.board_id, self.board.board_type, target, p, utcnow())
        try:
            for code in p.dac_sweep:
                dac_field = {"threshold_dac" if target == "threshold" else "pulser_dac": code}
                cfg = self.base_config.with_global(
                    monitor_mux=mux, monitor_enable=1, acq_enable=0, **dac_field)
                try:
                    self.client.write_config(0, cfg)
                    codes = self.client.xadc(0, p.samples_per_point)
                except BoardTimeoutError:
                    cal.errored_codes.append(code)
                    log.warning("%s calibration point %d timed out", target, code)
                    continue
                mean_mv = float(monitor_code_to_mv(np.mean(codes)))
                cal.points.append((code, mean_mv))
                railed = (codes == XADC_FULL_SCALE).all() or (codes == 0).all()
                if railed:
                    cal.excluded_codes.append(code)
            usable = [(c, m) for c, m in cal.points if c not in cal.excluded_codes]
            if len(usable) < 2:
                # Sparse sweeps may leave nothing but railed points; a fit
                # through what was measured beats no calibration at all.
                usable = cal.points
                cal.excluded_codes = []
            if len(usable) < 2:
                raise ScanFailedError(f"{target} calibration: fewer than 2 usable points")
            fit = linear_fit(usable)
            cal.slope_mv_per_count = fit.slope
            cal.intercept_mv = fit.intercept
            cal.max_residual_mv = fit.max_abs_residual
            cal.finished = utcnow()
            return cal
        finally:
            cal.transcript = self._finish(mark)

    # -- gain --------------------------------------------------------------

    def _probe_channel_config(self, vmm: int, channel: int, threshold_dac: int,
                              pulser_dac: int, gain_sel: int) -> VmmConfig:
        cfg = self.base_config.with_global(
            gain_sel=gain_sel, threshold_dac=threshold_dac,
            pulser_dac=pulser_dac, acq_enable=1, monitor_enable=0, monitor_mux=0)
        for c in range(N_CHANNELS):
            cfg = cfg.with_channel(c, mask=0, test_pulse_enable=1 if c == channel else 0, trim=0)
        return cfg

    def _quiet_config(self, threshold_dac: int) -> VmmConfig:
        cfg = self.base_config.with_global(
            threshold_dac=threshold_dac, acq_enable=1, monitor_enable=0, monitor_mux=0)
        for c in range(N_CHANNELS):
            cfg = cfg.with_channel(c, mask=0, test_pulse_enable=0, trim=0)
        return cfg

    def _channel_hits(self, hits: np.ndarray, vmm: int, channel: int) -> np.ndarray:
        # Stuck channels elsewhere on the board keep emitting during probes.
        return hits[(hits["vmm"] == vmm) & (hits["channel"] == channel)]

    def _probe_threshold_dac(self, baseline: BaselineReport,
                             threshold_cal: DacCalibration,
                             vmm: int, channel: int, gain_mv_per_fc: float,
                             min_charge_fc: float) -> int:
        """Threshold just above one channel's pedestal, below its smallest
        probe amplitude."""
        margin = min(THRESHOLD_MARGIN_MV, 0.4 * gain_mv_per_fc * min_charge_fc)
        target = baseline.channel_mean(vmm, channel) + margin
        return threshold_cal.dac_for_voltage(target)

    def run_gain_test(self, baseline: BaselineReport,
                      pulser_cal: DacCalibration,
                      threshold_cal: DacCalibration,
                      gain_sel: int = DEFAULT_GAIN_SEL) -> GainReport:
        """Measure mV/fC per channel from internal pulser amplitude fits.

        One channel is pulsed at a time so a response is unambiguously its
        own.  Injected charge for the fit abscissa is taken from the pulser
        calibration applied to the DAC code actually programmed.
        """
        p = self.params
        configured = GAIN_TABLE_MV_PER_FC[gain_sel]
        fc_per_count = pulser_cal.slope_mv_per_count
        if fc_per_count <= 0:
            raise ScanFailedError("pulser calibration slope is not positive")
        mark = self._begin()
        report = GainReport(self.board_id, self.board.board_type, gain_sel,
                            configured, p, utcnow())
        try:
            self.client.run_start()
            for v in range(self.board.n_vmm):
                measured = [float("nan")] * N_CHANNELS
                residual = [float("nan")] * N_CHANNELS
                deviation = [float("nan")] * N_CHANNELS
                status = ["ok"] * N_CHANNELS
                for c in range(N_CHANNELS):
                    thr_dac = self._probe_threshold_dac(
                        baseline, threshold_cal, v, c, configured,
                        min(p.gain_charges_fc))
                    points = []
                    saw_hits_at_max = False
                    for q in sorted(p.gain_charges_fc):
                        pdac = min(max(round(q / fc_per_count), 0), 1023)
                        cfg = self._probe_channel_config(v, c, thr_dac, pdac, gain_sel)
                        self.client.write_config(v, cfg)
                        hits = self.client.pulse(GAIN_PULSES_PER_CHARGE)
                        own = self._channel_hits(hits, v, c)
                        if own.size == 0:
                            continue
                        if q == max(p.gain_charges_fc):
                            saw_hits_at_max = True
                        amp = float(pdo_code_to_mv(np.mean(own["pdo"])))
                        amp -= baseline.channel_mean(v, c)
                        points.append((fc_per_count * pdac, amp))
                    if not saw_hits_at_max or len(points) < 2:
                        status[c] = "dead_in_gain_test"
                        continue
                    fit = linear_fit(points)
                    measured[c] = fit.slope
                    residual[c] = fit.max_abs_residual
                    deviation[c] = abs(fit.slope - configured) / configured
                    if deviation[c] > GAIN_DEVIATION_LIMIT:
                        status[c] = "fail"
                report.vmms.append(VmmGain(measured, residual, deviation, status))
            report.finished = utcnow()
            return report
        finally:
            report.transcript = self._finish(mark)

    # -- dead channels -----------------------------------------------------

    def _per_vmm_threshold_dacs(self, baseline: BaselineReport,
                                threshold_cal: DacCalibration) -> list:
        dacs = []
        for vb in baseline.vmms:
            stds = [s for s, e in zip(vb.std_mv, vb.errored) if not e]
            med_std = float(np.median(stds)) if stds else 0.0
            target = vb.median_mv + 5.0 * med_std + THRESHOLD_MARGIN_MV
            dacs.append(threshold_cal.dac_for_voltage(target))
        return dacs

    def run_dead_channel_test(self, baseline: BaselineReport,
                              threshold_cal: DacCalibration,
                              gain_sel: int = DEFAULT_GAIN_SEL) -> DeadChannelReport:
        """Stimulate every channel with the signal board and tally hits.

        Counting runs in a consumer thread fed by a bounded queue so the
        receive path never stalls behind analysis.  Flagged channels are
        then cross-checked one at a time: a dead candidate must also fail
        an internal-pulse probe, a noisy candidate must also produce hits
        with all pulsing disabled.
        """
        p = self.params
        mark = self._begin()
        report = DeadChannelReport(self.board_id, self.board.board_type,
                                   p.dead_pulses, p, utcnow())
        try:
            thr_dacs = self._per_vmm_threshold_dacs(baseline, threshold_cal)
            gain = GAIN_TABLE_MV_PER_FC[gain_sel]
            # Amplitude far above every threshold so only real faults lose hits.
            swing_mv = gain * DEAD_STIMULUS_CHARGE_FC
            if swing_mv < 60.0:
                raise ScanFailedError("stimulus amplitude too small for gain setting")
            amp_counts = min(max(round(DEAD_STIMULUS_CHARGE_FC / DEFAULT_PULSER_FC_PER_COUNT), 1), 65535)

            for v in range(self.board.n_vmm):
                cfg = self._quiet_config(thr_dacs[v]).with_global(gain_sel=gain_sel)
                for c in range(N_CHANNELS):
                    cfg = cfg.with_channel(c, test_pulse_enable=1)
                self.client.write_config(v, cfg)

            counts = np.zeros(self.board.n_channels, dtype=np.int64)
            hit_queue: queue.Queue = queue.Queue(maxsize=64)

            def consume():
                while True:
                    batch = hit_queue.get()
                    if batch is None:
                        return
                    flat = batch["vmm"].astype(np.int64) * N_CHANNELS + batch["channel"]
                    np.add.at(counts, flat, 1)

            consumer = threading.Thread(target=consume, name="hit-counter")
            consumer.start()
            try:
                self.client.run_start()
                self.client.sigboard_set(2, amp_counts, 0)
                # Chunked triggers keep each response burst within socket buffers.
                chunk = max(1, 3500 // self.board.n_channels)
                remaining = p.dead_pulses
                while remaining > 0:
                    n = min(chunk, remaining)
                    self.client.pulse(n, on_hits=hit_queue.put)
                    remaining -= n
            finally:
                hit_queue.put(None)
                consumer.join()
                self.client.sigboard_off()

            expected = p.dead_pulses
            flags_all = []
            for v in range(self.board.n_vmm):
                sl = counts[v * N_CHANNELS:(v + 1) * N_CHANNELS]
                flags = []
                for c in range(N_CHANNELS):
                    n = int(sl[c])
                    if n < p.dead_ratio * expected:
                        flags.append("dead")
                    elif n > 2 * expected:
                        flags.append("noisy")
                    else:
                        flags.append("ok")
                report.vmms.append(VmmDead([int(x) for x in sl], flags))
                flags_all.extend((v, c, f) for c, f in enumerate(flags) if f != "ok")

            if flags_all:
                # Quiet the whole board first so a single-channel probe is
                # not drowned by the stimulus config still latched elsewhere.
                for v in range(self.board.n_vmm):
                    self.client.write_config(
                        v, self._quiet_config(thr_dacs[v]).with_global(gain_sel=gain_sel))
            for v, c, flag in flags_all:
                if flag == "dead":
                    confirmed, detail = self._confirm_dead(v, c, thr_dacs[v], gain_sel)
                    method = "internal-pulse probe"
                else:
                    confirmed, detail = self._confirm_noisy(v, c)
                    method = "pulser-disabled probe"
                report.confirmations.append(
                    Confirmation(v, c, flag, confirmed, method, detail))

            report.finished = utcnow()
            return report
        finally:
            report.transcript = self._finish(mark)

    def _confirm_dead(self, vmm: int, channel: int, thr_dac: int,
                      gain_sel: int) -> tuple:
        """Dead is confirmed when a direct internal-pulse probe also yields
        no hits on the channel."""
        pdac = min(max(round(DEAD_STIMULUS_CHARGE_FC / DEFAULT_PULSER_FC_PER_COUNT), 0), 1023)
        cfg = self._probe_channel_config(vmm, channel, thr_dac, pdac, gain_sel)
        self.client.write_config(vmm, cfg)
        hits = self.client.pulse(GAIN_PULSES_PER_CHARGE)
        own = self._channel_hits(hits, vmm, channel)
        cfg_off = self._quiet_config(thr_dac).with_global(gain_sel=gain_sel)
        self.client.write_config(vmm, cfg_off)
        if own.size == 0:
            return True, f"0 hits from {GAIN_PULSES_PER_CHARGE} direct pulses"
        return False, f"{own.size} hits from {GAIN_PULSES_PER_CHARGE} direct pulses"

    def _confirm_noisy(self, vmm: int, channel: int) -> tuple:
        """Noisy is confirmed when hits keep coming with pulsing disabled.

        Assumes the board is already in the quiet configuration.
        """
        hits = self.client.pulse(NOISY_PROBE_CYCLES)
        own = self._channel_hits(hits, vmm, channel)
        if own.size > 0:
            return True, f"{own.size} hits in {NOISY_PROBE_CYCLES} cycles with pulser off"
        return False, f"no hits in {NOISY_PROBE_CYCLES} cycles with pulser off"

    # -- orchestration -----------------------------------------------------

    def run_all(self, gain_sel: int = DEFAULT_GAIN_SEL) -> tuple:
        """All five tests in dependency order; returns (reports, verdict)."""
        reports = {}
        reports["baseline"] = self.run_baseline_scan()
        reports["threshold_cal"] = self.run_dac_calibration("threshold")
        reports["pulser_cal"] = self.run_dac_calibration("pulser")

        max_mean = max(
            m for vb in reports["baseline"].vmms
            for m, e in zip(vb.mean_mv, vb.errored) if not e
        )
        reports["baseline"].suggested_threshold_dac = (
            reports["threshold_cal"].dac_for_voltage(max_mean + THRESHOLD_MARGIN_MV))

        reports["gain"] = self.run_gain_test(
            reports["baseline"], reports["pulser_cal"], reports["threshold_cal"], gain_sel)
        reports["dead_channel"] = self.run_dead_channel_test(
            reports["baseline"], reports["threshold_cal"], gain_sel)
        return reports, classify_board(reports)


# ---------------------------------------------------------------------------
# report files

def report_filename(board_id: str, test: str, ts: float) -> str:
    stamp = datetime.datetime.fromtimestamp(ts, datetime.timezone.utc).strftime(
        "%Y%m%dT%H%M%S")
    return f"{board_id}_{test}_{stamp}.json"


def save_report(report, data_dir: str, test: str | None = None) -> str:
    """Write one report plus its frame transcript; returns the JSON path."""
    os.makedirs(data_dir, exist_ok=True)
    test = test or report.test_name
    base = report_filename(report.board_id, test, report.started)
    path = os.path.join(data_dir, base)
    n = 1
    while os.path.exists(path):
        path = os.path.join(data_dir, base[:-5] + f"-{n}.json")
        n += 1
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=1)
        f.write("\n")
    transcript = getattr(report, "transcript", None)
    if transcript:
        with open(path[:-5] + "_frames.hex", "w", encoding="utf-8") as f:
            for direction, hexstr in transcript:
                f.write(f"{direction} {hexstr}\n")
    return path

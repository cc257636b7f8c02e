"""Behavioral model of one VMM3 chip.

64 analog channels, each with a quiescent baseline, Gaussian noise, a
charge-to-voltage gain selected by the configuration, a global threshold
DAC with per-channel trim, a 10-bit peak ADC, an internal test pulser and
an analog monitor tap sampled by a 12-bit ADC.  Faults can be injected per
channel to exercise the production tests.

Fixed quantization contract: the peak ADC spans 0-1000 mV over 10 bits,
the monitor ADC spans 0-1000 mV over 12 bits, and codes are computed as
floor(v * full_scale / 1000 + 0.5) clamped into range (round half up).

Randomness contract
-------------------
A model draws noise only from the generator handed to it, which a board
emulator shares across its chips, so a seed plus a command sequence fixes
every output bit.  The draw order is part of the model's contract so that
replay oracles can reproduce the stream without touching the model:

* ``sample_monitor(n)`` with the mux on a channel consumes one
  ``standard_normal(n)`` call; the threshold, pulser and reference taps
  consume nothing.
* ``pulse_cycle`` consumes one ``standard_normal(64)`` call and channel c
  uses entry c, whatever the stimulus pattern, masks or faults.
* ``inject_pulse`` (the single-channel op) consumes one
  ``standard_normal()`` scalar draw.
* ``tick`` (stuck-channel sampling) consumes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config_codec import (
    GAIN_TABLE_MV_PER_FC,
    MONITOR_MUX_PULSER,
    MONITOR_MUX_REFERENCE,
    MONITOR_MUX_THRESHOLD,
    N_CHANNELS,
    VmmConfig,
)

PDO_FULL_SCALE = 1023
XADC_FULL_SCALE = 4095
ADC_RANGE_MV = 1000.0
BCID_WRAP = 4096
REFERENCE_MV = 500.0

FLAG_INTERNAL_PULSE = 0x0001

FAULT_NONE = "none"
FAULT_DEAD = "dead"
FAULT_STUCK = "stuck"
FAULT_LOW_GAIN = "low_gain"
FAULT_HIGH_PEDESTAL = "high_pedestal"

_FAULT_CODES = {
    FAULT_NONE: 0,
    FAULT_DEAD: 1,
    FAULT_STUCK: 2,
    FAULT_LOW_GAIN: 3,
    FAULT_HIGH_PEDESTAL: 4,
}

# Wire/structured layout of one hit, big-endian, 8 bytes.
HIT_DTYPE = np.dtype(
    [("vmm", ">u1"), ("channel", ">u1"), ("pdo", ">u2"), ("bcid", ">u2"), ("flags", ">u2")]
)


class DeviceError(ValueError):
    """Invalid request against the device model."""


class MonitorDisabledError(DeviceError):
    pass


class ReservedMuxError(DeviceError):
    pass


@dataclass(frozen=True)
class Fault:
    """Channel fault: kind plus its one parameter, if any.

    low_gain carries a factor in (0, 1) multiplying the charge gain;
    high_pedestal carries an offset in mV added to the observed baseline.
    """

    kind: str = FAULT_NONE
    factor: float = 1.0
    offset_mv: float = 0.0

    def __post_init__(self):
        if self.kind not in _FAULT_CODES:
            raise DeviceError(f"unknown fault kind {self.kind!r}")
        if self.kind == FAULT_LOW_GAIN and not 0.0 < self.factor < 1.0:
            raise DeviceError(f"low_gain factor must be in (0,1), got {self.factor}")

    @classmethod
    def parse(cls, text: str) -> "Fault":
        """Parse `dead`, `stuck`, `low_gain:<f>`, `high_pedestal:<mv>` or `none`."""
        kind, _, arg = text.strip().partition(":")
        if kind in (FAULT_NONE, FAULT_DEAD, FAULT_STUCK):
            if arg:
                raise DeviceError(f"fault {kind} takes no parameter")
            return cls(kind)
        if kind == FAULT_LOW_GAIN:
            return cls(kind, factor=float(arg))
        if kind == FAULT_HIGH_PEDESTAL:
            return cls(kind, offset_mv=float(arg))
        raise DeviceError(f"unknown fault kind {kind!r}")

    def __str__(self) -> str:
        if self.kind == FAULT_LOW_GAIN:
            return f"low_gain:{self.factor}"
        if self.kind == FAULT_HIGH_PEDESTAL:
            return f"high_pedestal:{self.offset_mv}"
        return self.kind


@dataclass(frozen=True)
class ChannelTruth:
    """Ground truth for one channel, readable by tests but owned by the model."""

    baseline_mv: float
    noise_sigma_mv: float = 2.0
    fault: Fault = Fault()

    def __post_init__(self):
        if not 0.0 <= self.baseline_mv <= 1000.0:
            raise DeviceError(f"baseline_mv {self.baseline_mv} outside 0..1000")
        if self.noise_sigma_mv < 0.0:
            raise DeviceError(f"noise_sigma_mv {self.noise_sigma_mv} must be >= 0")


@dataclass(frozen=True)
class VmmTruth:
    channels: tuple[ChannelTruth, ...]
    threshold_slope_mv_per_count: float = 0.98
    threshold_offset_mv: float = 50.0
    pulser_fc_per_count: float = 0.3
    trim_step_mv: float = 1.0

    def __post_init__(self):
        if len(self.channels) != N_CHANNELS:
            raise DeviceError(f"VmmTruth needs {N_CHANNELS} channels")
        if self.threshold_slope_mv_per_count <= 0 or self.pulser_fc_per_count <= 0:
            raise DeviceError("transfer slopes must be > 0")


@dataclass(frozen=True)
class HitRecord:
    vmm: int
    channel: int
    pdo: int
    bcid: int
    flags: int = 0


def quantize(v_mv, full_scale: int):
    """ADC transfer: floor(v*fs/1000 + 0.5) clamped to [0, fs].

    Accepts scalars or numpy arrays; arrays come back as int32.
    """
    code = np.floor(np.asarray(v_mv, dtype=np.float64) * full_scale / ADC_RANGE_MV + 0.5)
    code = np.clip(code, 0, full_scale).astype(np.int32)
    return int(code) if code.ndim == 0 else code


def hits_to_array(hits: list[HitRecord]) -> np.ndarray:
    arr = np.zeros(len(hits), dtype=HIT_DTYPE)
    for i, h in enumerate(hits):
        arr[i] = (h.vmm, h.channel, h.pdo, h.bcid, h.flags)
    return arr


def hits_from_array(arr: np.ndarray) -> list[HitRecord]:
    return [
        HitRecord(int(r["vmm"]), int(r["channel"]), int(r["pdo"]), int(r["bcid"]), int(r["flags"]))
        for r in arr
    ]


class VmmModel:
    """One VMM3 chip: analog truth plus the latched configuration.

    Mutated only by its owner (the emulator loop or a test); truth
    snapshots are immutable and safe to share.
    """

    def __init__(self, vmm_index: int, truth: VmmTruth, rng: np.random.Generator):
        self.vmm_index = vmm_index
        self.rng = rng
        self.threshold_slope = truth.threshold_slope_mv_per_count
        self.threshold_offset = truth.threshold_offset_mv
        self.pulser_fc_per_count = truth.pulser_fc_per_count
        self.trim_step = truth.trim_step_mv

        self.baselines = np.array([c.baseline_mv for c in truth.channels], dtype=np.float64)
        self.sigmas = np.array([c.noise_sigma_mv for c in truth.channels], dtype=np.float64)
        self._fault_kind = np.array(
            [_FAULT_CODES[c.fault.kind] for c in truth.channels], dtype=np.int8
        )
        self._gain_factor = np.array(
            [c.fault.factor if c.fault.kind == FAULT_LOW_GAIN else 1.0 for c in truth.channels]
        )
        self._pedestal_offset = np.array(
            [c.fault.offset_mv if c.fault.kind == FAULT_HIGH_PEDESTAL else 0.0 for c in truth.channels]
        )
        self._any_stuck = bool((self._fault_kind == _FAULT_CODES[FAULT_STUCK]).any())

        self.config: VmmConfig | None = None
        self._masks = np.zeros(N_CHANNELS, dtype=bool)
        self._tpe = np.zeros(N_CHANNELS, dtype=bool)
        self._trims = np.zeros(N_CHANNELS, dtype=np.int32)
        self._acq = False
        self._gain = GAIN_TABLE_MV_PER_FC[0]

    # -- configuration -----------------------------------------------------

    def apply_config(self, cfg: VmmConfig) -> None:
        self.config = cfg
        g = cfg.global_cfg
        self._masks = np.array([bool(c.mask) for c in cfg.channels])
        self._tpe = np.array([bool(c.test_pulse_enable) for c in cfg.channels])
        self._trims = np.array([c.trim for c in cfg.channels], dtype=np.int32)
        self._acq = bool(g.acq_enable)
        self._gain = GAIN_TABLE_MV_PER_FC[g.gain_sel]

    def _require_config(self) -> VmmConfig:
        if self.config is None:
            raise DeviceError("no configuration applied")
        return self.config

    @property
    def gain_mv_per_fc(self) -> float:
        self._require_config()
        return self._gain

    def v_thr_eff(self, channel: int | None = None):
        """Effective threshold in mV: slope*dac + offset - trim*step."""
        g = self._require_config().global_cfg
        base = self.threshold_slope * g.threshold_dac + self.threshold_offset
        if channel is None:
            return base - self._trims * self.trim_step
        self._check_channel(channel)
        return base - float(self._trims[channel]) * self.trim_step

    def internal_pulse_charge_fc(self) -> float:
        g = self._require_config().global_cfg
        return self.pulser_fc_per_count * g.pulser_dac

    # -- faults ------------------------------------------------------------

    def set_fault(self, channel: int, fault: Fault) -> None:
        self._check_channel(channel)
        self._fault_kind[channel] = _FAULT_CODES[fault.kind]
        self._gain_factor[channel] = fault.factor if fault.kind == FAULT_LOW_GAIN else 1.0
        self._pedestal_offset[channel] = (
            fault.offset_mv if fault.kind == FAULT_HIGH_PEDESTAL else 0.0
        )
        self._any_stuck = bool((self._fault_kind == _FAULT_CODES[FAULT_STUCK]).any())

    def truth_snapshot(self) -> VmmTruth:
        rev = {v: k for k, v in _FAULT_CODES.items()}
        chans = []
        for c in range(N_CHANNELS):
            kind = rev[int(self._fault_kind[c])]
            fault = Fault(
                kind,
                factor=float(self._gain_factor[c]) if kind == FAULT_LOW_GAIN else 1.0,
                offset_mv=float(self._pedestal_offset[c]) if kind == FAULT_HIGH_PEDESTAL else 0.0,
            )
            chans.append(
                ChannelTruth(float(self.baselines[c]), float(self.sigmas[c]), fault)
            )
        return VmmTruth(
            tuple(chans),
            self.threshold_slope,
            self.threshold_offset,
            self.pulser_fc_per_count,
            self.trim_step,
        )

    def test_pulse_mask(self) -> np.ndarray:
        """Channels with test_pulse_enable set (copy, 64 bools)."""
        return self._tpe.copy()

    def has_stuck(self) -> bool:
        return self._any_stuck

    # -- stimulus ----------------------------------------------------------

    def inject_pulse(
        self, channel: int, charge_fc: float, origin: str = "external", bcid: int = 0
    ) -> HitRecord | None:
        """Deliver one pulse to one channel; consumes one scalar noise draw."""
        self._check_channel(channel)
        self._require_config()
        if origin not in ("internal", "external"):
            raise DeviceError(f"origin must be internal or external, got {origin!r}")
        z = float(self.rng.standard_normal())
        kind = int(self._fault_kind[channel])
        if kind == _FAULT_CODES[FAULT_STUCK]:
            return None  # stuck hits come from tick sampling only
        internal = origin == "internal"
        if internal and not self._tpe[channel]:
            return None
        v = (
            float(self.baselines[channel])
            + float(self._pedestal_offset[channel])
            + self._gain * charge_fc * float(self._gain_factor[channel])
            + float(self.sigmas[channel]) * z
        )
        if self._masks[channel] or kind == _FAULT_CODES[FAULT_DEAD] or not self._acq:
            return None
        if v <= self.v_thr_eff(channel):
            return None
        return HitRecord(
            self.vmm_index,
            channel,
            quantize(v, PDO_FULL_SCALE),
            bcid % BCID_WRAP,
            FLAG_INTERNAL_PULSE if internal else 0,
        )

    def pulse_cycle(
        self,
        stimulated: np.ndarray,
        charges_fc: np.ndarray,
        internal: bool,
        bcid: int,
    ) -> np.ndarray:
        """Deliver one simultaneous pulse pattern across the 64 channels.

        `stimulated` is a 64-entry bool mask of channels receiving charge,
        `charges_fc` the per-channel charge.  Consumes exactly one
        standard_normal(64) draw.  Returns hits as a HIT_DTYPE array in
        channel order.
        """
        self._require_config()
        z = self.rng.standard_normal(N_CHANNELS)
        v = (
            self.baselines
            + self._pedestal_offset
            + self._gain * np.asarray(charges_fc, dtype=np.float64) * self._gain_factor
            + self.sigmas * z
        )
        fires = (
            np.asarray(stimulated, dtype=bool)
            & ~self._masks
            & (self._fault_kind != _FAULT_CODES[FAULT_DEAD])
            & (self._fault_kind != _FAULT_CODES[FAULT_STUCK])
            & (v > self.v_thr_eff())
        )
        if not self._acq:
            fires &= False
        chans = np.nonzero(fires)[0]
        hits = np.zeros(len(chans), dtype=HIT_DTYPE)
        hits["vmm"] = self.vmm_index
        hits["channel"] = chans
        hits["pdo"] = quantize(v[chans], PDO_FULL_SCALE)
        hits["bcid"] = bcid % BCID_WRAP
        hits["flags"] = FLAG_INTERNAL_PULSE if internal else 0
        return hits

    def tick(self, bcid: int) -> np.ndarray:
        """One sampling tick: stuck channels each emit one hit, no draws."""
        if self.config is None or not self._acq:
            return np.zeros(0, dtype=HIT_DTYPE)
        stuck = (self._fault_kind == _FAULT_CODES[FAULT_STUCK]) & ~self._masks
        chans = np.nonzero(stuck)[0]
        hits = np.zeros(len(chans), dtype=HIT_DTYPE)
        hits["vmm"] = self.vmm_index
        hits["channel"] = chans
        hits["pdo"] = quantize(
            self.baselines[chans] + self._pedestal_offset[chans], PDO_FULL_SCALE
        )
        hits["bcid"] = bcid % BCID_WRAP
        hits["flags"] = 0
        return hits

    # -- monitor -----------------------------------------------------------

    def monitored_voltage_mv(self) -> float:
        """Noise-free voltage currently on the monitor tap."""
        g = self._require_config().global_cfg
        mux = g.monitor_mux
        if not g.monitor_enable:
            raise MonitorDisabledError("monitor_enable is not set")
        if mux < N_CHANNELS:
            return float(self.baselines[mux] + self._pedestal_offset[mux])
        if mux == MONITOR_MUX_THRESHOLD:
            return self.threshold_slope * g.threshold_dac + self.threshold_offset
        if mux == MONITOR_MUX_PULSER:
            # unity-gain monitor: fC/count times 1.0 mV/fC
            return self.pulser_fc_per_count * g.pulser_dac * 1.0
        if mux == MONITOR_MUX_REFERENCE:
            return REFERENCE_MV
        raise ReservedMuxError(f"monitor_mux {mux} is reserved")

    def sample_monitor(self, n_samples: int = 1) -> np.ndarray:
        """n consecutive 12-bit monitor codes.

        Channel taps add per-sample noise (one standard_normal(n) draw);
        the threshold, pulser and reference taps are deterministic.
        """
        if n_samples < 0:
            raise DeviceError("n_samples must be >= 0")
        g = self._require_config().global_cfg
        v = self.monitored_voltage_mv()  # validates mux/enable before drawing
        if g.monitor_mux < N_CHANNELS:
            z = self.rng.standard_normal(n_samples)
            volts = v + float(self.sigmas[g.monitor_mux]) * z
        else:
            volts = np.full(n_samples, v)
        return quantize(volts, XADC_FULL_SCALE)

    def _check_channel(self, channel: int) -> None:
        if not 0 <= channel < N_CHANNELS:
            raise DeviceError(f"channel {channel} out of range 0..{N_CHANNELS - 1}")


def default_truth(
    rng: np.random.Generator,
    n_vmm: int,
    baseline_mean_mv: float = 160.0,
    baseline_spread_mv: float = 3.0,
    noise_sigma_mv: float = 2.0,
) -> list[VmmTruth]:
    """Nominal board truth: per-channel baselines drawn once from
    Normal(160, 3) mV, uniform noise sigma.  Consumes exactly one
    normal(mean, spread, size=(n_vmm, 64)) draw from `rng`.
    """
    baselines = rng.normal(baseline_mean_mv, baseline_spread_mv, size=(n_vmm, N_CHANNELS))
    return [
        VmmTruth(
            tuple(
                ChannelTruth(float(baselines[v, c]), noise_sigma_mv)
                for c in range(N_CHANNELS)
            )
        )
        for v in range(n_vmm)
    ]

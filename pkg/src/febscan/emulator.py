"""Board emulator: one pFEB or sFEB (3 or 8 VMM3 chips) plus the external
simulation signal board, reachable through the wire protocol.

The emulator is deterministic: all randomness flows from one seeded
generator shared by its chips, so one scenario plus one command sequence
yields a byte-identical response transcript.  Frame handling is
synchronous: every request returns its complete response list, hit frames
included, which also means a stop request can never overtake pending hit
data.

Stimulus timing: each pulse cycle advances the board clock by
TICKS_PER_CYCLE sampling ticks; the pulses of a cycle land on the first
tick and stuck channels emit one hit on every tick.  The bunch counter is
the tick count modulo 4096.

Request limits (both answered with a MALFORMED_PAYLOAD error rather than
silently truncated): pulse trains are capped at MAX_PULSE_COUNT cycles per
trigger and monitor reads at MAX_XADC_SAMPLES so a response always fits in
single datagrams.

Scenario files (line-oriented, `#` comments allowed):

    seed = 12345
    board = pfeb
    vmm.0.channel.3.baseline_mv = 171.5
    vmm.*.channel.*.noise_sigma_mv = 0
    vmm.1.channel.9.fault = low_gain:0.5

`*` wildcards for the vmm or channel index apply a value to every chip or
every channel; later lines override earlier ones.
"""

from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass

import numpy as np

from . import wire_protocol as wp
from .config_codec import (
    ConfigError,
    N_CHANNELS,
    ChannelConfig,
    GlobalConfig,
    VmmConfig,
    decode as decode_config,
)
from .device_model import HIT_DTYPE, Fault, MonitorDisabledError, ReservedMuxError, VmmModel, default_truth
from .transport import RECV_BUFFER_BYTES

log = logging.getLogger(__name__)

TICKS_PER_CYCLE = 8
SIGBOARD_FC_PER_COUNT = 0.3
SIGBOARD_MODES = (1, 2, 3, 4, 5, 6)
MAX_PULSE_COUNT = 1_000_000
MAX_XADC_SAMPLES = 32_000


@dataclass(frozen=True)
class BoardDescriptor:
    board_type: str
    n_vmm: int
    n_channels: int

    def __post_init__(self):
        if self.n_channels != 64 * self.n_vmm:
            raise ValueError("n_channels must be 64 * n_vmm")

    @classmethod
    def from_name(cls, name: str) -> "BoardDescriptor":
        if name == "pfeb":
            return cls("pfeb", 3, 192)
        if name == "sfeb":
            return cls("sfeb", 8, 512)
        raise ValueError(f"unknown board type {name!r} (expected pfeb or sfeb)")

    @property
    def type_code(self) -> int:
        return 0 if self.board_type == "pfeb" else 1


@dataclass(frozen=True)
class SignalBoardState:
    """Latched arming state of the external pulse generator board."""

    mode: int
    amplitude_counts: int
    pattern_seed: int

    def __post_init__(self):
        if self.mode not in SIGBOARD_MODES:
            raise ValueError(f"signal board mode must be 1..6, got {self.mode}")

    @property
    def charge_fc(self) -> float:
        return SIGBOARD_FC_PER_COUNT * self.amplitude_counts


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    board: str = "pfeb"
    seed: int = 0
    # (vmm, channel) -> {"baseline_mv": float, "noise_sigma_mv": float, "fault": Fault}
    overrides: dict[tuple[int, int], dict] = None

    def __post_init__(self):
        if self.overrides is None:
            self.overrides = {}


_CHANNEL_FIELDS = ("baseline_mv", "noise_sigma_mv", "fault")


def parse_scenario(text: str) -> Scenario:
    scenario = Scenario()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value': {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key == "seed":
                seed = int(value, 0)
                if not 0 <= seed < 2**64:
                    raise ScenarioError(f"line {lineno}: seed out of u64 range")
                scenario.seed = seed
            elif key == "board":
                BoardDescriptor.from_name(value)
                scenario.board = value
            else:
                parts = key.split(".")
                if len(parts) != 5 or parts[0] != "vmm" or parts[2] != "channel":
                    raise ScenarioError(f"line {lineno}: unknown key {key!r}")
                _, vmm_s, _, chan_s, field = parts
                if field not in _CHANNEL_FIELDS:
                    raise ScenarioError(f"line {lineno}: unknown channel field {field!r}")
                if field == "fault":
                    parsed = Fault.parse(value)
                else:
                    parsed = float(value)
                    if field == "noise_sigma_mv" and parsed < 0:
                        raise ScenarioError(f"line {lineno}: noise sigma must be >= 0")
                n_vmm = BoardDescriptor.from_name(scenario.board).n_vmm
                vmms = range(n_vmm) if vmm_s == "*" else (int(vmm_s),)
                chans = range(N_CHANNELS) if chan_s == "*" else (int(chan_s),)
                for v in vmms:
                    if not 0 <= v < n_vmm:
                        raise ScenarioError(f"line {lineno}: vmm {v} out of range for {scenario.board}")
                    for c in chans:
                        if not 0 <= c < N_CHANNELS:
                            raise ScenarioError(f"line {lineno}: channel {c} out of range")
                        scenario.overrides.setdefault((v, c), {})[field] = parsed
        except ScenarioError:
            raise
        except ValueError as e:
            raise ScenarioError(f"line {lineno}: {e}") from e
    return scenario


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as f:
        return parse_scenario(f.read())


class BoardEmulator:
    """One front-end board behind the framed protocol.

    The constructor draws the per-channel baselines first (one vectorized
    normal draw) and then applies scenario overrides, so overriding a
    channel does not shift any other channel's values.
    """

    def __init__(self, board: str = "pfeb", seed: int = 0,
                 overrides: dict[tuple[int, int], dict] | None = None):
        self.descriptor = BoardDescriptor.from_name(board)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        truths = default_truth(self.rng, self.descriptor.n_vmm)
        self.vmms = [VmmModel(i, t, self.rng) for i, t in enumerate(truths)]
        # Registers power up to their all-zero reset values: monitor and
        # acquisition disabled, every DAC at zero.
        reset = VmmConfig(GlobalConfig(), tuple(ChannelConfig() for _ in range(N_CHANNELS)))
        for model in self.vmms:
            model.apply_config(reset)
        if overrides:
            for (v, c), fields in overrides.items():
                if not 0 <= v < self.descriptor.n_vmm:
                    raise ScenarioError(f"override vmm {v} out of range")
                model = self.vmms[v]
                if "baseline_mv" in fields:
                    model.baselines[c] = fields["baseline_mv"]
                if "noise_sigma_mv" in fields:
                    model.sigmas[c] = fields["noise_sigma_mv"]
                if "fault" in fields:
                    model.set_fault(c, fields["fault"])
        self.running = False
        self.tick_count = 0
        self.sigboard: SignalBoardState | None = None
        self._sigboard_rng: np.random.Generator | None = None
        self._out_seq = 0
        self.frames_handled = 0
        self.hits_emitted = 0

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "BoardEmulator":
        return cls(scenario.board, scenario.seed, scenario.overrides)

    # -- responses ---------------------------------------------------------

    def _reply(self, body) -> wp.Frame:
        frame = wp.Frame(self._out_seq, body)
        self._out_seq = (self._out_seq + 1) & 0xFFFFFFFF
        return frame

    def _error(self, code: wp.ErrorCode, seq_ref: int) -> wp.Frame:
        return self._reply(wp.ErrorFrame(int(code), seq_ref))

    def _status(self) -> wp.Frame:
        return self._reply(wp.StatusResp(
            board_type=self.descriptor.type_code,
            n_vmm=self.descriptor.n_vmm,
            run_state=1 if self.running else 0,
        ))

    # -- stimulus ----------------------------------------------------------

    def _sigboard_pattern(self, cycle_index: int, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Board-wide (stimulated mask, charge per channel) for one cycle."""
        state = self.sigboard
        n = self.descriptor.n_channels
        stim = np.zeros(n, dtype=bool)
        q = state.charge_fc
        if state.mode == 1:
            stim[0] = True
        elif state.mode == 2:
            stim[:] = True
        elif state.mode == 3:
            stim[cycle_index % n] = True
        elif state.mode == 4:
            idx = np.arange(n)
            stim[:] = (idx % 2) == (cycle_index % 2)
        elif state.mode == 5:
            stim[:] = self._sigboard_rng.random(n) < 0.5
        elif state.mode == 6:
            stim[:] = True
            q = state.charge_fc * (cycle_index + 1) / count
        charges = np.where(stim, q, 0.0)
        return stim, charges

    def _run_cycles(self, count: int) -> list[np.ndarray]:
        """Advance the board by `count` pulse cycles, returning hit batches."""
        batches = []
        n_vmm = self.descriptor.n_vmm
        for i in range(count):
            bcid = self.tick_count % 4096
            if self.sigboard is not None:
                stim, charges = self._sigboard_pattern(i, count)
                for v in range(n_vmm):
                    s = stim[v * 64:(v + 1) * 64]
                    if not s.any():
                        continue
                    hits = self.vmms[v].pulse_cycle(s, charges[v * 64:(v + 1) * 64],
                                                    internal=False, bcid=bcid)
                    if hits.size:
                        batches.append(hits)
            else:
                for model in self.vmms:
                    stim = model.test_pulse_mask()
                    if not stim.any():
                        continue
                    q = model.internal_pulse_charge_fc()
                    hits = model.pulse_cycle(stim, np.where(stim, q, 0.0),
                                             internal=True, bcid=bcid)
                    if hits.size:
                        batches.append(hits)
            for _ in range(TICKS_PER_CYCLE):
                tick_bcid = self.tick_count % 4096
                for model in self.vmms:
                    if model.has_stuck():
                        hits = model.tick(tick_bcid)
                        if hits.size:
                            batches.append(hits)
                self.tick_count += 1
        return batches

    def _hit_frames(self, batches: list[np.ndarray]) -> list[wp.Frame]:
        if not batches:
            return []
        all_hits = np.concatenate(batches) if len(batches) > 1 else batches[0]
        self.hits_emitted += len(all_hits)
        frames = []
        for start in range(0, len(all_hits), wp.MAX_HITS_PER_FRAME):
            frames.append(self._reply(wp.HitData(all_hits[start:start + wp.MAX_HITS_PER_FRAME])))
        return frames

    # -- request dispatch --------------------------------------------------

    def handle_frame(self, frame: wp.Frame) -> list[wp.Frame]:
        self.frames_handled += 1
        body = frame.body
        seq = frame.seq

        if isinstance(body, wp.ConfigWrite):
            if not 0 <= body.vmm < self.descriptor.n_vmm:
                return [self._error(wp.ErrorCode.BAD_VMM_INDEX, seq)]
            try:
                cfg = decode_config(body.bitstream, strict=False)
            except ConfigError:
                return [self._error(wp.ErrorCode.MALFORMED_PAYLOAD, seq)]
            self.vmms[body.vmm].apply_config(cfg)
            return [self._reply(wp.ConfigAck(body.vmm, wp.crc32(body.bitstream)))]

        if isinstance(body, wp.RunStart):
            self.running = True
            return [self._status()]

        if isinstance(body, wp.RunStop):
            self.running = False
            return [self._status()]

        if isinstance(body, wp.StatusReq):
            return [self._status()]

        if isinstance(body, wp.XadcReq):
            if not 0 <= body.vmm < self.descriptor.n_vmm:
                return [self._error(wp.ErrorCode.BAD_VMM_INDEX, seq)]
            if body.n_samples > MAX_XADC_SAMPLES:
                return [self._error(wp.ErrorCode.MALFORMED_PAYLOAD, seq)]
            try:
                codes = self.vmms[body.vmm].sample_monitor(body.n_samples)
            except MonitorDisabledError:
                return [self._error(wp.ErrorCode.MONITOR_DISABLED, seq)]
            except ReservedMuxError:
                return [self._error(wp.ErrorCode.RESERVED_MUX, seq)]
            return [self._reply(wp.XadcResp(body.vmm, codes))]

        if isinstance(body, wp.PulseTrigger):
            if not self.running:
                return [self._error(wp.ErrorCode.NOT_RUNNING, seq)]
            if body.count > MAX_PULSE_COUNT:
                return [self._error(wp.ErrorCode.MALFORMED_PAYLOAD, seq)]
            batches = self._run_cycles(body.count)
            frames = self._hit_frames(batches)
            frames.append(self._status())
            return frames

        if isinstance(body, wp.SigboardSet):
            if body.mode == 0:
                self.sigboard = None
                self._sigboard_rng = None
                return [self._status()]
            try:
                state = SignalBoardState(body.mode, body.amplitude_counts, body.seed)
            except ValueError:
                return [self._error(wp.ErrorCode.MALFORMED_PAYLOAD, seq)]
            self.sigboard = state
            self._sigboard_rng = np.random.default_rng(state.pattern_seed)
            return [self._status()]

        # Response-only types arriving as requests: CONFIG_ACK, HIT_DATA,
        # XADC_RESP, STATUS_RESP, ERROR.
        return [self._error(wp.ErrorCode.MALFORMED_PAYLOAD, seq)]

    def handle_datagram(self, data: bytes) -> list[bytes]:
        try:
            frame = wp.decode_frame(data)
        except wp.FrameError:
            seq_ref = 0
            if len(data) >= 8 and data[:2] == wp.MAGIC:
                seq_ref = int.from_bytes(data[4:8], "big")
            return [wp.encode_frame(self._error(wp.ErrorCode.MALFORMED_PAYLOAD, seq_ref))]
        return [wp.encode_frame(f) for f in self.handle_frame(frame)]

    # -- UDP service -------------------------------------------------------

    def serve_udp(self, host: str = "127.0.0.1", port: int = 0,
                  stop_event: threading.Event | None = None,
                  ready: threading.Event | None = None) -> tuple[str, int]:
        """Serve datagrams until stop_event is set.  Returns the bound address.

        Binds, reports readiness, then blocks in the receive loop.  Pass
        port=0 to let the OS pick; read the bound port from
        `self.bound_address` after `ready` fires when running in a thread.
        """
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, RECV_BUFFER_BYTES)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, RECV_BUFFER_BYTES)
        except OSError:
            pass
        sock.bind((host, port))
        sock.settimeout(0.2)
        self.bound_address = sock.getsockname()
        log.info("emulator (%s, seed=%d) listening on %s:%d",
                 self.descriptor.board_type, self.seed, *self.bound_address)
        if ready is not None:
            ready.set()
        try:
            while stop_event is None or not stop_event.is_set():
                try:
                    data, addr = sock.recvfrom(wp.MAX_FRAME_BYTES)
                except socket.timeout:
                    continue
                except OSError:
                    break
                for out in self.handle_datagram(data):
                    sock.sendto(out, addr)
        finally:
            sock.close()
        return self.bound_address

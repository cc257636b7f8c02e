"""Request/response client for one front-end board.

The protocol is strictly lockstep from the client side: one request goes
out, then the client drains every frame belonging to that exchange before
the next request.  Pulse triggers produce a stream of hit frames; the
status frame the board appends after the last hit batch is the completion
marker, so draining never needs a guess about how many hits are coming.

Timeouts only apply per received frame, and only the idempotent requests
(everything except a pulse trigger) are retried after one.  A retried
trigger would re-fire the pulses, so a trigger that times out mid-stream
aborts the exchange instead.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from . import wire_protocol as wp
from .config_codec import VmmConfig, encode as encode_config

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 500
DEFAULT_RETRIES = 3


class ClientError(Exception):
    pass


class BoardTimeoutError(ClientError):
    def __init__(self, what: str, timeout_ms: float, attempts: int):
        super().__init__(f"no response to {what} after {attempts} attempt(s) of {timeout_ms} ms")
        self.what = what
        self.attempts = attempts


class BoardErrorResponse(ClientError):
    """The board answered with an error frame."""

    def __init__(self, code: int, seq_ref: int):
        try:
            name = wp.ErrorCode(code).name
        except ValueError:
            name = f"0x{code:04X}"
        super().__init__(f"board error {name} (request seq {seq_ref})")
        self.code = code
        self.seq_ref = seq_ref


class CrcMismatchError(ClientError):
    def __init__(self, vmm: int, sent: int, acked: int):
        super().__init__(f"config CRC mismatch on vmm {vmm}: sent 0x{sent:08X}, ack 0x{acked:08X}")


class UnexpectedResponseError(ClientError):
    pass


class BoardClient:
    """Drives one board over a transport (UDP or in-memory).

    Every raw datagram in both directions can be captured in `transcript`
    as ("tx"|"rx", hex) pairs for report artifacts; recording is switched
    off for bulk-rate runs where the transcript would dwarf the data.
    """

    def __init__(self, transport, timeout_ms: float = DEFAULT_TIMEOUT_MS,
                 retries: int = DEFAULT_RETRIES, record: bool = True):
        self.transport = transport
        self.timeout_ms = timeout_ms
        self.retries = retries
        self.record = record
        self.transcript: list[tuple[str, str]] = []
        self._seq = 0
        self.hits_received = 0

    def close(self) -> None:
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def clear_transcript(self) -> None:
        self.transcript = []

    # -- raw exchange ------------------------------------------------------

    def _next_seq(self) -> int:
        seq = self._seq
        self._seq = (self._seq + 1) & 0xFFFFFFFF
        return seq

    def _send(self, body) -> int:
        seq = self._next_seq()
        raw = wp.encode_frame(wp.Frame(seq, body))
        if self.record:
            self.transcript.append(("tx", raw.hex()))
        self.transport.send(raw)
        return seq

    def _recv_frame(self) -> wp.Frame | None:
        raw = self.transport.recv(self.timeout_ms / 1000.0)
        if raw is None:
            return None
        if self.record:
            self.transcript.append(("rx", raw.hex()))
        return wp.decode_frame(raw)

    def _checked(self, frame: wp.Frame, expect: type) -> wp.Frame:
        if isinstance(frame.body, wp.ErrorFrame):
            raise BoardErrorResponse(frame.body.code, frame.body.seq_ref)
        if not isinstance(frame.body, expect):
            raise UnexpectedResponseError(
                f"expected {expect.__name__}, got {type(frame.body).__name__}")
        return frame

    def request(self, body, expect: type) -> wp.Frame:
        """Send an idempotent request, returning its (type-checked) response."""
        attempts = self.retries + 1
        for attempt in range(attempts):
            self._send(body)
            frame = self._recv_frame()
            if frame is not None:
                return self._checked(frame, expect)
            log.warning("timeout on %s (attempt %d/%d)",
                        type(body).__name__, attempt + 1, attempts)
        raise BoardTimeoutError(type(body).__name__, self.timeout_ms, attempts)

    # -- operations --------------------------------------------------------

    def write_config(self, vmm: int, cfg: VmmConfig | bytes) -> int:
        """Write one chip's configuration and verify the echoed CRC."""
        bits = cfg if isinstance(cfg, (bytes, bytearray)) else encode_config(cfg)
        bits = bytes(bits)
        frame = self.request(wp.ConfigWrite(vmm, bits), wp.ConfigAck)
        sent_crc = wp.crc32(bits)
        if frame.body.crc != sent_crc:
            raise CrcMismatchError(vmm, sent_crc, frame.body.crc)
        return frame.body.crc

    def write_config_all(self, n_vmm: int, cfg: VmmConfig | bytes) -> None:
        for v in range(n_vmm):
            self.write_config(v, cfg)

    def run_start(self) -> wp.StatusResp:
        return self.request(wp.RunStart(), wp.StatusResp).body

    def run_stop(self) -> wp.StatusResp:
        return self.request(wp.RunStop(), wp.StatusResp).body

    def status(self) -> wp.StatusResp:
        return self.request(wp.StatusReq(), wp.StatusResp).body

    def xadc(self, vmm: int, n_samples: int) -> np.ndarray:
        """Read n_samples monitor ADC codes from one chip."""
        frame = self.request(wp.XadcReq(vmm, n_samples), wp.XadcResp)
        codes = frame.body.codes
        if len(codes) != n_samples:
            raise UnexpectedResponseError(
                f"asked for {n_samples} monitor samples, got {len(codes)}")
        return codes

    def sigboard_set(self, mode: int, amplitude_counts: int = 0, seed: int = 0) -> wp.StatusResp:
        return self.request(wp.SigboardSet(mode, amplitude_counts, seed), wp.StatusResp).body

    def sigboard_off(self) -> wp.StatusResp:
        return self.sigboard_set(0, 0, 0)

    def pulse(self, count: int, period_us: int = 0,
              on_hits=None) -> np.ndarray:
        """Fire a pulse train and collect the resulting hits.

        Returns the concatenated hit array once the completion status
        arrives.  `on_hits(batch)` is invoked per hit frame when given, for
        callers streaming hits instead of holding them all.
        """
        self._send(wp.PulseTrigger(count, period_us))
        batches = []
        deadline = time.monotonic() + self.timeout_ms / 1000.0
        while True:
            frame = self._recv_frame()
            if frame is None:
                if time.monotonic() > deadline:
                    raise BoardTimeoutError("PulseTrigger stream", self.timeout_ms, 1)
                continue
            deadline = time.monotonic() + self.timeout_ms / 1000.0
            if isinstance(frame.body, wp.ErrorFrame):
                raise BoardErrorResponse(frame.body.code, frame.body.seq_ref)
            if isinstance(frame.body, wp.HitData):
                self.hits_received += len(frame.body.hits)
                if on_hits is not None:
                    on_hits(frame.body.hits)
                else:
                    batches.append(frame.body.hits)
                continue
            if isinstance(frame.body, wp.StatusResp):
                break
            raise UnexpectedResponseError(
                f"unexpected {type(frame.body).__name__} in pulse stream")
        if on_hits is not None or not batches:
            return np.zeros(0, dtype=wp.HIT_DTYPE)
        return np.concatenate(batches) if len(batches) > 1 else batches[0]

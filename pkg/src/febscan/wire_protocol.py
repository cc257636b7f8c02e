"""Framed binary protocol between the test software and a (real or
emulated) front-end board.

Every message is one frame: a 12-byte header followed by a typed payload.
Integers are big-endian throughout.

    header: magic 0xA7 0x5C | version 0x01 | msg_type 1B | seq 4B | payload_len 4B

Payload table (byte-exact):

    0x01 CONFIG_WRITE   vmm:1B, bitstream:216B
    0x02 CONFIG_ACK     vmm:1B, crc:4B
    0x03 RUN_START      (empty)
    0x04 RUN_STOP       (empty)
    0x05 HIT_DATA       n:2B, n x {vmm:1B, channel:1B, pdo:2B, bcid:2B, flags:2B}
    0x06 XADC_REQ       vmm:1B, n_samples:2B
    0x07 XADC_RESP      vmm:1B, n:2B, n x code:2B
    0x08 PULSE_TRIGGER  count:4B, period_us:4B
    0x09 SIGBOARD_SET   mode:1B, amplitude_counts:2B, seed:4B
    0x0A STATUS_REQ     (empty)
    0x0B STATUS_RESP    board_type:1B (0=pFEB, 1=sFEB), n_vmm:1B, run_state:1B, fw:2B
    0x0C ERROR          code:2B, seq_ref:4B

The codec is pure and reentrant.  decode_frame never raises anything but
FrameError subclasses, whatever the input bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .config_codec import BITSTREAM_BYTES
from .device_model import HIT_DTYPE

MAGIC = b"\xa7\x5c"
VERSION = 0x01
HEADER_LEN = 12
MAX_FRAME_BYTES = 65507  # one UDP datagram
MAX_PAYLOAD_BYTES = MAX_FRAME_BYTES - HEADER_LEN
MAX_HITS_PER_FRAME = 4000

_HEADER = struct.Struct(">2sBBII")


class MsgType(IntEnum):
    CONFIG_WRITE = 0x01
    CONFIG_ACK = 0x02
    RUN_START = 0x03
    RUN_STOP = 0x04
    HIT_DATA = 0x05
    XADC_REQ = 0x06
    XADC_RESP = 0x07
    PULSE_TRIGGER = 0x08
    SIGBOARD_SET = 0x09
    STATUS_REQ = 0x0A
    STATUS_RESP = 0x0B
    ERROR = 0x0C


class ErrorCode(IntEnum):
    """Codes carried in ERROR frames by a board implementation."""

    BAD_VMM_INDEX = 0x0001
    MONITOR_DISABLED = 0x0002
    NOT_RUNNING = 0x0003
    MALFORMED_PAYLOAD = 0x0004
    RESERVED_MUX = 0x0005


class FrameError(ValueError):
    """Base decode/encode error; `code` distinguishes the cause."""

    code = "frame-error"


class TruncatedHeaderError(FrameError):
    code = "truncated-header"


class BadMagicError(FrameError):
    code = "bad-magic"


class BadVersionError(FrameError):
    code = "bad-version"


class UnknownTypeError(FrameError):
    code = "unknown-type"


class LengthMismatchError(FrameError):
    code = "length-mismatch"


class PayloadError(FrameError):
    code = "bad-payload"


@dataclass(frozen=True)
class ConfigWrite:
    MSG_TYPE = MsgType.CONFIG_WRITE
    vmm: int
    bitstream: bytes

    def pack(self) -> bytes:
        if len(self.bitstream) != BITSTREAM_BYTES:
            raise PayloadError(f"bitstream must be {BITSTREAM_BYTES} bytes")
        return bytes([self.vmm]) + self.bitstream

    @classmethod
    def unpack(cls, data: bytes) -> "ConfigWrite":
        if len(data) != 1 + BITSTREAM_BYTES:
            raise PayloadError(f"CONFIG_WRITE payload must be {1 + BITSTREAM_BYTES} bytes")
        return cls(data[0], bytes(data[1:]))


@dataclass(frozen=True)
class ConfigAck:
    MSG_TYPE = MsgType.CONFIG_ACK
    vmm: int
    crc: int

    def pack(self) -> bytes:
        return struct.pack(">BI", self.vmm, self.crc)

    @classmethod
    def unpack(cls, data: bytes) -> "ConfigAck":
        try:
            vmm, crc = struct.unpack(">BI", data)
        except struct.error:
            raise PayloadError("CONFIG_ACK payload must be 5 bytes") from None
        return cls(vmm, crc)


class _Empty:
    def pack(self) -> bytes:
        return b""

    @classmethod
    def unpack(cls, data: bytes):
        if data:
            raise PayloadError(f"{cls.__name__} payload must be empty")
        return cls()

    def __eq__(self, other) -> bool:
        return type(other) is type(self)

    def __hash__(self) -> int:
        return hash(type(self))

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class RunStart(_Empty):
    MSG_TYPE = MsgType.RUN_START


class RunStop(_Empty):
    MSG_TYPE = MsgType.RUN_STOP


class StatusReq(_Empty):
    MSG_TYPE = MsgType.STATUS_REQ


@dataclass(frozen=True, eq=False)
class HitData:
    """Batch of hits, held as a HIT_DTYPE structured array."""

    MSG_TYPE = MsgType.HIT_DATA
    hits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=HIT_DTYPE))

    def pack(self) -> bytes:
        n = len(self.hits)
        if n > MAX_HITS_PER_FRAME:
            raise PayloadError(f"at most {MAX_HITS_PER_FRAME} hits per frame, got {n}")
        arr = np.ascontiguousarray(self.hits, dtype=HIT_DTYPE)
        return struct.pack(">H", n) + arr.tobytes()

    @classmethod
    def unpack(cls, data: bytes) -> "HitData":
        if len(data) < 2:
            raise PayloadError("HIT_DATA payload shorter than its count field")
        (n,) = struct.unpack(">H", data[:2])
        if n > MAX_HITS_PER_FRAME:
            raise PayloadError(f"hit count {n} exceeds {MAX_HITS_PER_FRAME}")
        body = data[2:]
        if len(body) != n * HIT_DTYPE.itemsize:
            raise PayloadError(
                f"HIT_DATA expects {n * HIT_DTYPE.itemsize} hit bytes, got {len(body)}"
            )
        return cls(np.frombuffer(body, dtype=HIT_DTYPE).copy())

    def __eq__(self, other) -> bool:
        return isinstance(other, HitData) and np.array_equal(self.hits, other.hits)


@dataclass(frozen=True)
class XadcReq:
    MSG_TYPE = MsgType.XADC_REQ
    vmm: int
    n_samples: int

    def pack(self) -> bytes:
        return struct.pack(">BH", self.vmm, self.n_samples)

    @classmethod
    def unpack(cls, data: bytes) -> "XadcReq":
        try:
            vmm, n = struct.unpack(">BH", data)
        except struct.error:
            raise PayloadError("XADC_REQ payload must be 3 bytes") from None
        return cls(vmm, n)


@dataclass(frozen=True, eq=False)
class XadcResp:
    MSG_TYPE = MsgType.XADC_RESP
    vmm: int
    codes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint16))

    def pack(self) -> bytes:
        codes = np.ascontiguousarray(self.codes, dtype=">u2")
        return struct.pack(">BH", self.vmm, len(codes)) + codes.tobytes()

    @classmethod
    def unpack(cls, data: bytes) -> "XadcResp":
        if len(data) < 3:
            raise PayloadError("XADC_RESP payload shorter than its header")
        vmm, n = struct.unpack(">BH", data[:3])
        body = data[3:]
        if len(body) != 2 * n:
            raise PayloadError(f"XADC_RESP expects {2 * n} code bytes, got {len(body)}")
        return cls(vmm, np.frombuffer(body, dtype=">u2").astype(np.uint16))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, XadcResp)
            and self.vmm == other.vmm
            and np.array_equal(self.codes, other.codes)
        )


@dataclass(frozen=True)
class PulseTrigger:
    MSG_TYPE = MsgType.PULSE_TRIGGER
    count: int
    period_us: int = 0

    def pack(self) -> bytes:
        return struct.pack(">II", self.count, self.period_us)

    @classmethod
    def unpack(cls, data: bytes) -> "PulseTrigger":
        try:
            count, period = struct.unpack(">II", data)
        except struct.error:
            raise PayloadError("PULSE_TRIGGER payload must be 8 bytes") from None
        return cls(count, period)


@dataclass(frozen=True)
class SigboardSet:
    """mode 1-6 arms the signal board; mode 0 disarms it."""

    MSG_TYPE = MsgType.SIGBOARD_SET
    mode: int
    amplitude_counts: int = 0
    seed: int = 0

    def pack(self) -> bytes:
        return struct.pack(">BHI", self.mode, self.amplitude_counts, self.seed)

    @classmethod
    def unpack(cls, data: bytes) -> "SigboardSet":
        try:
            mode, amp, seed = struct.unpack(">BHI", data)
        except struct.error:
            raise PayloadError("SIGBOARD_SET payload must be 7 bytes") from None
        return cls(mode, amp, seed)


@dataclass(frozen=True)
class StatusResp:
    MSG_TYPE = MsgType.STATUS_RESP
    board_type: int
    n_vmm: int
    run_state: int
    fw: int = 0x0100

    def pack(self) -> bytes:
        return struct.pack(">BBBH", self.board_type, self.n_vmm, self.run_state, self.fw)

    @classmethod
    def unpack(cls, data: bytes) -> "StatusResp":
        try:
            bt, nv, rs, fw = struct.unpack(">BBBH", data)
        except struct.error:
            raise PayloadError("STATUS_RESP payload must be 5 bytes") from None
        return cls(bt, nv, rs, fw)


@dataclass(frozen=True)
class ErrorFrame:
    MSG_TYPE = MsgType.ERROR
    code: int
    seq_ref: int

    def pack(self) -> bytes:
        return struct.pack(">HI", self.code, self.seq_ref)

    @classmethod
    def unpack(cls, data: bytes) -> "ErrorFrame":
        try:
            code, seq_ref = struct.unpack(">HI", data)
        except struct.error:
            raise PayloadError("ERROR payload must be 6 bytes") from None
        return cls(code, seq_ref)


_BODY_TYPES = {
    cls.MSG_TYPE: cls
    for cls in (
        ConfigWrite,
        ConfigAck,
        RunStart,
        RunStop,
        HitData,
        XadcReq,
        XadcResp,
        PulseTrigger,
        SigboardSet,
        StatusReq,
        StatusResp,
        ErrorFrame,
    )
}

Body = (
    ConfigWrite
    | ConfigAck
    | RunStart
    | RunStop
    | HitData
    | XadcReq
    | XadcResp
    | PulseTrigger
    | SigboardSet
    | StatusReq
    | StatusResp
    | ErrorFrame
)


@dataclass(frozen=True)
class Frame:
    seq: int
    body: Body

    @property
    def msg_type(self) -> MsgType:
        return self.body.MSG_TYPE


def crc32(data: bytes) -> int:
    """Standard CRC-32 (reflected 0x04C11DB7, init/xorout 0xFFFFFFFF)."""
    return zlib.crc32(data) & 0xFFFFFFFF


def encode_frame(frame: Frame) -> bytes:
    payload = frame.body.pack()
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise PayloadError(f"payload of {len(payload)} bytes exceeds one datagram")
    if not 0 <= frame.seq <= 0xFFFFFFFF:
        raise PayloadError(f"seq {frame.seq} does not fit 4 bytes")
    header = _HEADER.pack(MAGIC, VERSION, int(frame.body.MSG_TYPE), frame.seq, len(payload))
    return header + payload


def decode_frame(data: bytes) -> Frame:
    if len(data) < HEADER_LEN:
        raise TruncatedHeaderError(f"frame of {len(data)} bytes is shorter than the header")
    magic, version, msg_type, seq, payload_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic.hex()}")
    if version != VERSION:
        raise BadVersionError(f"unknown version 0x{version:02x}")
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise UnknownTypeError(f"unknown msg_type 0x{msg_type:02x}") from None
    actual = len(data) - HEADER_LEN
    if payload_len != actual:
        raise LengthMismatchError(
            f"header says {payload_len} payload bytes, datagram carries {actual}"
        )
    if payload_len > MAX_PAYLOAD_BYTES:
        raise LengthMismatchError(f"payload_len {payload_len} exceeds one datagram")
    body = _BODY_TYPES[mt].unpack(data[HEADER_LEN:])
    return Frame(seq, body)

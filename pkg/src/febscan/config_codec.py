"""Bit-exact codec for the 1728-bit VMM3 configuration bitstream.

One VMM3 chip is configured by a 1728-bit stream (216 bytes): a 192-bit
global block followed by 64 per-channel blocks of 24 bits each.  Within a
block, fields are packed in declaration order, most-significant bit first;
bit 0 of the stream is the MSB of byte 0.  All bits not covered by a field
are reserved and must encode as zero.

Global block (bit offset, width):

    polarity        @0   1b   0 = negative input polarity, 1 = positive
    gain_sel        @1   3b   index into GAIN_TABLE_MV_PER_FC
    peak_time_sel   @4   2b   index into PEAK_TIME_TABLE_NS
    threshold_dac   @6   10b  global discriminator threshold, counts
    pulser_dac      @16  10b  internal test-pulse amplitude, counts
    monitor_mux     @26  7b   0-63 channel baseline, 64 threshold,
                              65 pulser, 66 reference, 67-127 reserved
    monitor_enable  @33  1b
    acq_enable      @34  1b
    reserved        @35-191

Channel block c starts at bit 192 + 24*c:

    mask              @+0  1b   1 = channel disabled
    test_pulse_enable @+1  1b
    trim              @+2  5b   subtracts from the effective threshold
    reserved          @+7-+23
"""

from __future__ import annotations

from dataclasses import dataclass, replace

GAIN_TABLE_MV_PER_FC = (0.5, 1.0, 3.0, 4.5, 6.0, 9.0, 12.0, 16.0)
PEAK_TIME_TABLE_NS = (25, 50, 100, 200)

BITSTREAM_BITS = 1728
BITSTREAM_BYTES = BITSTREAM_BITS // 8
GLOBAL_BITS = 192
CHANNEL_BITS = 24
N_CHANNELS = 64

MONITOR_MUX_THRESHOLD = 64
MONITOR_MUX_PULSER = 65
MONITOR_MUX_REFERENCE = 66


class ConfigError(ValueError):
    """Base class for configuration codec errors."""


class FieldRangeError(ConfigError):
    def __init__(self, field_name: str, value: int, lo: int, hi: int):
        self.field_name = field_name
        self.value = value
        super().__init__(f"{field_name} = {value} out of range {lo}..{hi}")


class LengthError(ConfigError):
    def __init__(self, got: int):
        self.got = got
        super().__init__(f"bitstream must be {BITSTREAM_BYTES} bytes, got {got}")


class ReservedBitsError(ConfigError):
    def __init__(self, offsets: list[int]):
        self.offsets = offsets
        head = ", ".join(str(o) for o in offsets[:8])
        more = "" if len(offsets) <= 8 else f" (+{len(offsets) - 8} more)"
        super().__init__(f"nonzero reserved bits at offsets {head}{more}")


@dataclass(frozen=True)
class GlobalConfig:
    polarity: int = 0
    gain_sel: int = 0
    peak_time_sel: int = 0
    threshold_dac: int = 0
    pulser_dac: int = 0
    monitor_mux: int = 0
    monitor_enable: int = 0
    acq_enable: int = 0

    @property
    def gain_mv_per_fc(self) -> float:
        return GAIN_TABLE_MV_PER_FC[self.gain_sel]

    @property
    def peak_time_ns(self) -> int:
        return PEAK_TIME_TABLE_NS[self.peak_time_sel]


@dataclass(frozen=True)
class ChannelConfig:
    mask: int = 0
    test_pulse_enable: int = 0
    trim: int = 0


@dataclass(frozen=True)
class VmmConfig:
    global_cfg: GlobalConfig
    channels: tuple[ChannelConfig, ...]

    def __post_init__(self):
        if len(self.channels) != N_CHANNELS:
            raise ConfigError(
                f"VmmConfig needs exactly {N_CHANNELS} channel blocks, "
                f"got {len(self.channels)}"
            )

    @classmethod
    def default(cls) -> "VmmConfig":
        return cls(GlobalConfig(), tuple(ChannelConfig() for _ in range(N_CHANNELS)))

    def with_global(self, **kwargs) -> "VmmConfig":
        return replace(self, global_cfg=replace(self.global_cfg, **kwargs))

    def with_channel(self, channel: int, **kwargs) -> "VmmConfig":
        if not 0 <= channel < N_CHANNELS:
            raise ConfigError(f"channel {channel} out of range 0..{N_CHANNELS - 1}")
        chans = list(self.channels)
        chans[channel] = replace(chans[channel], **kwargs)
        return replace(self, channels=tuple(chans))


# (name, bit offset within block, width, max value)
_GLOBAL_FIELDS = (
    ("polarity", 0, 1),
    ("gain_sel", 1, 3),
    ("peak_time_sel", 4, 2),
    ("threshold_dac", 6, 10),
    ("pulser_dac", 16, 10),
    ("monitor_mux", 26, 7),
    ("monitor_enable", 33, 1),
    ("acq_enable", 34, 1),
)
_CHANNEL_FIELDS = (
    ("mask", 0, 1),
    ("test_pulse_enable", 1, 1),
    ("trim", 2, 5),
)

# Precomputed (name, right-shift, mask) tables over the 1728-bit integer view
# of the stream (bit 0 of the stream = most significant bit of the integer).


def _shift(offset: int, width: int) -> int:
    return BITSTREAM_BITS - offset - width


_GLOBAL_PACK = tuple(
    (name, _shift(off, width), (1 << width) - 1) for name, off, width in _GLOBAL_FIELDS
)
_CHANNEL_PACK = tuple(
    tuple(
        (name, _shift(GLOBAL_BITS + CHANNEL_BITS * c + off, width), (1 << width) - 1)
        for name, off, width in _CHANNEL_FIELDS
    )
    for c in range(N_CHANNELS)
)


def _field_cover() -> int:
    cover = 0
    for _, sh, mask in _GLOBAL_PACK:
        cover |= mask << sh
    for per_chan in _CHANNEL_PACK:
        for _, sh, mask in per_chan:
            cover |= mask << sh
    return cover


_RESERVED_MASK = ((1 << BITSTREAM_BITS) - 1) ^ _field_cover()


def validate(cfg: VmmConfig) -> None:
    """Raise FieldRangeError on the first field outside its stated range."""
    g = cfg.global_cfg
    for name, _, width in _GLOBAL_FIELDS:
        v = getattr(g, name)
        if not 0 <= v <= (1 << width) - 1:
            raise FieldRangeError(name, v, 0, (1 << width) - 1)
    for c, ch in enumerate(cfg.channels):
        for name, _, width in _CHANNEL_FIELDS:
            v = getattr(ch, name)
            if not 0 <= v <= (1 << width) - 1:
                raise FieldRangeError(f"channel.{c}.{name}", v, 0, (1 << width) - 1)


def encode(cfg: VmmConfig) -> bytes:
    """Encode a validated config into its 216-byte bitstream."""
    validate(cfg)
    acc = 0
    g = cfg.global_cfg
    for name, sh, _ in _GLOBAL_PACK:
        acc |= getattr(g, name) << sh
    for c, ch in enumerate(cfg.channels):
        for name, sh, _ in _CHANNEL_PACK[c]:
            acc |= getattr(ch, name) << sh
    return acc.to_bytes(BITSTREAM_BYTES, "big")


def reserved_bit_offsets(bits: bytes) -> list[int]:
    """Stream bit offsets (0-based, MSB-first) of nonzero reserved bits."""
    if len(bits) != BITSTREAM_BYTES:
        raise LengthError(len(bits))
    bad = int.from_bytes(bits, "big") & _RESERVED_MASK
    offsets = []
    while bad:
        top = bad.bit_length() - 1
        offsets.append(BITSTREAM_BITS - 1 - top)
        bad ^= 1 << top
    return offsets


def decode(bits: bytes, strict: bool = True) -> VmmConfig:
    """Decode a 216-byte bitstream.

    Strict mode (default) raises ReservedBitsError when any reserved bit is
    set; lenient mode ignores them (use decode_verbose for the warning list).
    """
    cfg, _ = decode_verbose(bits, strict=strict)
    return cfg


def decode_verbose(bits: bytes, strict: bool = False) -> tuple[VmmConfig, list[str]]:
    """Decode and report nonzero reserved bits as a warning list."""
    if len(bits) != BITSTREAM_BYTES:
        raise LengthError(len(bits))
    offsets = reserved_bit_offsets(bits)
    if offsets and strict:
        raise ReservedBitsError(offsets)
    warnings = [f"reserved bit {o} is set" for o in offsets]
    acc = int.from_bytes(bits, "big")
    g = GlobalConfig(**{name: (acc >> sh) & mask for name, sh, mask in _GLOBAL_PACK})
    chans = tuple(
        ChannelConfig(**{name: (acc >> sh) & mask for name, sh, mask in _CHANNEL_PACK[c]})
        for c in range(N_CHANNELS)
    )
    return VmmConfig(g, chans), warnings


def _annotate(name: str, value: int) -> str:
    if name == "gain_sel":
        return f" ({GAIN_TABLE_MV_PER_FC[value]} mV/fC)"
    if name == "peak_time_sel":
        return f" ({PEAK_TIME_TABLE_NS[value]} ns)"
    if name == "polarity":
        return " (positive)" if value else " (negative)"
    if name == "monitor_mux":
        if value < N_CHANNELS:
            return f" (channel {value} baseline)"
        return {
            MONITOR_MUX_THRESHOLD: " (threshold monitor)",
            MONITOR_MUX_PULSER: " (pulser monitor)",
            MONITOR_MUX_REFERENCE: " (reference)",
        }.get(value, " (reserved)")
    return ""


def describe(cfg: VmmConfig) -> str:
    """Human-readable table of the fields that differ from all-zero."""
    lines = ["VMM3 configuration (non-default fields)"]
    g = cfg.global_cfg
    for name, _, _ in _GLOBAL_FIELDS:
        v = getattr(g, name)
        if v:
            lines.append(f"{name} = {v}{_annotate(name, v)}")
    for c, ch in enumerate(cfg.channels):
        for name, _, _ in _CHANNEL_FIELDS:
            v = getattr(ch, name)
            if v:
                lines.append(f"channel.{c}.{name} = {v}")
    return "\n".join(lines) + "\n"


def diff(a: VmmConfig, b: VmmConfig) -> list[tuple[str, int, int]]:
    """(field path, value in a, value in b) for every differing field."""
    out = []
    for name, _, _ in _GLOBAL_FIELDS:
        va, vb = getattr(a.global_cfg, name), getattr(b.global_cfg, name)
        if va != vb:
            out.append((name, va, vb))
    for c in range(N_CHANNELS):
        for name, _, _ in _CHANNEL_FIELDS:
            va, vb = getattr(a.channels[c], name), getattr(b.channels[c], name)
            if va != vb:
                out.append((f"channel.{c}.{name}", va, vb))
    return out


_GLOBAL_NAMES = {name for name, _, _ in _GLOBAL_FIELDS}
_CHANNEL_NAMES = {name for name, _, _ in _CHANNEL_FIELDS}


def apply_fields(cfg: VmmConfig, fields: dict) -> VmmConfig:
    """Apply `name -> integer` assignments onto an existing config.

    Names follow the field-file grammar; `channel.*.<name>` fans out to
    all 64 channels.  Returns the validated updated config.
    """
    for name, value in fields.items():
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"field {name!r}: value must be an integer")
        if name in _GLOBAL_NAMES:
            cfg = cfg.with_global(**{name: value})
        elif name.startswith("channel."):
            parts = name.split(".")
            if len(parts) != 3 or parts[2] not in _CHANNEL_NAMES:
                raise ConfigError(f"unknown field {name!r}")
            if parts[1] == "*":
                chans = range(N_CHANNELS)
            else:
                try:
                    c = int(parts[1])
                except ValueError:
                    raise ConfigError(f"bad channel index {parts[1]!r}") from None
                if not 0 <= c < N_CHANNELS:
                    raise ConfigError(f"channel {c} out of range 0..63")
                chans = (c,)
            for c in chans:
                cfg = cfg.with_channel(c, **{parts[2]: value})
        else:
            raise ConfigError(f"unknown field {name!r}")
    validate(cfg)
    return cfg


def parse_field_file(text: str) -> VmmConfig:
    """Build a config from line-oriented `name = integer` assignments.

    Global fields use their bare name; per-channel fields use
    `channel.<c>.<name>`.  Blank lines and `#` comments are allowed.
    Unknown names are rejected.
    """
    cfg = VmmConfig.default()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'name = integer': {raw!r}")
        name, _, value_s = line.partition("=")
        name = name.strip()
        try:
            value = int(value_s.strip(), 0)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad integer {value_s.strip()!r}") from None
        if name in _GLOBAL_NAMES:
            cfg = cfg.with_global(**{name: value})
        elif name.startswith("channel."):
            parts = name.split(".")
            if len(parts) != 3 or parts[2] not in _CHANNEL_NAMES:
                raise ConfigError(f"line {lineno}: unknown field {name!r}")
            try:
                c = int(parts[1])
            except ValueError:
                raise ConfigError(f"line {lineno}: bad channel index {parts[1]!r}") from None
            if not 0 <= c < N_CHANNELS:
                raise ConfigError(f"line {lineno}: channel {c} out of range 0..63")
            cfg = cfg.with_channel(c, **{parts[2]: value})
        else:
            raise ConfigError(f"line {lineno}: unknown field {name!r}")
    validate(cfg)
    return cfg

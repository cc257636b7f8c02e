"""Frame codec tests: golden datagrams, error taxonomy, CRC, round trips."""

import random
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from febscan import wire_protocol as wp
from febscan.config_codec import BITSTREAM_BYTES
from febscan.device_model import HIT_DTYPE

from conftest import golden_frame, golden_names
from oracles import crc32_ref

u8 = st.integers(0, 0xFF)
u16 = st.integers(0, 0xFFFF)
u32 = st.integers(0, 0xFFFFFFFF)


def _hits_array(rows):
    arr = np.zeros(len(rows), dtype=HIT_DTYPE)
    for i, row in enumerate(rows):
        arr[i] = row
    return arr


bodies = st.one_of(
    st.builds(wp.ConfigWrite, u8, st.binary(min_size=BITSTREAM_BYTES, max_size=BITSTREAM_BYTES)),
    st.builds(wp.ConfigAck, u8, u32),
    st.just(wp.RunStart()),
    st.just(wp.RunStop()),
    st.just(wp.StatusReq()),
    st.builds(
        lambda rows: wp.HitData(_hits_array(rows)),
        st.lists(st.tuples(u8, u8, u16, u16, u16), max_size=64),
    ),
    st.builds(wp.XadcReq, u8, u16),
    st.builds(
        lambda vmm, codes: wp.XadcResp(vmm, np.asarray(codes, dtype=np.uint16)),
        u8,
        st.lists(u16, max_size=64),
    ),
    st.builds(wp.PulseTrigger, u32, u32),
    st.builds(wp.SigboardSet, u8, u16, u32),
    st.builds(wp.StatusResp, u8, u8, u8, u16),
    st.builds(wp.ErrorFrame, u16, u32),
)

frames = st.builds(wp.Frame, u32, bodies)


class TestGoldenFrames:
    """Pinned datagrams decode to known fields and re-encode byte-exactly."""

    @pytest.mark.parametrize("name", golden_names())
    def test_reencode_is_byte_exact(self, name):
        blob = golden_frame(name)
        frame = wp.decode_frame(blob)
        assert wp.encode_frame(frame) == blob

    def test_run_start_bytes(self):
        assert golden_frame("run_start") == bytes.fromhex("a75c0103" "00000001" "00000000")
        frame = wp.decode_frame(golden_frame("run_start"))
        assert frame.seq == 1
        assert frame.body == wp.RunStart()

    def test_header_field_positions(self):
        blob = wp.encode_frame(wp.Frame(0x01020304, wp.StatusReq()))
        assert blob == bytes.fromhex("a75c010a" "01020304" "00000000")

    def test_config_ack_crc_matches_bitstream(self):
        write = wp.decode_frame(golden_frame("config_write"))
        ack = wp.decode_frame(golden_frame("config_ack"))
        assert isinstance(write.body, wp.ConfigWrite)
        assert isinstance(ack.body, wp.ConfigAck)
        assert ack.body.vmm == write.body.vmm == 1
        assert ack.body.crc == wp.crc32(write.body.bitstream)
        assert ack.body.crc == crc32_ref(write.body.bitstream)
        assert ack.body.crc == 0xB31FDE0E

    def test_hit_data_fields(self):
        frame = wp.decode_frame(golden_frame("hit_data"))
        hits = frame.body.hits
        assert frame.seq == 10
        assert len(hits) == 2
        assert tuple(hits[0]) == (0, 5, 225, 7, 1)
        assert tuple(hits[1]) == (2, 63, 1023, 4095, 0)

    def test_xadc_pair_fields(self):
        req = wp.decode_frame(golden_frame("xadc_req"))
        resp = wp.decode_frame(golden_frame("xadc_resp"))
        assert req.body == wp.XadcReq(vmm=0, n_samples=100)
        assert resp.body.vmm == 0
        assert resp.body.codes.tolist() == [655, 2048, 4095]

    def test_remaining_fixture_fields(self):
        assert wp.decode_frame(golden_frame("run_stop")).body == wp.RunStop()
        assert wp.decode_frame(golden_frame("status_req")).body == wp.StatusReq()
        assert wp.decode_frame(golden_frame("pulse_trigger")).body == wp.PulseTrigger(256, 0)
        assert wp.decode_frame(golden_frame("sigboard_set")).body == wp.SigboardSet(
            mode=3, amplitude_counts=140, seed=99
        )
        assert wp.decode_frame(golden_frame("status_resp")).body == wp.StatusResp(
            board_type=0, n_vmm=3, run_state=1, fw=0x0100
        )
        err = wp.decode_frame(golden_frame("error")).body
        assert err == wp.ErrorFrame(code=wp.ErrorCode.NOT_RUNNING, seq_ref=5)


class TestCrc:
    def test_check_value(self):
        # Standard CRC-32 check input.
        assert wp.crc32(b"123456789") == 0xCBF43926

    def test_empty(self):
        assert wp.crc32(b"") == 0

    @given(st.binary(max_size=512))
    @settings(max_examples=200, deadline=None)
    def test_matches_bitwise_reference(self, data):
        assert wp.crc32(data) == crc32_ref(data)


class TestDecodeErrors:
    def test_truncated_header(self):
        for n in (0, 1, 11):
            with pytest.raises(wp.TruncatedHeaderError):
                wp.decode_frame(b"\xa7\x5c\x01\x03"[:n] + b"\x00" * max(0, n - 4))

    def test_bad_magic(self):
        blob = bytearray(golden_frame("run_start"))
        blob[0] ^= 0xFF
        with pytest.raises(wp.BadMagicError):
            wp.decode_frame(bytes(blob))

    def test_bad_version(self):
        blob = bytearray(golden_frame("run_start"))
        blob[2] = 0x02
        with pytest.raises(wp.BadVersionError):
            wp.decode_frame(bytes(blob))

    @pytest.mark.parametrize("mt", [0x00, 0x0D, 0xFF])
    def test_unknown_type(self, mt):
        blob = bytearray(golden_frame("run_start"))
        blob[3] = mt
        with pytest.raises(wp.UnknownTypeError):
            wp.decode_frame(bytes(blob))

    def test_length_mismatch_both_directions(self):
        blob = bytearray(golden_frame("status_resp"))
        blob[8:12] = struct.pack(">I", 6)
        with pytest.raises(wp.LengthMismatchError):
            wp.decode_frame(bytes(blob))
        blob[8:12] = struct.pack(">I", 4)
        with pytest.raises(wp.LengthMismatchError):
            wp.decode_frame(bytes(blob))

    def test_nonempty_payload_on_empty_body(self):
        blob = struct.pack(">2sBBII", wp.MAGIC, 1, int(wp.MsgType.RUN_START), 0, 1) + b"\x00"
        with pytest.raises(wp.PayloadError):
            wp.decode_frame(blob)

    def test_config_write_payload_size(self):
        payload = b"\x00" * BITSTREAM_BYTES  # vmm byte missing
        blob = struct.pack(">2sBBII", wp.MAGIC, 1, 0x01, 0, len(payload)) + payload
        with pytest.raises(wp.PayloadError):
            wp.decode_frame(blob)

    def test_hit_data_count_over_cap(self):
        n = wp.MAX_HITS_PER_FRAME + 1
        payload = struct.pack(">H", n) + b"\x00" * (8 * n)
        blob = struct.pack(">2sBBII", wp.MAGIC, 1, 0x05, 0, len(payload)) + payload
        with pytest.raises(wp.PayloadError):
            wp.decode_frame(blob)

    def test_hit_data_count_body_mismatch(self):
        payload = struct.pack(">H", 2) + b"\x00" * 8
        blob = struct.pack(">2sBBII", wp.MAGIC, 1, 0x05, 0, len(payload)) + payload
        with pytest.raises(wp.PayloadError):
            wp.decode_frame(blob)

    def test_xadc_resp_count_body_mismatch(self):
        payload = struct.pack(">BH", 0, 3) + b"\x00" * 4
        blob = struct.pack(">2sBBII", wp.MAGIC, 1, 0x07, 0, len(payload)) + payload
        with pytest.raises(wp.PayloadError):
            wp.decode_frame(blob)

    @pytest.mark.parametrize(
        "mt,payload",
        [
            (0x02, b"\x00" * 4),  # CONFIG_ACK wants 5
            (0x06, b"\x00" * 2),  # XADC_REQ wants 3
            (0x08, b"\x00" * 7),  # PULSE_TRIGGER wants 8
            (0x09, b"\x00" * 6),  # SIGBOARD_SET wants 7
            (0x0B, b"\x00" * 4),  # STATUS_RESP wants 5
            (0x0C, b"\x00" * 5),  # ERROR wants 6
        ],
    )
    def test_fixed_body_size_enforced(self, mt, payload):
        blob = struct.pack(">2sBBII", wp.MAGIC, 1, mt, 0, len(payload)) + payload
        with pytest.raises(wp.PayloadError):
            wp.decode_frame(blob)


class TestEncodeGuards:
    @pytest.mark.parametrize("seq", [-1, 1 << 32])
    def test_seq_must_fit_u32(self, seq):
        with pytest.raises(wp.PayloadError):
            wp.encode_frame(wp.Frame(seq, wp.RunStart()))

    def test_hit_batch_cap(self):
        hits = np.zeros(wp.MAX_HITS_PER_FRAME + 1, dtype=HIT_DTYPE)
        with pytest.raises(wp.PayloadError):
            wp.encode_frame(wp.Frame(0, wp.HitData(hits)))

    def test_bitstream_length_enforced(self):
        with pytest.raises(wp.PayloadError):
            wp.encode_frame(wp.Frame(0, wp.ConfigWrite(0, b"\x00" * 10)))

    def test_max_hits_frame_fits_one_datagram(self):
        hits = np.zeros(wp.MAX_HITS_PER_FRAME, dtype=HIT_DTYPE)
        blob = wp.encode_frame(wp.Frame(0, wp.HitData(hits)))
        assert len(blob) <= wp.MAX_FRAME_BYTES


class TestRoundTrip:
    @given(frames)
    @settings(max_examples=300, deadline=None)
    def test_decode_inverts_encode(self, frame):
        blob = wp.encode_frame(frame)
        back = wp.decode_frame(blob)
        assert back == frame
        assert wp.encode_frame(back) == blob

    def test_fuzz_never_raises_outside_taxonomy(self):
        rng = random.Random(0xF00D)
        decoded = 0
        for _ in range(20000):
            n = rng.randrange(0, 64)
            blob = rng.randbytes(n)
            if rng.random() < 0.5:
                # Bias toward plausible headers so deeper branches get hit.
                blob = b"\xa7\x5c\x01" + bytes([rng.randrange(0, 16)]) + blob
            try:
                wp.decode_frame(blob)
                decoded += 1
            except wp.FrameError:
                pass
        assert decoded < 100  # nearly all random blobs must be rejected

    def test_mutated_valid_frames_stay_in_taxonomy(self):
        rng = random.Random(7)
        base = [golden_frame(name) for name in golden_names()]
        for _ in range(5000):
            blob = bytearray(rng.choice(base))
            for _ in range(rng.randrange(1, 4)):
                blob[rng.randrange(len(blob))] ^= 1 << rng.randrange(8)
            try:
                frame = wp.decode_frame(bytes(blob))
                assert wp.encode_frame(frame) == bytes(blob)
            except wp.FrameError:
                pass

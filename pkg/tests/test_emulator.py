"""Board emulator tests: dispatch, error codes, stimulus modes, determinism."""

import threading

import numpy as np
import pytest

from febscan import wire_protocol as wp
from febscan.client import BoardClient, BoardErrorResponse
from febscan.config_codec import (
    MONITOR_MUX_REFERENCE,
    ChannelConfig,
    GlobalConfig,
    VmmConfig,
    encode,
)
from febscan.device_model import Fault
from febscan.emulator import (
    MAX_PULSE_COUNT,
    MAX_XADC_SAMPLES,
    TICKS_PER_CYCLE,
    BoardDescriptor,
    BoardEmulator,
    ScenarioError,
    parse_scenario,
)
from febscan.transport import InMemoryTransport, UdpTransport, parse_hostport

from conftest import golden_frame, make_board
from oracles import crc32_ref


def make_cfg(channels=None, **global_fields):
    overrides = channels or {}
    chans = tuple(ChannelConfig(**overrides.get(c, {})) for c in range(64))
    return VmmConfig(GlobalConfig(**global_fields), chans)


# high-amplitude stimulus so every pulse clears the default threshold
HOT = dict(gain_sel=2, acq_enable=1, threshold_dac=100, pulser_dac=300)


def arm_all(client, n_vmm, cfg):
    for v in range(n_vmm):
        client.write_config(v, cfg)
    client.run_start()


class TestBoardDescriptor:
    def test_known_boards(self):
        p = BoardDescriptor.from_name("pfeb")
        s = BoardDescriptor.from_name("sfeb")
        assert (p.n_vmm, p.n_channels, p.type_code) == (3, 192, 0)
        assert (s.n_vmm, s.n_channels, s.type_code) == (8, 512, 1)

    def test_unknown_board(self):
        with pytest.raises(ValueError):
            BoardDescriptor.from_name("qfeb")


class TestScenarioParsing:
    def test_full_grammar(self):
        sc = parse_scenario(
            """
            # production fault sample
            board = sfeb
            seed = 0xdead
            vmm.2.channel.7.fault = dead
            vmm.0.channel.*.noise_sigma_mv = 1.5
            vmm.*.channel.3.baseline_mv = 170
            """
        )
        assert sc.board == "sfeb"
        assert sc.seed == 0xDEAD
        assert sc.overrides[(2, 7)]["fault"] == Fault.parse("dead")
        assert all(sc.overrides[(0, c)]["noise_sigma_mv"] == 1.5 for c in range(64))
        assert all(sc.overrides[(v, 3)]["baseline_mv"] == 170.0 for v in range(8))

    def test_later_lines_override(self):
        sc = parse_scenario(
            "vmm.0.channel.*.fault = dead\nvmm.0.channel.5.fault = none\n"
        )
        assert sc.overrides[(0, 5)]["fault"] == Fault.parse("none")
        assert sc.overrides[(0, 4)]["fault"] == Fault.parse("dead")

    @pytest.mark.parametrize(
        "line",
        [
            "vmm.3.channel.0.fault = dead",  # vmm out of range for default pfeb
            "vmm.0.channel.64.fault = dead",
            "vmm.0.channel.0.wobble = 3",
            "vmm.0.channel.0.fault = confused",
            "vmm.0.channel.0.noise_sigma_mv = -1",
            "seed = -1",
            "seed = 18446744073709551616",
            "board = qfeb",
            "just some words",
        ],
    )
    def test_rejects(self, line):
        with pytest.raises(ScenarioError):
            parse_scenario(line)

    def test_board_line_must_precede_wildcards(self):
        # vmm.* expands against the board declared so far
        sc = parse_scenario("board = sfeb\nvmm.7.channel.0.fault = stuck\n")
        assert (7, 0) in sc.overrides
        with pytest.raises(ScenarioError):
            parse_scenario("vmm.7.channel.0.fault = stuck\nboard = sfeb\n")

    def test_override_does_not_shift_neighbors(self):
        plain = BoardEmulator("pfeb", seed=3)
        tweaked = BoardEmulator("pfeb", seed=3, overrides={(1, 10): {"baseline_mv": 400.0}})
        assert tweaked.vmms[1].baselines[10] == 400.0
        mask = np.ones(64, dtype=bool)
        mask[10] = False
        assert np.array_equal(tweaked.vmms[1].baselines[mask], plain.vmms[1].baselines[mask])
        assert np.array_equal(tweaked.vmms[0].baselines, plain.vmms[0].baselines)


class TestConfigPath:
    def test_ack_crc_dual_route(self, pfeb):
        emu, client = pfeb
        bits = golden_frame("config_write")[13:]  # payload minus the vmm byte
        assert len(bits) == 216
        crc = client.write_config(1, bits)
        assert crc == wp.crc32(bits) == crc32_ref(bits) == 0xB31FDE0E
        assert emu.vmms[1].config.global_cfg.threshold_dac == 1023

    def test_bad_vmm_index(self, pfeb):
        _, client = pfeb
        with pytest.raises(BoardErrorResponse) as e:
            client.write_config(3, make_cfg())
        assert e.value.code == wp.ErrorCode.BAD_VMM_INDEX

    def test_reserved_bits_tolerated(self, pfeb):
        # boards latch what they are sent; strict checking is a host concern
        emu, client = pfeb
        bits = bytearray(encode(make_cfg(gain_sel=3)))
        bits[10] |= 0x01
        client.write_config(0, bytes(bits))
        assert emu.vmms[0].config.global_cfg.gain_sel == 3


class TestPowerUpState:
    def test_unconfigured_board_answers_safely(self):
        # reset registers: monitor off, acquisition off
        _, client = make_board("pfeb", seed=0)
        with pytest.raises(BoardErrorResponse) as e:
            client.xadc(0, 4)
        assert e.value.code == wp.ErrorCode.MONITOR_DISABLED
        client.run_start()
        client.sigboard_set(2, amplitude_counts=200)
        assert len(client.pulse(5)) == 0


class TestRunAndStatus:
    def test_status_fields_and_run_state(self, pfeb):
        emu, client = pfeb
        st = client.status()
        assert (st.board_type, st.n_vmm, st.run_state) == (0, 3, 0)
        assert client.run_start().run_state == 1
        assert emu.running
        assert client.run_stop().run_state == 0

    def test_sfeb_status(self):
        _, client = make_board("sfeb")
        st = client.status()
        assert (st.board_type, st.n_vmm) == (1, 8)


class TestXadcPath:
    def test_reference_codes(self, pfeb):
        _, client = pfeb
        client.write_config(0, make_cfg(monitor_mux=MONITOR_MUX_REFERENCE, monitor_enable=1))
        codes = client.xadc(0, 5)
        assert codes.tolist() == [2048] * 5

    def test_error_codes(self, pfeb):
        _, client = pfeb
        cases = [
            (lambda c: c.xadc(3, 1), wp.ErrorCode.BAD_VMM_INDEX, None),
            (lambda c: c.xadc(0, MAX_XADC_SAMPLES + 1), wp.ErrorCode.MALFORMED_PAYLOAD,
             make_cfg(monitor_mux=0, monitor_enable=1)),
            (lambda c: c.xadc(0, 1), wp.ErrorCode.MONITOR_DISABLED, make_cfg(monitor_mux=0)),
            (lambda c: c.xadc(0, 1), wp.ErrorCode.RESERVED_MUX,
             make_cfg(monitor_mux=67, monitor_enable=1)),
        ]
        for call, code, cfg in cases:
            if cfg is not None:
                client.write_config(0, cfg)
            with pytest.raises(BoardErrorResponse) as e:
                call(client)
            assert e.value.code == code

    def test_response_only_types_rejected(self, pfeb):
        emu, _ = pfeb
        out = emu.handle_frame(wp.Frame(9, wp.ConfigAck(0, 0)))
        assert isinstance(out[0].body, wp.ErrorFrame)
        assert out[0].body.code == wp.ErrorCode.MALFORMED_PAYLOAD
        assert out[0].body.seq_ref == 9


class TestPulsePath:
    def test_not_running(self, pfeb):
        _, client = pfeb
        client.write_config(0, make_cfg(**HOT, channels={3: dict(test_pulse_enable=1)}))
        with pytest.raises(BoardErrorResponse) as e:
            client.pulse(1)
        assert e.value.code == wp.ErrorCode.NOT_RUNNING

    def test_count_cap(self, pfeb):
        _, client = pfeb
        client.run_start()
        with pytest.raises(BoardErrorResponse) as e:
            client.pulse(MAX_PULSE_COUNT + 1)
        assert e.value.code == wp.ErrorCode.MALFORMED_PAYLOAD

    def test_internal_pulses_hit_enabled_channel(self, pfeb):
        _, client = pfeb
        client.write_config(0, make_cfg(**HOT, channels={3: dict(test_pulse_enable=1)}))
        client.run_start()
        hits = client.pulse(50)
        assert len(hits) == 50
        assert set(hits["vmm"].tolist()) == {0}
        assert set(hits["channel"].tolist()) == {3}
        assert set(hits["flags"].tolist()) == {1}  # internal-pulse flag

    def test_no_tpe_no_hits(self, pfeb):
        _, client = pfeb
        client.write_config(0, make_cfg(**HOT))
        client.run_start()
        assert len(client.pulse(20)) == 0

    def test_stuck_channel_tick_rate(self):
        _, client = make_board("pfeb", seed=4, overrides={(2, 40): {"fault": Fault.parse("stuck")}})
        client.write_config(2, make_cfg(gain_sel=2, acq_enable=1))
        client.run_start()
        hits = client.pulse(10)
        assert len(hits) == 10 * TICKS_PER_CYCLE
        assert set(hits["channel"].tolist()) == {40}
        # bcid advances one per tick
        assert hits["bcid"].tolist() == list(range(10 * TICKS_PER_CYCLE))


class TestSigboardModes:
    def _armed(self, seed=11, board="pfeb"):
        emu, client = make_board(board, seed=seed)
        for v in range(emu.descriptor.n_vmm):
            client.write_config(v, make_cfg(gain_sel=2, acq_enable=1, threshold_dac=100))
        client.run_start()
        return emu, client

    def test_mode1_first_channel_only(self):
        _, client = self._armed()
        client.sigboard_set(1, amplitude_counts=200)
        hits = client.pulse(30)
        assert len(hits) == 30
        assert set(hits["vmm"].tolist()) == {0}
        assert set(hits["channel"].tolist()) == {0}
        assert set(hits["flags"].tolist()) == {0}  # external stimulus

    def test_mode2_all_channels(self):
        _, client = self._armed()
        client.sigboard_set(2, amplitude_counts=200)
        hits = client.pulse(3)
        assert len(hits) == 3 * 192

    def test_mode3_walking_one(self):
        _, client = self._armed()
        client.sigboard_set(3, amplitude_counts=200)
        hits = client.pulse(200)  # wraps past 192
        assert len(hits) == 200
        got = [int(h["vmm"]) * 64 + int(h["channel"]) for h in hits]
        assert got == [i % 192 for i in range(200)]

    def test_mode4_parity_alternates(self):
        _, client = self._armed()
        client.sigboard_set(4, amplitude_counts=200)
        hits = client.pulse(2)
        first, second = hits[:96], hits[96:]
        assert len(hits) == 192
        assert all(int(h["channel"]) % 2 == 0 for h in first)
        assert all(int(h["channel"]) % 2 == 1 for h in second)

    def test_mode5_seeded_subset_reproduces(self):
        hits_a = self._mode5_hits(seed=21)
        hits_b = self._mode5_hits(seed=21)
        assert np.array_equal(hits_a, hits_b)
        # roughly half of 192 channels per cycle
        assert 40 < len(hits_a) / 8 < 152

    def _mode5_hits(self, seed):
        _, client = self._armed(seed=seed)
        client.sigboard_set(5, amplitude_counts=200, seed=77)
        return client.pulse(8)

    def test_mode6_ramp(self):
        emu, client = self._armed()
        # threshold above pedestal so the ramp crosses it mid-sweep
        for v in range(emu.descriptor.n_vmm):
            client.write_config(v, make_cfg(gain_sel=2, acq_enable=1, threshold_dac=300))
        client.sigboard_set(6, amplitude_counts=400)
        hits = client.pulse(40)
        ch0 = hits[(hits["vmm"] == 0) & (hits["channel"] == 0)]
        # early cycles sit below threshold, the ramp then rises monotonically
        assert 0 < len(ch0) < 40
        pdo = ch0["pdo"].astype(int)
        assert (np.diff(pdo) > -8).all()  # monotone up to noise
        assert pdo[-1] > pdo[0]

    def test_mode0_disarms(self):
        _, client = self._armed()
        client.sigboard_set(2, amplitude_counts=200)
        assert len(client.pulse(1)) == 192
        client.sigboard_off()
        assert len(client.pulse(1)) == 0  # back to internal pulser, no tpe set

    def test_invalid_mode(self):
        _, client = self._armed()
        with pytest.raises(BoardErrorResponse) as e:
            client.sigboard_set(7, amplitude_counts=10)
        assert e.value.code == wp.ErrorCode.MALFORMED_PAYLOAD


class TestFraming:
    def test_garbage_datagram_gets_error(self):
        emu = BoardEmulator("pfeb")
        out = emu.handle_datagram(b"\x00" * 30)
        frame = wp.decode_frame(out[0])
        assert isinstance(frame.body, wp.ErrorFrame)
        assert frame.body.code == wp.ErrorCode.MALFORMED_PAYLOAD
        assert frame.body.seq_ref == 0

    def test_truncated_frame_recovers_seq(self):
        emu = BoardEmulator("pfeb")
        # valid header prefix with seq 0x22, truncated payload
        blob = bytes.fromhex("a75c0101" "00000022" "000000d9") + b"\x00" * 10
        frame = wp.decode_frame(emu.handle_datagram(blob)[0])
        assert frame.body.seq_ref == 0x22

    def test_hit_batching_conserves_hits(self):
        emu, client = make_board("sfeb", seed=2)
        for v in range(8):
            client.write_config(v, make_cfg(gain_sel=2, acq_enable=1, threshold_dac=100))
        client.run_start()
        client.sigboard_set(2, amplitude_counts=200)
        # 20 cycles x 512 channels = 10240 hits > two full frames
        frames = emu.handle_frame(wp.Frame(99, wp.PulseTrigger(20, 0)))
        hit_frames = [f for f in frames if isinstance(f.body, wp.HitData)]
        sizes = [len(f.body.hits) for f in hit_frames]
        assert sum(sizes) == 20 * 512
        assert all(s <= wp.MAX_HITS_PER_FRAME for s in sizes)
        assert isinstance(frames[-1].body, wp.StatusResp)

    def test_deterministic_response_bytes(self):
        script = [
            wp.encode_frame(wp.Frame(1, wp.StatusReq())),
            golden_frame("config_write"),
            wp.encode_frame(wp.Frame(3, wp.RunStart())),
            wp.encode_frame(wp.Frame(4, wp.SigboardSet(2, 300, 0))),
            wp.encode_frame(wp.Frame(5, wp.PulseTrigger(5, 0))),
            wp.encode_frame(wp.Frame(6, wp.XadcReq(0, 3))),
        ]
        outs = []
        for _ in range(2):
            emu = BoardEmulator("pfeb", seed=123)
            outs.append([bytes(o) for blob in script for o in emu.handle_datagram(blob)])
        assert outs[0] == outs[1]


class TestUdpService:
    def test_round_trip_and_shutdown(self):
        emu = BoardEmulator("pfeb", seed=1)
        stop = threading.Event()
        ready = threading.Event()
        t = threading.Thread(
            target=emu.serve_udp, kwargs=dict(port=0, stop_event=stop, ready=ready), daemon=True
        )
        t.start()
        assert ready.wait(5.0)
        host, port = emu.bound_address
        with BoardClient(UdpTransport(host, port)) as client:
            st = client.status()
            assert (st.board_type, st.n_vmm) == (0, 3)
            client.write_config(0, make_cfg(monitor_mux=MONITOR_MUX_REFERENCE, monitor_enable=1))
            assert client.xadc(0, 4).tolist() == [2048] * 4
        stop.set()
        t.join(5.0)
        assert not t.is_alive()

    def test_parse_hostport(self):
        assert parse_hostport("10.0.0.5:7690") == ("10.0.0.5", 7690)
        assert parse_hostport("localhost", 7000) == ("localhost", 7000)
        assert parse_hostport(":8100") == ("127.0.0.1", 8100)

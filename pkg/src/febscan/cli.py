"""Command-line front end.

Verbs:
  emulate   run a board emulator on a UDP port
  scan      run production tests against a board, write reports
  report    list stored runs for a board
  serve     start the HTTP API + live bridge
  config    encode / decode / diff configuration bitstreams

Exit codes: 0 success or board pass, 1 board fail, 2 usage error,
3 I/O or protocol error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading

from . import __version__
from .client import BoardClient, ClientError
from .config_codec import (
    BITSTREAM_BYTES,
    ConfigError,
    decode_verbose,
    describe,
    diff as config_diff,
    encode as encode_config,
    parse_field_file,
)
from .control_service import ControlService, ServiceError
from .emulator import BoardDescriptor, BoardEmulator, ScenarioError, load_scenario
from .results_store import RunRecord, RunStore, StoreError, resolve_data_dir
from .scan_engine import (
    REPORT_TESTS,
    ScanEngine,
    ScanParams,
    classify_board,
    save_report,
    utcnow,
    iso,
)
from .transport import UdpTransport, parse_hostport

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BOARD_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="febscan",
        description="Production test bench for VMM3 front-end boards.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="verb", required=True)

    em = sub.add_parser("emulate", help="run a board emulator on UDP")
    em.add_argument("--board", choices=("pfeb", "sfeb"), default="pfeb")
    em.add_argument("--seed", type=int, default=0)
    em.add_argument("--scenario", help="scenario file (overrides --board/--seed)")
    em.add_argument("--bind", default="127.0.0.1:7690", help="host:port to listen on")

    sc = sub.add_parser("scan", help="run tests against a board")
    sc.add_argument("test", choices=tuple(REPORT_TESTS) + ("all",))
    sc.add_argument("--endpoint", required=True, help="board address host:port")
    sc.add_argument("--board-id", default="board")
    sc.add_argument("--data-dir", default=None)
    sc.add_argument("--gain-sel", type=int, default=2, choices=range(8))
    sc.add_argument("--baseline-samples", type=int, default=None)
    sc.add_argument("--dead-pulses", type=int, default=None)
    sc.add_argument("--samples-per-point", type=int, default=None)
    sc.add_argument("--timeout-ms", type=int, default=None)
    sc.add_argument("--retries", type=int, default=None)

    rp = sub.add_parser("report", help="list stored runs for a board")
    rp.add_argument("board_id")
    rp.add_argument("--data-dir", default=None)
    rp.add_argument("--json", action="store_true", help="machine-readable output")

    sv = sub.add_parser("serve", help="start HTTP API and live bridge")
    sv.add_argument("--endpoint", required=True, help="board address host:port")
    sv.add_argument("--http", default="127.0.0.1:8690", help="HTTP bind host:port")
    sv.add_argument("--board-id", default="board")
    sv.add_argument("--data-dir", default=None)
    sv.add_argument("--static", default=None, help="directory of dashboard files to serve")

    cf = sub.add_parser("config", help="bitstream utilities")
    cfsub = cf.add_subparsers(dest="config_verb", required=True)
    ce = cfsub.add_parser("encode", help="field file -> 216-byte bitstream")
    ce.add_argument("fields", help="field assignment file, - for stdin")
    ce.add_argument("-o", "--output", help="write binary here (default: hex to stdout)")
    cd = cfsub.add_parser("decode", help="bitstream -> field listing")
    cd.add_argument("bitstream", help="216-byte binary or 432-char hex file")
    cd.add_argument("--strict", action="store_true", help="reject set reserved bits")
    cdiff = cfsub.add_parser("diff", help="compare two bitstreams")
    cdiff.add_argument("a")
    cdiff.add_argument("b")
    return ap


# -- helpers ---------------------------------------------------------------


def _connect(endpoint: str, timeout_ms=None, retries=None) -> tuple:
    """Open a client and identify the board from its status reply."""
    host, port = parse_hostport(endpoint)
    kwargs = {}
    if timeout_ms is not None:
        kwargs["timeout_ms"] = timeout_ms
    if retries is not None:
        kwargs["retries"] = retries
    client = BoardClient(UdpTransport(host, port), **kwargs)
    status = client.status()
    board = BoardDescriptor.from_name("pfeb" if status.board_type == 0 else "sfeb")
    return client, board


def _read_bitstream(path: str) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == BITSTREAM_BYTES:
        return raw
    text = "".join(raw.decode("ascii", "strict").split())
    return bytes.fromhex(text)


# -- verbs -----------------------------------------------------------------


def cmd_emulate(args) -> int:
    if args.scenario:
        emu = BoardEmulator.from_scenario(load_scenario(args.scenario))
    else:
        emu = BoardEmulator(args.board, args.seed)
    host, port = parse_hostport(args.bind, default_port=7690)
    print(f"emulating {emu.descriptor.board_type} "
          f"({emu.descriptor.n_vmm} VMMs, seed {emu.seed}) on {host}:{port}")
    stop = threading.Event()
    try:
        emu.serve_udp(host, port, stop)
    except KeyboardInterrupt:
        stop.set()
        print("stopped")
    return EXIT_OK


def cmd_scan(args) -> int:
    overrides = {
        k: getattr(args, k)
        for k in ("baseline_samples", "dead_pulses", "samples_per_point",
                  "timeout_ms", "retries")
        if getattr(args, k) is not None
    }
    params = ScanParams(**overrides)
    client, board = _connect(args.endpoint, params.timeout_ms, params.retries)
    data_dir = resolve_data_dir(args.data_dir)
    store = RunStore(data_dir)
    engine = ScanEngine(client, board, params, board_id=args.board_id)
    started = utcnow()
    print(f"board {args.board_id}: {board.board_type}, {board.n_vmm} VMMs, "
          f"{board.n_channels} channels")

    with client:
        if args.test == "all":
            reports, verdict = engine.run_all(args.gain_sel)
        else:
            reports, verdict = _single_test(engine, args.test, args.gain_sel)

    files = {}
    for name, rep in reports.items():
        path = save_report(rep, data_dir, name)
        files[name] = path[len(data_dir) + 1:]
        print(f"  wrote {path}")
    record = RunRecord(
        board_id=args.board_id, board_type=board.board_type,
        started=started, finished=utcnow(), test=args.test,
        report_files=files,
        classification=verdict.to_dict() if verdict else {})
    store.append_run(record)
    print(f"run {record.run_id} recorded in {data_dir}")

    _print_summary(reports, verdict)
    if verdict is not None and verdict.status != "pass":
        return EXIT_BOARD_FAIL
    return EXIT_OK


def _single_test(engine: ScanEngine, test: str, gain_sel: int):
    if test == "baseline":
        return {"baseline": engine.run_baseline_scan()}, None
    if test == "threshold_cal":
        return {"threshold_cal": engine.run_dac_calibration("threshold")}, None
    if test == "pulser_cal":
        return {"pulser_cal": engine.run_dac_calibration("pulser")}, None
    baseline = engine.run_baseline_scan()
    threshold_cal = engine.run_dac_calibration("threshold")
    if test == "gain":
        pulser_cal = engine.run_dac_calibration("pulser")
        rep = engine.run_gain_test(baseline, pulser_cal, threshold_cal, gain_sel)
        return {"baseline": baseline, "threshold_cal": threshold_cal,
                "pulser_cal": pulser_cal, "gain": rep}, None
    rep = engine.run_dead_channel_test(baseline, threshold_cal, gain_sel)
    return {"baseline": baseline, "threshold_cal": threshold_cal,
            "dead_channel": rep}, None


def _print_summary(reports: dict, verdict) -> None:
    if "baseline" in reports:
        b = reports["baseline"]
        for v, vb in enumerate(b.vmms):
            print(f"  vmm {v}: baseline median {vb.median_mv:.1f} mV, "
                  f"spread {vb.spread_mv:.1f} mV, outliers {vb.outliers or 'none'}")
        if b.suggested_threshold_dac is not None:
            print(f"  suggested threshold DAC: {b.suggested_threshold_dac}")
    for key in ("threshold_cal", "pulser_cal"):
        if key in reports:
            c = reports[key]
            print(f"  {c.target} DAC: {c.slope_mv_per_count:.4f} mV/count "
                  f"+ {c.intercept_mv:.2f} mV, max residual {c.max_residual_mv:.3f} mV")
    if "gain" in reports:
        fails = reports["gain"].failed_channels()
        print(f"  gain: {len(fails)} channel(s) out of tolerance"
              + (f": {fails}" if fails else ""))
    if "dead_channel" in reports:
        confirmed = reports["dead_channel"].confirmed_channels()
        print(f"  dead-channel: {len(confirmed)} confirmed fault(s)"
              + (f": {confirmed}" if confirmed else ""))
    if verdict is not None:
        print(verdict.status.upper())
        for reason in verdict.reasons:
            print(f"  - {reason}")


def cmd_report(args) -> int:
    store = RunStore(resolve_data_dir(args.data_dir))
    runs = store.query(args.board_id)
    if args.json:
        print(json.dumps([r.to_dict() for r in runs], indent=1))
        return EXIT_OK
    if not runs:
        print(f"no stored runs for board {args.board_id}")
        return EXIT_OK
    for r in runs:
        status = r.classification.get("status", "-") if r.classification else "-"
        print(f"{r.run_id}  {iso(r.started)}  {r.test:<13} {status}")
        for reason in (r.classification or {}).get("reasons", []):
            print(f"    {reason}")
    return EXIT_OK


def cmd_serve(args) -> int:
    client, board = _connect(args.endpoint)
    store = RunStore(resolve_data_dir(args.data_dir))
    host, port = parse_hostport(args.http, default_port=8690)
    service = ControlService(client, board, store, board_id=args.board_id,
                             static_dir=args.static)
    addr = service.start_http(host, port)
    print(f"serving {board.board_type} '{args.board_id}' on http://{addr[0]}:{addr[1]} "
          f"(board at {args.endpoint}, data in {store.data_dir})")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        print("stopping")
        service.stop()
    return EXIT_OK


def cmd_config(args) -> int:
    if args.config_verb == "encode":
        if args.fields == "-":
            text = sys.stdin.read()
        else:
            with open(args.fields, "r", encoding="utf-8") as f:
                text = f.read()
        bits = encode_config(parse_field_file(text))
        if args.output:
            with open(args.output, "wb") as f:
                f.write(bits)
            print(f"wrote {len(bits)} bytes to {args.output}")
        else:
            print(bits.hex())
        return EXIT_OK
    if args.config_verb == "decode":
        cfg, warnings = decode_verbose(_read_bitstream(args.bitstream),
                                       strict=args.strict)
        print(describe(cfg))
        for w in warnings:
            print(f"warning: {w}")
        return EXIT_OK
    a, _ = decode_verbose(_read_bitstream(args.a), strict=False)
    b, _ = decode_verbose(_read_bitstream(args.b), strict=False)
    changes = config_diff(a, b)
    if not changes:
        print("configurations are identical")
    for path, va, vb in changes:
        print(f"{path}: {va} -> {vb}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    handlers = {
        "emulate": cmd_emulate,
        "scan": cmd_scan,
        "report": cmd_report,
        "serve": cmd_serve,
        "config": cmd_config,
    }
    try:
        return handlers[args.verb](args)
    except (ClientError, ServiceError, StoreError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_OK


def emu_main(argv=None) -> int:
    """Entry point for the feb-emu shortcut."""
    argv = list(sys.argv[1:] if argv is None else argv)
    return main(["emulate"] + argv)


if __name__ == "__main__":
    sys.exit(main())

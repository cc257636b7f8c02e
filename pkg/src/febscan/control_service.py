"""Operator-facing HTTP service: scan launching, live hit statistics, and
board control, consumed by the browser dashboard or curl.

Three activities share one board endpoint:
  request handlers  answer HTTP, never touch the board directly for long
  acquisition loop  fires pulse batches and feeds hits to the aggregator
  scan runner       one background scan at a time, owning the endpoint

The endpoint lock serializes the acquisition loop and the scan runner, so
a running scan pauses live acquisition instead of interleaving frames
with it.  Live statistics are aggregated in-process and only aggregates
cross the HTTP boundary; subscribers get additive deltas, so a slow
consumer coalesces updates instead of queueing raw hits.

Endpoints:
  POST /runs                 {"test": ..., "params": {...}} -> {"run_id": ...}
  GET  /runs/<id>            run status or completed reports
  GET  /boards/<id>/reports  stored run records for one board
  GET  /status[?channel=v:c] LiveStats snapshot
  GET  /live[?channel=v:c]   server-sent events, LiveStats deltas
  POST /config               {"vmm": 0|"all", "fields": {...}}
  POST /control              {"action": "start"|"stop", sigboard opts}
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse, parse_qs

import numpy as np

from .client import BoardClient, ClientError, BoardTimeoutError
from .config_codec import ConfigError, N_CHANNELS, VmmConfig, apply_fields
from .emulator import BoardDescriptor
from .results_store import RunRecord, RunStore
from .scan_engine import (
    REPORT_TESTS,
    Classification,
    ScanEngine,
    ScanParams,
    classify_board,
    save_report,
    utcnow,
)

log = logging.getLogger(__name__)

HIST_BINS = 64
HIST_SHIFT = 4  # pdo 0..1023 -> bin = pdo >> 4
LIVE_INTERVAL_S = 0.15
DEFAULT_ACQ_BATCH = 200


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class _Subscriber:
    channel: tuple
    last_counts: np.ndarray
    last_hist: np.ndarray
    last_total: int = 0
    last_time: float = field(default_factory=time.monotonic)


class LiveAggregator:
    """Hit counters and per-channel amplitude histograms, one writer.

    Counters are per (vmm, channel); histograms are kept for every channel
    (64 bins over pdo 0..1023) so channel selection is a read-side choice.
    All buffers are fixed-size; nothing grows with hit rate.
    """

    def __init__(self, board: BoardDescriptor):
        self.board = board
        self._lock = threading.Lock()
        self._counts = np.zeros((board.n_vmm, N_CHANNELS), dtype=np.int64)
        self._hist = np.zeros((board.n_channels, HIST_BINS), dtype=np.int64)
        self._total = 0
        self._rate_marks = []  # (monotonic, total), bounded
        self.run_state = "stopped"
        self.acquiring = False

    def ingest(self, hits: np.ndarray) -> None:
        if hits.size == 0:
            return
        flat = hits["vmm"].astype(np.int64) * N_CHANNELS + hits["channel"]
        bins = hits["pdo"].astype(np.int64) >> HIST_SHIFT
        np.clip(bins, 0, HIST_BINS - 1, out=bins)
        with self._lock:
            np.add.at(self._counts.reshape(-1), flat, 1)
            np.add.at(self._hist, (flat, bins), 1)
            self._total += int(hits.size)
            now = time.monotonic()
            self._rate_marks.append((now, self._total))
            if len(self._rate_marks) > 64:
                del self._rate_marks[:32]

    def reset(self) -> None:
        with self._lock:
            self._counts[:] = 0
            self._hist[:] = 0
            self._total = 0
            self._rate_marks = []

    def _rate_hz(self) -> float:
        marks = self._rate_marks
        if len(marks) < 2:
            return 0.0
        now = time.monotonic()
        # rate over roughly the last two seconds
        old = next((m for m in marks if now - m[0] <= 2.0), marks[0])
        dt = now - old[0]
        if dt <= 0:
            return 0.0
        return (self._total - old[1]) / dt

    def snapshot(self, channel: tuple = (0, 0)) -> dict:
        v, c = channel
        with self._lock:
            return {
                "board_type": self.board.board_type,
                "n_vmm": self.board.n_vmm,
                "run_state": self.run_state,
                "acquiring": self.acquiring,
                "total_hits": self._total,
                "rate_hz": round(self._rate_hz(), 1),
                "counts": self._counts.tolist(),
                "channel": [v, c],
                "histogram": self._hist[v * N_CHANNELS + c].tolist(),
            }

    def subscribe(self, channel: tuple) -> _Subscriber:
        v, c = channel
        with self._lock:
            return _Subscriber(
                channel,
                self._counts.copy(),
                self._hist[v * N_CHANNELS + c].copy(),
                self._total,
            )

    def delta(self, sub: _Subscriber) -> dict:
        """Additive changes since this subscriber's last call."""
        v, c = sub.channel
        idx = v * N_CHANNELS + c
        now = time.monotonic()
        with self._lock:
            dcounts = self._counts - sub.last_counts
            dhist = self._hist[idx] - sub.last_hist
            total = self._total
            state = self.run_state
            acquiring = self.acquiring
            rate = self._rate_hz()
        changed = np.nonzero(dcounts)
        counts_delta = {
            f"{int(vv)}:{int(cc)}": int(dcounts[vv, cc])
            for vv, cc in zip(*changed)
        }
        out = {
            "run_state": state,
            "acquiring": acquiring,
            "total_hits": total,
            "rate_hz": round(rate, 1),
            "counts_delta": counts_delta,
            "channel": [v, c],
            "histogram_delta": dhist.tolist() if dhist.any() else None,
        }
        sub.last_counts += dcounts
        sub.last_hist += dhist
        sub.last_total = total
        sub.last_time = now
        return out


class ControlService:
    """Ties client, scan engine, aggregator, store, and HTTP together."""

    def __init__(self, client: BoardClient, board: BoardDescriptor,
                 store: RunStore, board_id: str = "board",
                 params: ScanParams | None = None, static_dir: str | None = None):
        self.client = client
        self.board = board
        self.store = store
        self.board_id = board_id
        self.params = params or ScanParams()
        self.static_dir = static_dir
        self.aggregator = LiveAggregator(board)
        self._endpoint_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._configs = [VmmConfig.default() for _ in range(board.n_vmm)]
        self._active_run: dict | None = None
        self._finished_runs: dict[str, dict] = {}
        self._acq_stop = threading.Event()
        self._acq_thread: threading.Thread | None = None
        self._acq_batch = DEFAULT_ACQ_BATCH
        self._httpd: ThreadingHTTPServer | None = None
        self._http_thread: threading.Thread | None = None

    # -- acquisition loop --------------------------------------------------

    def _acq_loop(self) -> None:
        agg = self.aggregator
        while not self._acq_stop.is_set():
            with self._endpoint_lock:
                if self._acq_stop.is_set():
                    break
                try:
                    self.client.pulse(self._acq_batch, on_hits=agg.ingest)
                except ClientError as e:
                    log.error("acquisition batch failed: %s", e)
                    agg.acquiring = False
                    agg.run_state = "stopped"
                    return
            # let waiting scans grab the endpoint between batches
            time.sleep(0)
        agg.acquiring = False

    def start_acquisition(self, sigboard: dict | None = None,
                          batch: int | None = None) -> None:
        with self._state_lock:
            if self._acq_thread is not None and self._acq_thread.is_alive():
                raise ServiceError(409, "acquisition already running")
            if batch:
                self._acq_batch = int(batch)
            try:
                with self._endpoint_lock:
                    old_record = self.client.record
                    self.client.record = False
                    self.client.run_start()
                    if sigboard:
                        self.client.sigboard_set(
                            int(sigboard.get("mode", 2)),
                            int(sigboard.get("amplitude_counts", 140)),
                            int(sigboard.get("seed", 0)))
                    else:
                        self.client.sigboard_off()
            except BoardTimeoutError as e:
                self.client.record = old_record
                raise ServiceError(503, f"board unreachable: {e}") from e
            self.aggregator.run_state = "running"
            self.aggregator.acquiring = True
            self._acq_stop.clear()
            self._acq_thread = threading.Thread(
                target=self._acq_loop, name="acq-bridge", daemon=True)
            self._acq_thread.start()

    def stop_acquisition(self) -> None:
        with self._state_lock:
            self._acq_stop.set()
            t = self._acq_thread
        if t is not None:
            t.join(timeout=10)
        with self._endpoint_lock:
            try:
                self.client.run_stop()
            except ClientError as e:
                raise ServiceError(503, f"board unreachable: {e}") from e
            finally:
                self.client.record = True
        self.aggregator.run_state = "stopped"
        self.aggregator.acquiring = False

    # -- configuration -----------------------------------------------------

    def apply_config(self, vmm, fields: dict) -> dict:
        if vmm == "all":
            targets = list(range(self.board.n_vmm))
        else:
            v = int(vmm)
            if not 0 <= v < self.board.n_vmm:
                raise ServiceError(400, f"vmm {v} out of range")
            targets = [v]
        try:
            crcs = {}
            with self._endpoint_lock:
                for v in targets:
                    cfg = apply_fields(self._configs[v], fields)
                    crcs[str(v)] = self.client.write_config(v, cfg)
                    self._configs[v] = cfg
        except ConfigError as e:
            raise ServiceError(400, str(e)) from e
        except BoardTimeoutError as e:
            raise ServiceError(503, f"board unreachable: {e}") from e
        return {"applied": True, "crc": crcs}

    # -- scans -------------------------------------------------------------

    def launch_run(self, test: str, params_overrides: dict | None = None,
                   gain_sel: int | None = None) -> str:
        if test not in REPORT_TESTS and test != "all":
            raise ServiceError(400, f"unknown test {test!r}")
        if gain_sel is not None and not 0 <= int(gain_sel) <= 7:
            raise ServiceError(400, "gain_sel must be 0..7")
        with self._state_lock:
            if self._active_run is not None:
                raise ServiceError(409, "a scan is already in progress")
            base = self.params.to_dict()
            base.update(params_overrides or {})
            try:
                params = ScanParams.from_dict(base)
            except ValueError as e:
                raise ServiceError(400, str(e)) from e
            run_id = uuid.uuid4().hex
            self._active_run = {"run_id": run_id, "test": test,
                                "status": "running", "started": utcnow()}
            t = threading.Thread(target=self._run_scan,
                                 args=(run_id, test, params, gain_sel),
                                 name=f"scan-{test}", daemon=True)
            t.start()
            return run_id

    def _run_scan(self, run_id: str, test: str, params: ScanParams,
                  gain_sel: int | None) -> None:
        gain_sel = 2 if gain_sel is None else int(gain_sel)
        started = utcnow()
        engine = ScanEngine(self.client, self.board, params,
                            board_id=self.board_id)
        result: dict = {"run_id": run_id, "test": test, "started": started,
                        "board_id": self.board_id}
        try:
            with self._endpoint_lock:
                reports, classification = self._execute(engine, test, gain_sel)
            files = {}
            for name, rep in reports.items():
                path = save_report(rep, self.store.data_dir, name)
                files[name] = path[len(self.store.data_dir) + 1:]
            finished = utcnow()
            record = RunRecord(
                board_id=self.board_id, board_type=self.board.board_type,
                started=started, finished=finished, run_id=run_id, test=test,
                report_files=files,
                classification=classification.to_dict() if classification else {},
            )
            self.store.append_run(record)
            result.update(status="done", finished=finished,
                          reports={k: r.to_dict() for k, r in reports.items()},
                          classification=record.classification,
                          report_files=files)
        except Exception as e:
            log.exception("scan %s failed", test)
            result.update(status="error", error=str(e), finished=utcnow())
        finally:
            with self._state_lock:
                self._finished_runs[run_id] = result
                # recent-run cache only; older runs are served from the store
                while len(self._finished_runs) > 32:
                    self._finished_runs.pop(next(iter(self._finished_runs)))
                self._active_run = None

    def _execute(self, engine: ScanEngine, test: str, gain_sel: int):
        if test == "all":
            return engine.run_all(gain_sel)
        if test == "baseline":
            return {"baseline": engine.run_baseline_scan()}, None
        if test == "threshold_cal":
            return {"threshold_cal": engine.run_dac_calibration("threshold")}, None
        if test == "pulser_cal":
            return {"pulser_cal": engine.run_dac_calibration("pulser")}, None
        # gain and dead-channel need the prerequisite reports
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

    def run_status(self, run_id: str) -> dict:
        with self._state_lock:
            if self._active_run is not None and self._active_run["run_id"] == run_id:
                return dict(self._active_run)
            if run_id in self._finished_runs:
                return self._finished_runs[run_id]
        rec = self.store.get(run_id)
        if rec is None:
            raise ServiceError(404, f"unknown run {run_id}")
        out = rec.to_dict()
        out["status"] = "done"
        out["reports"] = {
            t: self.store.load_report(rel) for t, rel in rec.report_files.items()
        }
        return out

    def board_reports(self, board_id: str) -> list:
        return [r.to_dict() for r in self.store.query(board_id)]

    # -- HTTP --------------------------------------------------------------

    def start_http(self, host: str = "127.0.0.1", port: int = 0) -> tuple:
        handler = _make_handler(self)
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._httpd.daemon_threads = True
        self._http_thread = threading.Thread(
            target=self._httpd.serve_forever, name="http", daemon=True)
        self._http_thread.start()
        return self._httpd.server_address

    def stop(self) -> None:
        if self._acq_thread is not None and self._acq_thread.is_alive():
            try:
                self.stop_acquisition()
            except ServiceError:
                pass
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._http_thread.join(timeout=10)


def _parse_channel(qs: dict, board: BoardDescriptor) -> tuple:
    raw = qs.get("channel", ["0:0"])[0]
    try:
        v_s, c_s = raw.split(":")
        v, c = int(v_s), int(c_s)
    except ValueError:
        raise ServiceError(400, f"channel must be 'vmm:channel', got {raw!r}") from None
    if not (0 <= v < board.n_vmm and 0 <= c < N_CHANNELS):
        raise ServiceError(400, f"channel {raw} out of range")
    return v, c


def _make_handler(service: ControlService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "febscan"

        def log_message(self, fmt, *args):
            log.debug("http %s", fmt % args)

        # -- plumbing --

        def _json(self, status: int, payload) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _error(self, e: ServiceError) -> None:
            self._json(e.status, {"error": e.message})

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            raw = self.rfile.read(length)
            try:
                parsed = json.loads(raw)
            except ValueError:
                raise ServiceError(400, "request body is not valid JSON") from None
            if not isinstance(parsed, dict):
                raise ServiceError(400, "request body must be a JSON object")
            return parsed

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        # -- routes --

        def do_GET(self):
            url = urlparse(self.path)
            qs = parse_qs(url.query)
            parts = [p for p in url.path.split("/") if p]
            try:
                if url.path == "/status":
                    channel = _parse_channel(qs, service.board)
                    self._json(200, service.aggregator.snapshot(channel))
                elif url.path == "/live":
                    self._live(qs)
                elif len(parts) == 2 and parts[0] == "runs":
                    self._json(200, service.run_status(parts[1]))
                elif len(parts) == 3 and parts[0] == "boards" and parts[2] == "reports":
                    self._json(200, service.board_reports(parts[1]))
                else:
                    self._static(url.path)
            except ServiceError as e:
                self._error(e)
            except BrokenPipeError:
                pass
            except Exception as e:
                log.exception("GET %s failed", self.path)
                self._error(ServiceError(500, str(e)))

        def do_POST(self):
            url = urlparse(self.path)
            try:
                body = self._read_body()
                if url.path == "/runs":
                    run_id = service.launch_run(
                        body.get("test", "all"),
                        body.get("params"),
                        body.get("gain_sel"))
                    self._json(202, {"run_id": run_id})
                elif url.path == "/config":
                    out = service.apply_config(
                        body.get("vmm", "all"), body.get("fields") or {})
                    self._json(200, out)
                elif url.path == "/control":
                    action = body.get("action")
                    if action == "start":
                        service.start_acquisition(
                            body.get("sigboard"), body.get("batch"))
                        self._json(200, {"run_state": "running"})
                    elif action == "stop":
                        service.stop_acquisition()
                        self._json(200, {"run_state": "stopped"})
                    elif action == "reset_counters":
                        service.aggregator.reset()
                        self._json(200, {"reset": True})
                    else:
                        raise ServiceError(400, "action must be start, stop, or reset_counters")
                else:
                    raise ServiceError(404, f"no such endpoint {url.path}")
            except ServiceError as e:
                self._error(e)
            except Exception as e:
                log.exception("POST %s failed", self.path)
                self._error(ServiceError(500, str(e)))

        # -- live stream --

        def _live(self, qs: dict) -> None:
            channel = _parse_channel(qs, service.board)
            sub = service.aggregator.subscribe(channel)
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            try:
                while True:
                    delta = service.aggregator.delta(sub)
                    chunk = f"data: {json.dumps(delta)}\n\n".encode("utf-8")
                    self.wfile.write(chunk)
                    self.wfile.flush()
                    time.sleep(LIVE_INTERVAL_S)
            except (BrokenPipeError, ConnectionResetError):
                pass

        # -- static frontend --

        def _static(self, path: str) -> None:
            if service.static_dir is None:
                raise ServiceError(404, f"no such endpoint {path}")
            rel = path.lstrip("/") or "index.html"
            full = os.path.realpath(os.path.join(service.static_dir, rel))
            root = os.path.realpath(service.static_dir)
            if not full.startswith(root + os.sep) and full != root:
                raise ServiceError(404, "not found")
            if not os.path.isfile(full):
                raise ServiceError(404, f"no such file {rel}")
            ctype = {
                ".html": "text/html", ".js": "text/javascript",
                ".css": "text/css", ".map": "application/json",
                ".svg": "image/svg+xml",
            }.get(os.path.splitext(full)[1], "application/octet-stream")
            with open(full, "rb") as f:
                data = f.read()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return Handler

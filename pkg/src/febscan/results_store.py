"""Run bookkeeping: an append-only JSON-lines log of test runs plus the
per-run report files living next to it.

One record per line in `runs.log`.  A record is only considered committed
once its line is newline-terminated and fsynced; anything after the last
newline (a write cut short by a crash) is moved aside to
`runs.log.quarantined` when the store opens, so readers never see a torn
record.  The in-memory index is rebuilt from the log alone.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import uuid
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

ENV_DATA_DIR = "FEB_SCAN_DATA"
DEFAULT_DATA_DIR = "febscan-data"
LOG_NAME = "runs.log"


def resolve_data_dir(flag_value: str | None = None) -> str:
    if flag_value:
        return flag_value
    return os.environ.get(ENV_DATA_DIR) or DEFAULT_DATA_DIR


class StoreError(Exception):
    pass


class DuplicateRunError(StoreError):
    pass


@dataclass
class RunRecord:
    board_id: str
    board_type: str
    started: float
    finished: float
    run_id: str = ""
    test: str = "all"
    report_files: dict = field(default_factory=dict)  # test name -> relative path
    classification: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.run_id:
            self.run_id = uuid.uuid4().hex
        if self.finished < self.started:
            raise ValueError("finished timestamp precedes started")

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "board_id": self.board_id,
            "board_type": self.board_type,
            "test": self.test,
            "started": self.started,
            "finished": self.finished,
            "report_files": self.report_files,
            "classification": self.classification,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            board_id=d["board_id"],
            board_type=d["board_type"],
            started=d["started"],
            finished=d["finished"],
            run_id=d["run_id"],
            test=d.get("test", "all"),
            report_files=d.get("report_files", {}),
            classification=d.get("classification", {}),
        )


class RunStore:
    """Single-writer store over one data directory."""

    def __init__(self, data_dir: str | None = None):
        self.data_dir = resolve_data_dir(data_dir)
        os.makedirs(self.data_dir, exist_ok=True)
        self.log_path = os.path.join(self.data_dir, LOG_NAME)
        self._lock = threading.Lock()
        self._runs: dict[str, RunRecord] = {}
        self._by_key: set[tuple] = set()  # (board_id, started)
        self._recover_and_load()

    # -- loading -----------------------------------------------------------

    def _recover_and_load(self) -> None:
        if not os.path.exists(self.log_path):
            return
        with open(self.log_path, "rb") as f:
            raw = f.read()
        if not raw:
            return
        if not raw.endswith(b"\n"):
            # A write cut short mid-record: move the torn tail aside and
            # truncate the log back to its last committed record.
            cut = raw.rfind(b"\n") + 1
            tail = raw[cut:]
            qpath = self.log_path + ".quarantined"
            with open(qpath, "ab") as q:
                q.write(tail + b"\n")
                q.flush()
                os.fsync(q.fileno())
            with open(self.log_path, "r+b") as f:
                f.truncate(cut)
                f.flush()
                os.fsync(f.fileno())
            log.warning("quarantined torn %d-byte record tail to %s", len(tail), qpath)
            raw = raw[:cut]
        for line in raw.split(b"\n")[:-1]:
            if not line.strip():
                continue
            try:
                rec = RunRecord.from_dict(json.loads(line.decode("utf-8")))
            except (ValueError, KeyError, UnicodeDecodeError):
                log.warning("skipping undecodable run record: %r", line[:80])
                continue
            self._runs[rec.run_id] = rec
            self._by_key.add((rec.board_id, rec.started))

    # -- writes ------------------------------------------------------------

    def append_run(self, record: RunRecord) -> str:
        with self._lock:
            if record.run_id in self._runs:
                raise DuplicateRunError(f"run_id {record.run_id} already stored")
            key = (record.board_id, record.started)
            if key in self._by_key:
                raise DuplicateRunError(
                    f"run for board {record.board_id} at {record.started} already stored")
            line = json.dumps(record.to_dict(), separators=(",", ":")) + "\n"
            with open(self.log_path, "a", encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
            self._runs[record.run_id] = record
            self._by_key.add(key)
            return record.run_id

    # -- reads -------------------------------------------------------------

    def get(self, run_id: str) -> RunRecord | None:
        with self._lock:
            return self._runs.get(run_id)

    def query(self, board_id: str) -> list:
        """All runs for one board, ordered by start time."""
        with self._lock:
            runs = [r for r in self._runs.values() if r.board_id == board_id]
        return sorted(runs, key=lambda r: (r.started, r.run_id))

    def all_runs(self) -> list:
        with self._lock:
            runs = list(self._runs.values())
        return sorted(runs, key=lambda r: (r.started, r.run_id))

    def __len__(self) -> int:
        with self._lock:
            return len(self._runs)

    def report_path(self, rel: str) -> str:
        return os.path.join(self.data_dir, rel)

    def load_report(self, rel: str) -> dict:
        with open(self.report_path(rel), "r", encoding="utf-8") as f:
            return json.load(f)

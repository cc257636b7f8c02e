"""Run store tests: durability, torn-tail recovery, querying."""

import json
import os
import time

import pytest

from febscan.results_store import (
    DEFAULT_DATA_DIR,
    ENV_DATA_DIR,
    DuplicateRunError,
    RunRecord,
    RunStore,
    resolve_data_dir,
)


def rec(board="B001", started=100.0, finished=101.0, run_id="", **kw):
    return RunRecord(board, "pfeb", started, finished, run_id=run_id, **kw)


class TestResolveDataDir:
    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv(ENV_DATA_DIR, "/tmp/envdir")
        assert resolve_data_dir("/tmp/flagdir") == "/tmp/flagdir"

    def test_env_next(self, monkeypatch):
        monkeypatch.setenv(ENV_DATA_DIR, "/tmp/envdir")
        assert resolve_data_dir(None) == "/tmp/envdir"

    def test_default_last(self, monkeypatch):
        monkeypatch.delenv(ENV_DATA_DIR, raising=False)
        assert resolve_data_dir(None) == DEFAULT_DATA_DIR


class TestRunRecord:
    def test_auto_run_id_unique(self):
        ids = {rec(started=float(i), finished=float(i)).run_id for i in range(100)}
        assert len(ids) == 100
        assert all(len(i) == 32 for i in ids)

    def test_round_trip(self):
        r = rec(
            run_id="abc123",
            test="baseline",
            report_files={"baseline": "B001_baseline_x.json"},
            classification={"status": "pass", "reasons": []},
        )
        assert RunRecord.from_dict(r.to_dict()) == r

    def test_rejects_negative_duration(self):
        with pytest.raises(ValueError):
            rec(started=100.0, finished=99.0)


class TestAppendAndQuery:
    def test_round_trip_through_reload(self, tmp_path):
        store = RunStore(str(tmp_path))
        r = rec(run_id="r1", classification={"status": "fail", "reasons": ["x"]})
        store.append_run(r)
        again = RunStore(str(tmp_path))
        assert len(again) == 1
        assert again.get("r1") == r

    def test_duplicate_run_id_rejected(self, tmp_path):
        store = RunStore(str(tmp_path))
        store.append_run(rec(run_id="r1"))
        with pytest.raises(DuplicateRunError):
            store.append_run(rec(run_id="r1", started=200.0, finished=201.0))

    def test_duplicate_board_start_rejected(self, tmp_path):
        store = RunStore(str(tmp_path))
        store.append_run(rec(run_id="r1"))
        with pytest.raises(DuplicateRunError):
            store.append_run(rec(run_id="r2"))  # same (board, started)

    def test_query_sorted_and_filtered(self, tmp_path):
        store = RunStore(str(tmp_path))
        store.append_run(rec(board="B002", started=50.0, finished=51.0, run_id="other"))
        for i, started in enumerate((300.0, 100.0, 200.0)):
            store.append_run(rec(started=started, finished=started + 1, run_id=f"r{i}"))
        runs = store.query("B001")
        assert [r.started for r in runs] == [100.0, 200.0, 300.0]
        assert all(r.board_id == "B001" for r in runs)
        assert len(store.all_runs()) == 4
        assert store.get("missing") is None

    def test_log_is_append_only_json_lines(self, tmp_path):
        store = RunStore(str(tmp_path))
        store.append_run(rec(run_id="r1"))
        size_after_one = os.path.getsize(store.log_path)
        store.append_run(rec(run_id="r2", started=200.0, finished=201.0))
        with open(store.log_path, "rb") as f:
            data = f.read()
        # first record's bytes are untouched by the second append
        assert data[:size_after_one] == data[: data.index(b"\n") + 1]
        lines = data.decode().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["run_id"] == "r1"


class TestTornTailRecovery:
    def _store_with_tail(self, tmp_path, tail: bytes):
        store = RunStore(str(tmp_path))
        store.append_run(rec(run_id="r1"))
        store.append_run(rec(run_id="r2", started=200.0, finished=201.0))
        with open(store.log_path, "ab") as f:
            f.write(tail)
        return store.log_path

    def test_torn_tail_quarantined(self, tmp_path):
        log_path = self._store_with_tail(tmp_path, b'{"run_id": "r3", "board')
        store = RunStore(str(tmp_path))
        assert len(store) == 2
        assert store.get("r3") is None
        with open(log_path, "rb") as f:
            assert f.read().endswith(b"\n")
        with open(log_path + ".quarantined", "rb") as f:
            assert b'"r3"' in f.read()

    def test_recovered_log_accepts_appends(self, tmp_path):
        self._store_with_tail(tmp_path, b"garbage-without-newline")
        store = RunStore(str(tmp_path))
        store.append_run(rec(run_id="r3", started=300.0, finished=301.0))
        again = RunStore(str(tmp_path))
        assert {r.run_id for r in again.all_runs()} == {"r1", "r2", "r3"}

    def test_full_bad_line_skipped_not_fatal(self, tmp_path):
        store = RunStore(str(tmp_path))
        store.append_run(rec(run_id="r1"))
        with open(store.log_path, "ab") as f:
            f.write(b"not json at all\n")
        store2 = RunStore(str(tmp_path))
        assert len(store2) == 1
        # the bad line stays in place; appends still work
        store2.append_run(rec(run_id="r2", started=200.0, finished=201.0))
        assert len(RunStore(str(tmp_path))) == 2

    def test_empty_and_missing_log(self, tmp_path):
        assert len(RunStore(str(tmp_path))) == 0
        open(os.path.join(str(tmp_path), "runs.log"), "w").close()
        assert len(RunStore(str(tmp_path))) == 0


class TestScale:
    def test_thousand_runs_reload_quickly(self, tmp_path):
        store = RunStore(str(tmp_path))
        for i in range(1000):
            store.append_run(rec(started=float(i), finished=float(i) + 0.5, run_id=f"r{i:04d}"))
        t0 = time.perf_counter()
        again = RunStore(str(tmp_path))
        elapsed = time.perf_counter() - t0
        assert len(again) == 1000
        assert elapsed < 0.5
        runs = again.query("B001")
        assert [r.run_id for r in runs[:3]] == ["r0000", "r0001", "r0002"]


class TestReportFiles:
    def test_load_report_relative(self, tmp_path):
        store = RunStore(str(tmp_path))
        with open(os.path.join(str(tmp_path), "report.json"), "w") as f:
            json.dump({"test": "baseline"}, f)
        assert store.load_report("report.json") == {"test": "baseline"}

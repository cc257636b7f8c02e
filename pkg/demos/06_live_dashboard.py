"""
Watching a board live over the HTTP service
===========================================

The control service bridges the binary board link to plain HTTP: JSON
snapshots for polling, a server-sent event stream for dashboards, and a
run endpoint that executes scans in the background.  Everything a
browser UI uses is exercised here with nothing but urllib.
"""

import json
import tempfile
import time
import urllib.request

from febscan.client import BoardClient
from febscan.control_service import ControlService
from febscan.emulator import BoardEmulator
from febscan.results_store import RunStore
from febscan.transport import InMemoryTransport


def get(url):
    with urllib.request.urlopen(url, timeout=5) as r:
        return json.loads(r.read())


def post(url, body):
    req = urllib.request.Request(url, json.dumps(body).encode(),
                                 {"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=5) as r:
        return json.loads(r.read())


emu = BoardEmulator("pfeb", seed=3)
client = BoardClient(InMemoryTransport(emu))
data_dir = tempfile.mkdtemp(prefix="febscan-demo-")
svc = ControlService(client, emu.descriptor, RunStore(data_dir), board_id="DEMO06")
host, port = svc.start_http()
base = f"http://{host}:{port}"
print("service at", base)

# Arm the board and start free-running acquisition: signal board mode 2
# pulses every channel each cycle.
post(base + "/config", {"vmm": "all",
                        "fields": {"gain_sel": 2, "acq_enable": 1,
                                   "threshold_dac": 100}})
post(base + "/control", {"action": "start", "batch": 50,
                         "sigboard": {"mode": 2, "amplitude_counts": 200}})

# Poll the snapshot twice a second for two seconds.  Counters only grow.
for _ in range(4):
    time.sleep(0.5)
    s = get(base + "/status")
    print(f"  total {s['total_hits']:>12,} hits   rate {s['rate_hz']:>12,.0f}/s")

# The event stream carries deltas at a 0.15 s cadence.  Three events are
# enough to see the shape: sparse per-channel count increments plus the
# amplitude histogram of the watched channel.
req = urllib.request.Request(base + "/live?channel=0:0")
with urllib.request.urlopen(req, timeout=5) as stream:
    for _ in range(3):
        line = stream.readline().decode()
        while not line.startswith("data: "):
            line = stream.readline().decode()
        ev = json.loads(line[len("data: "):])
        top = sorted(ev["counts_delta"].items())[:3]
        print(f"  event: +{sum(ev['counts_delta'].values()):,} hits, "
              f"first channels {top}")

post(base + "/control", {"action": "stop"})

# Scans run through the same service.  POST /runs answers immediately
# with an id; the run executes on a worker thread.
run = post(base + "/runs", {"test": "baseline",
                            "params": {"baseline_samples": 25}})
print("launched run", run["run_id"])
while True:
    st = get(base + f"/runs/{run['run_id']}")
    if st["status"] in ("done", "failed"):
        break
    time.sleep(0.2)
print("run status:", st["status"])

# The stored run record points at the report files on disk.
runs = get(base + "/boards/DEMO06/reports")
print("stored files:", sorted(runs[-1]["report_files"].values()))

svc.stop()
print("service stopped; reports in", data_dir)

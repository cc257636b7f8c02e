"""
Bringing up an emulated board and scanning its pedestals
========================================================

The emulator answers the same framed protocol a real front-end board
speaks, so the whole tour runs without hardware: point the client at an
in-memory board, read a few monitor voltages by hand, then let the scan
engine sweep all channels.
"""

from febscan.client import BoardClient
from febscan.emulator import BoardEmulator
from febscan.scan_engine import ScanEngine, ScanParams
from febscan.transport import InMemoryTransport

# A pFEB carries three VMMs, 192 channels total.  Seed 42 fixes every
# pedestal and every noise draw, so this script prints the same numbers
# on every run.  One channel gets its baseline dragged up to 400 mV so
# the outlier screen has something to catch.
emu = BoardEmulator("pfeb", seed=42, overrides={(1, 33): {"baseline_mv": 400.0}})
client = BoardClient(InMemoryTransport(emu))

# Manual monitor read first: route VMM 0's monitor mux to channel 5 and
# take 8 XADC samples.  Codes are 12-bit, 1000 mV full scale.
from febscan.config_codec import VmmConfig

client.write_config(0, VmmConfig.default().with_global(monitor_mux=5, monitor_enable=1))
codes = client.xadc(0, 8)
print("channel 5 monitor codes:", [int(c) for c in codes])
print("          in millivolts:", [round(int(c) / 4095 * 1000, 1) for c in codes])

# The programmed truth sits nearby: the emulator drew this channel's
# pedestal from N(160 mV, 3 mV).
print(f"programmed baseline: {emu.vmms[0].baselines[5]:.2f} mV")

# Now the real thing: 25 samples per channel across all 192 channels.
engine = ScanEngine(client, emu.descriptor,
                    ScanParams(baseline_samples=25), board_id="DEMO02")
report = engine.run_baseline_scan()

for v, vb in enumerate(report.vmms):
    print(f"vmm {v}: median {vb.median_mv:6.1f} mV   spread {vb.spread_mv:5.1f} mV"
          f"   outliers {vb.outliers or 'none'}")

# A strip of per-channel means around the planted outlier.  Each bar is
# one channel of VMM 1; the 400 mV channel towers over its neighbours.
lo = min(report.vmms[1].mean_mv)
for c in range(28, 40):
    mean = report.vmms[1].mean_mv[c]
    bar = "#" * int((mean - lo) / 6) + ("  <- planted" if c == 33 else "")
    print(f"  ch {c:2d} {mean:6.1f} mV {bar}")

"""
Hunting dead and noisy channels
===============================

The dead-channel test addresses every channel with a train of test
pulses and counts responses.  A channel that never answers is flagged
dead; the confirmation pass then re-checks each suspect alone so a bad
batch cannot condemn a good channel.  With the pulser off, the same
counting catches the opposite disease: a channel that fires on its own.
"""

from febscan.client import BoardClient
from febscan.device_model import Fault
from febscan.emulator import BoardEmulator
from febscan.scan_engine import ScanEngine, ScanParams, classify_board
from febscan.transport import InMemoryTransport

# Three planted problems: a dead channel, a stuck one that fires every
# clock tick, and a front end so weak the stimulus never crosses the
# discriminator (indistinguishable from dead, and reported as such).
emu = BoardEmulator("pfeb", seed=31, overrides={
    (0, 8):  {"fault": Fault.parse("dead")},
    (1, 45): {"fault": Fault.parse("stuck")},
    (2, 60): {"fault": Fault.parse("low_gain:0.05")},
})
client = BoardClient(InMemoryTransport(emu))
engine = ScanEngine(client, emu.descriptor,
                    ScanParams(baseline_samples=25, samples_per_point=8,
                               dead_pulses=400),
                    board_id="DEMO05")

baseline = engine.run_baseline_scan()
thr = engine.run_dac_calibration("threshold")
report = engine.run_dead_channel_test(baseline, thr)

# Response counts around the dead channel: healthy neighbours answer
# every one of the 400 pulses.
print("vmm 0 counts, channels 5..11:",
      report.vmms[0].counts[5:12])

# The stuck channel stands out the other way: it kept firing while its
# neighbours were being addressed.
print("vmm 1 counts, channels 43..47:",
      report.vmms[1].counts[43:48])

# Every suspicion is re-tested one channel at a time before it sticks.
for conf in report.confirmations:
    print(f"  vmm {conf.vmm} ch {conf.channel}: {conf.flag:5s} "
          f"confirmed={conf.confirmed}  ({conf.detail})")

# The per-board verdict folds this report in with the other four tests.
reports = {
    "baseline": baseline,
    "threshold_cal": thr,
    "pulser_cal": engine.run_dac_calibration("pulser"),
    "gain": None,
    "dead_channel": report,
}
reports["gain"] = engine.run_gain_test(
    reports["baseline"], reports["pulser_cal"], thr)
verdict = classify_board(reports)
print(f"\nverdict: {verdict.status}")
for reason in verdict.reasons:
    print(f"  - {reason}")

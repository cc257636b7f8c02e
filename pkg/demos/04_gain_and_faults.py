"""
Measuring channel gain and catching a weak front end
====================================================

The gain test fires test pulses of known charge into every channel and
fits PDO amplitude against charge.  A healthy channel reproduces the
configured mV/fC setting; a channel whose amplifier lost half its gain
shows up as a slope deviation no amount of averaging can hide.
"""

from febscan.client import BoardClient
from febscan.device_model import Fault, GAIN_TABLE_MV_PER_FC
from febscan.emulator import BoardEmulator
from febscan.scan_engine import ScanEngine, ScanParams
from febscan.transport import InMemoryTransport

# One sick channel: VMM 2 channel 17 passes only half its signal.
emu = BoardEmulator("pfeb", seed=13, overrides={
    (2, 17): {"fault": Fault.parse("low_gain:0.5")},
})
client = BoardClient(InMemoryTransport(emu))
engine = ScanEngine(client, emu.descriptor,
                    ScanParams(baseline_samples=25, samples_per_point=8),
                    board_id="DEMO04")

# The gain test leans on three earlier measurements: pedestals for the
# amplitude reference, the pulser calibration to convert charge to DAC
# counts, and the threshold calibration to park the discriminator just
# above noise.
baseline = engine.run_baseline_scan()
thr = engine.run_dac_calibration("threshold")
pul = engine.run_dac_calibration("pulser")

# Gain setting 2 is 3.0 mV/fC.  Pulses at 10..80 fC, 32 per point.
report = engine.run_gain_test(baseline, pul, thr, gain_sel=2)
print(f"configured gain {report.configured_mv_per_fc} mV/fC")

# Healthy channels cluster tightly on the configured slope.
g = report.vmms[2]
for c in (15, 16, 17, 18, 19):
    print(f"  vmm 2 ch {c:2d}: {g.measured_mv_per_fc[c]:.3f} mV/fC"
          f"   deviation {g.deviation_ratio[c]:.3f}   {g.status[c]}")

print("failed channels:", report.failed_channels())

# The same sweep at a different operating point: gain code 5 is
# 9.0 mV/fC, so the same charges produce three times the amplitude.
# Smaller charges keep the peaks inside the 1000 mV PDO range.
engine2 = ScanEngine(client, emu.descriptor,
                     ScanParams(baseline_samples=25, samples_per_point=8,
                                gain_charges_fc=(5.0, 10.0, 20.0, 40.0)),
                     board_id="DEMO04")
report = engine2.run_gain_test(baseline, pul, thr, gain_sel=5)
ok = sum(1 for v in range(3) for c in range(64)
         if report.vmms[v].status[c] == "ok")
print(f"\ngain_sel=5 ({GAIN_TABLE_MV_PER_FC[5]} mV/fC): {ok} healthy channels, "
      f"failed {report.failed_channels()}")

"""
Calibrating the threshold and pulser DACs
=========================================

DAC counts only mean something once the counts-to-millivolts transfer is
measured.  The scan engine sweeps each DAC, reads the monitor tap at
every code, drops railed points, and fits a line.  The fit is then used
the way a shifter would use it: pick the DAC code for a wanted voltage.
"""

from febscan.client import BoardClient
from febscan.emulator import BoardEmulator
from febscan.scan_engine import ScanEngine, ScanParams
from febscan.transport import InMemoryTransport

emu = BoardEmulator("pfeb", seed=7)
client = BoardClient(InMemoryTransport(emu))
engine = ScanEngine(client, emu.descriptor,
                    ScanParams(samples_per_point=8), board_id="DEMO03")

# Threshold DAC: the board applies v = 0.98 mV/count + 50 mV.  The sweep
# covers the full 10-bit range; the top code saturates the 1000 mV
# monitor ADC and is excluded from the fit automatically.
cal = engine.run_dac_calibration("threshold")
print("code   measured mV")
for code, mv in cal.points[::4]:
    tag = "  (railed, excluded)" if code in cal.excluded_codes else ""
    print(f"{code:5d}   {mv:7.1f}{tag}")
print(f"fit: {cal.slope_mv_per_count:.4f} mV/count + {cal.intercept_mv:.2f} mV"
      f"   max residual {cal.max_residual_mv:.3f} mV")
print(f"excluded codes: {cal.excluded_codes}")

# Inverting the fit: the smallest code whose voltage clears the target.
for target in (180.0, 250.0, 400.0):
    code = cal.dac_for_voltage(target)
    print(f"to sit at {target:.0f} mV set threshold DAC {code}"
          f" ({cal.slope_mv_per_count * code + cal.intercept_mv:.1f} mV)")

# Pulser DAC: same machinery, different tap.  Nominal transfer is
# 0.3 mV/count with no offset, and code 0 rails at the bottom instead.
pul = engine.run_dac_calibration("pulser")
print(f"\npulser fit: {pul.slope_mv_per_count:.4f} mV/count "
      f"+ {pul.intercept_mv:.2f} mV, excluded {pul.excluded_codes}")

# The pulser transfer doubles as charge injection: one count is 0.3 fC,
# so the fitted slope converts a wanted charge straight to a code.
code = round(90.0 / pul.slope_mv_per_count)
print(f"90 fC test pulse -> pulser DAC {code}")

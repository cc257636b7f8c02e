"""Production test bench for VMM3-based front-end boards.

A board emulator speaking the same framed UDP protocol as the firmware,
the five production tests (baseline, threshold and pulser DAC
calibrations, gain, dead channel), persistent run records, and an HTTP
control surface for the operator dashboard.
"""

__version__ = "0.1.0"

from .config_codec import (
    ChannelConfig,
    ConfigError,
    GlobalConfig,
    VmmConfig,
    decode,
    encode,
)
from .device_model import ChannelTruth, Fault, VmmModel, VmmTruth, quantize
from .emulator import BoardDescriptor, BoardEmulator, Scenario, parse_scenario
from .client import BoardClient
from .scan_engine import (
    Classification,
    ScanEngine,
    ScanParams,
    classify_board,
    linear_fit,
)
from .results_store import RunRecord, RunStore
from .control_service import ControlService, LiveAggregator
from .transport import InMemoryTransport, UdpTransport

__all__ = [
    "BoardClient",
    "BoardDescriptor",
    "BoardEmulator",
    "ChannelConfig",
    "ChannelTruth",
    "Classification",
    "ConfigError",
    "ControlService",
    "Fault",
    "GlobalConfig",
    "InMemoryTransport",
    "LiveAggregator",
    "RunRecord",
    "RunStore",
    "Scenario",
    "ScanEngine",
    "ScanParams",
    "UdpTransport",
    "VmmConfig",
    "VmmModel",
    "VmmTruth",
    "classify_board",
    "decode",
    "encode",
    "linear_fit",
    "parse_scenario",
    "quantize",
]

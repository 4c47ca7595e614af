"""Trace-driven DRAM simulator for shared-counter RowHammer mitigation."""
from .dram import DeviceGeometry, TimingParams
from .errors import ConfigError, RowguardError, StructuralError, TraceParseError

__all__ = ["DeviceGeometry", "TimingParams", "ConfigError", "RowguardError",
           "StructuralError", "TraceParseError"]
__version__ = "0.1.0"

"""Resilient obstacle-distance repair: gated correction of corrupted depth signals."""

__version__ = "0.1.0"

from odca.core import SensorFrame, SensorSequence, ContextWindow

__all__ = ["SensorFrame", "SensorSequence", "ContextWindow", "__version__"]

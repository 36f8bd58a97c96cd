"""UAV-served downlink simulator: mobility, prediction, and max-min resource optimization."""

__version__ = "0.1.0"

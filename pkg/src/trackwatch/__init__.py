"""Telemetry anomaly detection for ground-station tracks."""

__version__ = "0.1.0"

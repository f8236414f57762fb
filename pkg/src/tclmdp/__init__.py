"""Aggregated thermostatically controlled load dispatch with KL-control MDPs and feeder OPF coordination."""

__version__ = "0.1.0"

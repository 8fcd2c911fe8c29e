"""Experiment orchestration: state building, closed-loop runs, metrics and CLI."""

from .metrics import MetricsLog, compare, last_quarter_error
from .state import StateBuilder, build_state

__all__ = ["MetricsLog", "StateBuilder", "build_state", "compare", "last_quarter_error"]

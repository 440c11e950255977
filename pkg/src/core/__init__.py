"""Core framework: settings, configuration files and the discrete-event kernel."""

from .config import Settings
from .events import Clock, EventKind, EventQueue, SchedulingError, SimEvent

__all__ = ["Clock", "EventKind", "EventQueue", "SchedulingError", "Settings", "SimEvent"]

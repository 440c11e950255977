"""Simulation driver: feeds arrivals to an engine and dispatches its events."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Protocol

from .events import EventKind, EventQueue, SimEvent

if TYPE_CHECKING:
    from workload.trace import Request


class Servable(Protocol):
    def admit(self, request: "Request") -> Any: ...

    def handle(self, event: SimEvent) -> None: ...


@dataclass
class SimulationResult:
    events: int
    end_time: float
    digest: str
    dispatched: dict[str, int]


class Simulation:
    """Runs one engine over one trace until the event queue drains.

    Arrivals are scheduled one at a time: handling an arrival schedules the
    next one, so the heap holds at most one pending arrival.

    Args:
        queue: Event queue the engine schedules against
        engine: Anything with ``admit`` and ``handle``
        requests: Trace sorted by arrival
    """

    def __init__(self, queue: EventQueue, engine: Servable, requests: Sequence["Request"]):
        self.queue = queue
        self.engine = engine
        self.requests = requests
        self._next = 0

    def _schedule_next_arrival(self) -> None:
        if self._next < len(self.requests):
            req = self.requests[self._next]
            self._next += 1
            self.queue.schedule(req.arrival, EventKind.ARRIVAL, req)

    def run(self, max_events: int | None = None) -> SimulationResult:
        """Dispatch events until none are left (or ``max_events`` were handled)."""
        self._schedule_next_arrival()
        handled = 0
        while max_events is None or handled < max_events:
            event = self.queue.advance()
            if event is None:
                break
            handled += 1
            if event.kind is EventKind.ARRIVAL:
                self.engine.admit(event.payload)
                self._schedule_next_arrival()
            else:
                self.engine.handle(event)
        logging.debug(f"simulation dispatched {handled} events, ended at t={self.queue.now:.6f}")
        return SimulationResult(handled, self.queue.now, self.queue.digest(), dict(self.queue.dispatched))

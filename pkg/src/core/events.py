"""Simulation events, the virtual clock and the time-ordered event queue.

Every engine schedules against one ``EventQueue``. Events dispatch in
nondecreasing time order and co-timed events dispatch in insertion order,
which keeps replays of the same scenario bit-for-bit identical.
"""

import hashlib
import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class SchedulingError(Exception):
    """Raised when an engine schedules an event before the current time."""

    pass


class EventKind(str, Enum):
    """Event tags understood by the engines."""

    ARRIVAL = "request-arrival"
    ITERATION_COMPLETE = "iteration-complete"
    SWITCH_PREPARED = "switch-prepared"
    TRANSFER_COMPLETE = "transfer-complete"
    CONTROLLER_TICK = "controller-tick"


@dataclass(frozen=True)
class SimEvent:
    """One scheduled occurrence on the virtual timeline."""

    time: float
    kind: EventKind
    payload: Any = field(compare=False)
    seq: int = 0

    def subject(self) -> str:
        """Short stable identity of the payload, used by the audit digest."""
        ident = getattr(self.payload, "audit_id", None)
        if ident is None:
            ident = getattr(self.payload, "id", None)
        return str(ident) if ident is not None else type(self.payload).__name__


class Clock:
    """Virtual clock in seconds. It never runs backwards."""

    def __init__(self, start: float = 0.0):
        self.now = start

    def advance_to(self, t: float) -> None:
        if t < self.now:
            raise SchedulingError(f"clock cannot move back from {self.now} to {t}")
        self.now = t


class EventQueue:
    """Priority queue of ``SimEvent`` ordered by ``(time, seq)``.

    Args:
        clock: Clock advanced by ``advance``; a new one is created if omitted
        audit: Whether dispatched events feed the audit digest
    """

    def __init__(self, clock: Clock | None = None, audit: bool = True):
        self.clock = clock or Clock()
        self._heap: list[tuple[float, int, SimEvent]] = []
        self._next_seq = 0
        self._audit = hashlib.sha256() if audit else None
        self.dispatched: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def now(self) -> float:
        return self.clock.now

    def push(self, event: SimEvent) -> SimEvent:
        """Insert an event, stamping it with the next sequence number.

        Raises:
            SchedulingError: If the event lies before the current time
        """
        if event.time < self.clock.now:
            raise SchedulingError(
                f"event {event.kind.value} at t={event.time!r} is before now={self.clock.now!r}"
            )
        stamped = SimEvent(event.time, event.kind, event.payload, self._next_seq)
        self._next_seq += 1
        heapq.heappush(self._heap, (stamped.time, stamped.seq, stamped))
        return stamped

    def schedule(self, time: float, kind: EventKind, payload: Any = None) -> SimEvent:
        """Convenience wrapper around ``push``."""
        return self.push(SimEvent(time, kind, payload))

    def schedule_in(self, delay: float, kind: EventKind, payload: Any = None) -> SimEvent:
        return self.push(SimEvent(self.clock.now + delay, kind, payload))

    def peek_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def advance(self) -> SimEvent | None:
        """Pop the earliest event and move the clock to it.

        Returns:
            The event, or None once the queue is exhausted (end of simulation)
        """
        if not self._heap:
            return None
        _, _, event = heapq.heappop(self._heap)
        self.clock.advance_to(event.time)
        self.dispatched[event.kind.value] = self.dispatched.get(event.kind.value, 0) + 1
        if self._audit is not None:
            line = f"{event.time:.9f}|{event.seq}|{event.kind.value}|{event.subject()}\n"
            self._audit.update(line.encode())
        return event

    def digest(self) -> str:
        """Hex digest over every event dispatched so far."""
        return self._audit.hexdigest() if self._audit is not None else ""

"""M/M/1 reference queue behind the controller's TTFT model."""

from collections import deque

import numpy as np

from core.events import EventKind, EventQueue


def mm1_sojourn(mu: float, r: float) -> float:
    """Mean time in system (wait + service) of an M/M/1 queue: 1 / (mu - r).

    Raises:
        ValueError: If the queue is unstable (r >= mu) or a rate is not positive
    """
    if mu <= 0 or r <= 0:
        raise ValueError("rates must be positive")
    if r >= mu:
        raise ValueError(f"unstable queue: arrival rate {r} >= service rate {mu}")
    return 1.0 / (mu - r)


def simulate_mm1(r: float, mu: float, count: int, seed: int = 0) -> float:
    """Mean sojourn time of ``count`` customers through a simulated M/M/1 queue.

    Runs on the same event queue as the serving engines.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    mm1_sojourn(mu, r)
    rng = np.random.default_rng(seed)
    arrivals = np.cumsum(rng.exponential(1.0 / r, size=count))
    services = rng.exponential(1.0 / mu, size=count)

    queue = EventQueue(audit=False)
    waiting: deque[int] = deque()
    busy = False
    total = 0.0
    queue.schedule(float(arrivals[0]), EventKind.ARRIVAL, 0)
    while (event := queue.advance()) is not None:
        if event.kind is EventKind.ARRIVAL:
            i = event.payload
            if i + 1 < count:
                queue.schedule(float(arrivals[i + 1]), EventKind.ARRIVAL, i + 1)
            waiting.append(i)
        else:
            total += queue.now - float(arrivals[event.payload])
            busy = False
        if not busy and waiting:
            i = waiting.popleft()
            busy = True
            queue.schedule_in(float(services[i]), EventKind.ITERATION_COMPLETE, i)
    return total / count

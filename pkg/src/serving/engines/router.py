"""Least-loaded routing over instances."""

from collections.abc import Sequence
from typing import Protocol


class Routable(Protocol):
    def queue_depth(self) -> int: ...

    def kv_utilization(self) -> float: ...


def route_request(instances: Sequence[Routable]) -> int:
    """Index of the instance with the shortest waiting queue.

    Ties go to the lower KV utilization, then to the lowest index.

    Raises:
        ValueError: If there are no instances
    """
    if not instances:
        raise ValueError("no instances to route to")
    loads = [(inst.queue_depth(), inst.kv_utilization(), i) for i, inst in enumerate(instances)]
    return min(loads)[2]

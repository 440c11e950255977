"""Unified paged KV-cache pool.

Allocation is a single indivisible query/get/update step guarded by a lock, so
two workers allocating concurrently can never act on a stale free count.
"""

import threading
from collections.abc import Mapping
from dataclasses import dataclass
from types import MappingProxyType


class KvPoolError(Exception):
    """Raised on pool bookkeeping errors, e.g. releasing an unknown request."""

    pass


class KvContractError(KvPoolError, ValueError):
    """Raised when a caller violates an operation precondition."""

    pass


@dataclass(frozen=True)
class PoolOp:
    """One linearized pool operation, as recorded in the operation log."""

    op: str
    req: int
    n: int
    result: int


def blocks_for_tokens(tokens: int, block_size: int) -> int:
    """Blocks needed to hold ``tokens`` tokens (ceiling division)."""
    if tokens < 0:
        raise ValueError(f"tokens must be >= 0, got {tokens}")
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    return -(-tokens // block_size)


class KvPool:
    """Fixed pool of KV blocks shared by every worker of an instance.

    Args:
        capacity: Number of blocks
        block_size: Tokens per block
        name: Label used in reports
        record: Keep an operation log for serialization checks
    """

    def __init__(self, capacity: int, block_size: int = 16, name: str = "pool", record: bool = False):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1 block, got {capacity}")
        if block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {block_size}")
        self.capacity = capacity
        self.block_size = block_size
        self.name = name
        self.high_water = 0.0
        self.failed_allocations = 0
        self.exhausted_at: float | None = None
        self._free_ids: list[int] = list(range(capacity - 1, -1, -1))
        self._owned: dict[int, list[int]] = {}
        self._lock = threading.Lock()
        self.log: list[PoolOp] | None = [] if record else None

    @property
    def free(self) -> int:
        return len(self._free_ids)

    @property
    def allocations(self) -> Mapping[int, int]:
        """Read-only view: request id -> block count."""
        return MappingProxyType({req: len(ids) for req, ids in self._owned.items()})

    def held(self, req: int) -> int:
        ids = self._owned.get(req)
        return len(ids) if ids else 0

    def block_ids(self, req: int) -> tuple[int, ...]:
        return tuple(self._owned.get(req, ()))

    def try_allocate(self, req: int, n: int, now: float | None = None) -> bool:
        """Grant ``n`` more blocks to ``req`` or leave the pool untouched.

        Args:
            req: Request id
            n: Number of blocks (>= 1)
            now: Simulated time, recorded the first time an allocation fails

        Returns:
            True when granted, False when there are not enough free blocks

        Raises:
            KvContractError: If n <= 0
        """
        if n <= 0:
            raise KvContractError(f"{self.name}: allocation size must be >= 1, got {n}")
        with self._lock:
            if len(self._free_ids) < n:
                self.failed_allocations += 1
                if self.exhausted_at is None and now is not None:
                    self.exhausted_at = now
                if self.log is not None:
                    self.log.append(PoolOp("allocate", req, n, 0))
                return False
            granted = [self._free_ids.pop() for _ in range(n)]
            self._owned.setdefault(req, []).extend(granted)
            self._update_high_water()
            if self.log is not None:
                self.log.append(PoolOp("allocate", req, n, 1))
            return True

    def release(self, req: int) -> int:
        """Return every block held by ``req`` to the pool.

        Returns:
            Number of blocks freed

        Raises:
            KvPoolError: If ``req`` holds no allocation
        """
        with self._lock:
            ids = self._owned.pop(req, None)
            if ids is None:
                raise KvPoolError(f"{self.name}: release of unknown request {req}")
            self._free_ids.extend(reversed(ids))
            if self.log is not None:
                self.log.append(PoolOp("release", req, len(ids), len(ids)))
            return len(ids)

    def utilization(self) -> float:
        """Fraction of blocks in use; also refreshes ``high_water``."""
        with self._lock:
            return self._update_high_water()

    def _update_high_water(self) -> float:
        used = (self.capacity - len(self._free_ids)) / self.capacity
        if used > self.high_water:
            self.high_water = used
        return used

    def check(self) -> None:
        """Assert conservation: free + allocated == capacity, no block owned twice."""
        with self._lock:
            owned = [b for ids in self._owned.values() for b in ids]
            if len(owned) + len(self._free_ids) != self.capacity:
                raise KvPoolError(f"{self.name}: conservation violated")
            if len(set(owned) | set(self._free_ids)) != self.capacity:
                raise KvPoolError(f"{self.name}: a block is owned twice")

"""A cluster of engine instances sharing one clock behind a least-loaded router."""

from typing import Any

from core.events import EventQueue, SimEvent
from workload.trace import Request

from ..kv import KvPool
from ..resource import CostParams, ParallelismConfig
from .base import Engine, EngineConfig, Iteration, KvSizing, RequestRecord
from .router import route_request


class ClusterEngine(Engine):
    """Routes each arrival to the member with the shortest queue.

    Members are built by the caller (see ``build_engine``) so that any engine
    kind, dynamic semi-PD included, can take part.
    """

    def __init__(
        self,
        cfg: EngineConfig,
        cost: CostParams,
        par: ParallelismConfig,
        kv: KvSizing,
        queue: EventQueue,
        members: list[Engine],
        name: str | None = None,
    ):
        super().__init__(cfg, cost, par, kv, queue, name)
        if not members:
            raise ValueError("a cluster needs at least one member")
        self.members = members
        self.routed = [0] * len(members)

    def admit(self, request: Request) -> RequestRecord:
        i = route_request(self.members)
        self.routed[i] += 1
        rec = self.members[i].admit(request)
        self.records[request.id] = rec
        return rec

    def handle(self, event: SimEvent) -> None:
        owner: Engine = event.payload.owner
        owner.handle(event)

    def schedule(self) -> None:
        for member in self.members:
            member.schedule()

    def _enqueue(self, rec: RequestRecord) -> None:
        raise NotImplementedError("cluster admission goes through admit()")

    def _on_iteration_complete(self, it: Iteration) -> None:
        raise NotImplementedError("iterations belong to cluster members")

    def pools(self) -> list[KvPool]:
        return [pool for member in self.members for pool in member.pools()]

    def queue_depth(self) -> int:
        return sum(member.queue_depth() for member in self.members)

    def gpu_count(self) -> int:
        return sum(member.gpu_count() for member in self.members)

    def audit(self) -> dict[str, Any]:
        return {
            "routed": {member.name: n for member, n in zip(self.members, self.routed)},
            "members": {member.name: member.audit() for member in self.members},
        }

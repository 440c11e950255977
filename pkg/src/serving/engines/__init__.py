"""Serving engines and the registry used to build them from configuration."""

from collections.abc import Callable
from typing import TYPE_CHECKING

from core.events import EventQueue

from ..resource import CostParams, ParallelismConfig
from .base import DeploymentError, Engine, EngineConfig, Iteration, KvSizing, RequestRecord, TransferConfig, Worker
from .cluster import ClusterEngine
from .disaggregated import DisaggregatedEngine
from .router import route_request
from .semi_pd import SemiPDEngine
from .unified import ChunkedEngine, UnifiedEngine

if TYPE_CHECKING:
    from control.controller import PartitionController

ControllerFactory = Callable[[EngineConfig], "PartitionController | None"]

ENGINES: dict[str, type[Engine]] = {
    "unified-pf": UnifiedEngine,
    "unified-df": UnifiedEngine,
    "unified-chunked": ChunkedEngine,
    "disaggregated": DisaggregatedEngine,
    "semi-pd": SemiPDEngine,
}


def build_engine(
    cfg: EngineConfig,
    cost: CostParams,
    par: ParallelismConfig,
    kv: KvSizing,
    queue: EventQueue,
    controller_factory: ControllerFactory | None = None,
    name: str | None = None,
) -> Engine:
    """Instantiate the engine described by ``cfg``.

    Args:
        controller_factory: Builds the partition controller of a dynamic
            semi-PD engine (or cluster member)

    Raises:
        DeploymentError: If an instance cannot hold its weights
        ValueError: For an invalid parallel layout
    """
    if cfg.kind == "cluster":
        members = [
            build_engine(member, cost, par, kv, queue, controller_factory, name=f"{member.label}#{k}")
            for member in cfg.members
            for k in range(member.count)
        ]
        return ClusterEngine(cfg, cost, par, kv, queue, members, name)
    if cfg.kind == "semi-pd":
        controller = controller_factory(cfg) if controller_factory and cfg.dynamic else None
        return SemiPDEngine(cfg, cost, par, kv, queue, name, controller=controller)
    return ENGINES[cfg.kind](cfg, cost, par, kv, queue, name)


__all__ = [
    "ENGINES",
    "ChunkedEngine",
    "ClusterEngine",
    "DeploymentError",
    "DisaggregatedEngine",
    "Engine",
    "EngineConfig",
    "Iteration",
    "KvSizing",
    "RequestRecord",
    "SemiPDEngine",
    "TransferConfig",
    "UnifiedEngine",
    "Worker",
    "build_engine",
    "route_request",
]

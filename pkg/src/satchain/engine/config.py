from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from ..services import RequestModel
from ..topology import Topology
from .placement import CostModel


@dataclass
class SystemConfig:
    """Everything a policy or solver needs to know about one network instance."""

    topology: Topology
    compute_capacity: tuple[int, ...]
    storage_capacity: tuple[int, ...]
    caching: tuple[frozenset, ...]
    requests: RequestModel
    cost: CostModel = field(default_factory=CostModel)

    def __post_init__(self):
        V = self.topology.num_satellites
        self.compute_capacity = tuple(int(c) for c in self.compute_capacity)
        self.storage_capacity = tuple(int(c) for c in self.storage_capacity)
        self.caching = tuple(frozenset(c) for c in self.caching)
        for name in ("compute_capacity", "storage_capacity", "caching"):
            if len(getattr(self, name)) != V:
                raise ValueError(f"{name} needs one entry per satellite ({V})")
        if any(c < 0 for c in self.compute_capacity + self.storage_capacity):
            raise ValueError("capacities must be non-negative")
        if self.requests.num_satellites != V:
            raise ValueError("request model and topology disagree on the number of satellites")

    @property
    def num_satellites(self) -> int:
        return self.topology.num_satellites

    @property
    def period(self) -> int:
        return self.topology.system_period

    @property
    def horizon(self) -> int:
        return self.requests.max_delay_tolerance

    def with_caching(self, caching: Sequence[frozenset]) -> "SystemConfig":
        return SystemConfig(self.topology, self.compute_capacity, self.storage_capacity,
                            tuple(caching), self.requests, self.cost)

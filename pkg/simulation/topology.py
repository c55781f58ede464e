import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import networkx as nx
import numpy as np

from settings import settings

logger = logging.getLogger(__name__)


class TopologyKind(str, Enum):
    ERDOS_RENYI = "erdos_renyi"
    SMALL_WORLD = "small_world"
    SCALE_FREE = "scale_free"


@dataclass(frozen=True)
class Topology:
    """Random graph family for the phase networks; p defaults to a mean degree of settings.sim_er_mean_degree"""
    kind: TopologyKind = TopologyKind.ERDOS_RENYI
    p: Optional[float] = None
    k: int = settings.sim_ws_neighbors
    rewire_p: float = settings.sim_ws_rewire
    m: int = settings.sim_ba_edges

    def __post_init__(self):
        object.__setattr__(self, "kind", TopologyKind(self.kind))
        if self.p is not None and not 0 <= self.p <= 1:
            raise ValueError(f"edge probability must lie in [0, 1], got {self.p}")
        if not 0 <= self.rewire_p <= 1:
            raise ValueError(f"rewiring probability must lie in [0, 1], got {self.rewire_p}")
        if self.k < 2 or self.m < 1:
            raise ValueError(f"invalid small-world k={self.k} or scale-free m={self.m}")

    def edge_probability(self, n_nodes: int) -> float:
        if self.p is not None:
            return self.p
        return min(1.0, settings.sim_er_mean_degree / max(n_nodes - 1, 1))

    def graph(self, n_nodes: int, seed: int) -> nx.Graph:
        if self.kind == TopologyKind.ERDOS_RENYI:
            return nx.erdos_renyi_graph(n_nodes, self.edge_probability(n_nodes), seed=seed)
        if self.kind == TopologyKind.SMALL_WORLD:
            return nx.watts_strogatz_graph(n_nodes, min(self.k, n_nodes - 1), self.rewire_p, seed=seed)
        return nx.barabasi_albert_graph(n_nodes, min(self.m, n_nodes - 1), seed=seed)


def draw_support(topology: Topology, n_nodes: int, seed: int) -> np.ndarray:
    """Boolean (V, V) adjacency without self loops"""
    graph = topology.graph(n_nodes, seed)
    adjacency = nx.to_numpy_array(graph, nodelist=range(n_nodes)) > 0
    np.fill_diagonal(adjacency, False)
    return adjacency

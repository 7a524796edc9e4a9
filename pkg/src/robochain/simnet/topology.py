"""Sparse hub network construction: a seeded random spanning tree plus
density-controlled extra edges, so the graph is always connected and
edge_density = 0 yields exactly a tree."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfig
from .config import ScenarioConfig


@dataclass(frozen=True)
class Topology:
    hubs: tuple[str, ...]
    edges: frozenset[tuple[str, str]]  # pairs stored sorted
    robots_per_hub: dict
    data_parties: tuple[str, ...]

    def neighbors(self, hub: str) -> tuple[str, ...]:
        out = []
        for a, b in self.edges:
            if a == hub:
                out.append(b)
            elif b == hub:
                out.append(a)
        return tuple(sorted(out))

    def all_robots(self) -> tuple[str, ...]:
        return tuple(r for hub in self.hubs for r in self.robots_per_hub[hub])

    def hub_of(self, robot_id: str) -> str:
        for hub, robots in self.robots_per_hub.items():
            if robot_id in robots:
                return hub
        raise KeyError(f"no hub subscribes {robot_id!r}")

    def hop_distances(self, source: str) -> dict:
        """BFS hop counts from one hub; the graph is connected by construction."""
        dist = {source: 0}
        frontier = [source]
        while frontier:
            nxt = []
            for hub in frontier:
                for other in self.neighbors(hub):
                    if other not in dist:
                        dist[other] = dist[hub] + 1
                        nxt.append(other)
            frontier = nxt
        return dist

    def diameter_bound(self) -> int:
        return max(max(self.hop_distances(h).values()) for h in self.hubs)


def build_topology(config: ScenarioConfig, num_parties: int = 3) -> Topology:
    if num_parties < 1:
        raise InvalidConfig("need at least one data party")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x701]))
    hubs = tuple(f"hub-{i}" for i in range(config.num_hubs))
    edges: set[tuple[str, str]] = set()
    # random spanning tree: attach each hub to a uniformly chosen earlier one
    for i in range(1, config.num_hubs):
        j = int(rng.integers(0, i))
        edges.add(tuple(sorted((hubs[i], hubs[j]))))
    for i in range(config.num_hubs):
        for j in range(i + 1, config.num_hubs):
            pair = tuple(sorted((hubs[i], hubs[j])))
            if pair not in edges and rng.random() < config.edge_density:
                edges.add(pair)
    robots = {
        hub: tuple(f"robot-{i}-{r}" for r in range(config.robots_per_hub))
        for i, hub in enumerate(hubs)
    }
    parties = tuple(f"party-{p}" for p in range(num_parties))
    return Topology(hubs=hubs, edges=frozenset(edges),
                    robots_per_hub=robots, data_parties=parties)

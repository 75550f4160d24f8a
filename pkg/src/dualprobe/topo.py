"""Network topologies: random generation, link metrics and service networks.

Nodes are numbered 1..n. Index 0 is reserved for the virtual "new path"
action used by the dynamic-probe planner.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

Link = tuple[int, int]

LOAD_FACTOR = 4.0
DEFAULT_LATENCY_RANGE = (50, 500)
DEFAULT_CAPACITIES = (100, 1000, 10000)
MAX_ATTEMPTS = 1000


class TopologyError(ValueError):
    pass


def canon(u: int, v: int) -> Link:
    return (u, v) if u < v else (v, u)


def canon_set(links: Iterable[Iterable[int]]) -> frozenset[Link]:
    return frozenset(canon(int(a), int(b)) for a, b in links)


@dataclass(frozen=True)
class Topology:
    n: int
    links: tuple[Link, ...]
    latency: dict[Link, int] = field(compare=True)
    load: dict[Link, float] = field(compare=True)
    capacity: dict[Link, int] = field(compare=True)
    seed: int | None = None

    def __post_init__(self):
        seen = set()
        for u, v in self.links:
            if u >= v:
                raise TopologyError(f"link ({u},{v}) is not canonical (u<v, no self-loops)")
            if not (1 <= u and v <= self.n):
                raise TopologyError(f"link ({u},{v}) outside 1..{self.n}")
            if (u, v) in seen:
                raise TopologyError(f"duplicate link ({u},{v})")
            seen.add((u, v))
            if self.latency[(u, v)] <= 0:
                raise TopologyError(f"latency of ({u},{v}) must be positive")
            if not 0.0 <= self.load[(u, v)] <= 1.0:
                raise TopologyError(f"load of ({u},{v}) must lie in [0,1]")
            if self.capacity[(u, v)] <= 0:
                raise TopologyError(f"capacity of ({u},{v}) must be positive")

    def __hash__(self):
        return hash((self.n, self.links))

    @property
    def link_set(self) -> frozenset[Link]:
        return frozenset(self.links)

    def has_link(self, u: int, v: int) -> bool:
        return canon(u, v) in self.latency

    def neighbors(self) -> dict[int, list[int]]:
        """Sorted adjacency lists for nodes 1..n."""
        adj: dict[int, list[int]] = {i: [] for i in range(1, self.n + 1)}
        for u, v in self.links:
            adj[u].append(v)
            adj[v].append(u)
        for nbrs in adj.values():
            nbrs.sort()
        return adj

    def degree(self, node: int) -> int:
        return sum(1 for u, v in self.links if node in (u, v))

    def effective_latency(self, u: int, v: int) -> float:
        """Base latency inflated by utilisation: base * (1 + 4*load)."""
        key = canon(u, v)
        return self.latency[key] * (1.0 + LOAD_FACTOR * self.load[key])

    def path_latency(self, path: list[int]) -> float:
        return sum(self.effective_latency(a, b) for a, b in zip(path, path[1:]))

    def is_connected(self) -> bool:
        return is_connected(self.n, self.links)

    def with_metrics(self, latency=None, load=None, capacity=None) -> "Topology":
        return Topology(
            self.n,
            self.links,
            dict(latency if latency is not None else self.latency),
            dict(load if load is not None else self.load),
            dict(capacity if capacity is not None else self.capacity),
            self.seed,
        )

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "links": [
                {
                    "u": u,
                    "v": v,
                    "latency_us": int(self.latency[(u, v)]),
                    "load": float(self.load[(u, v)]),
                    "capacity_mbps": int(self.capacity[(u, v)]),
                }
                for u, v in self.links
            ],
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Topology":
        links, latency, load, capacity = [], {}, {}, {}
        for rec in data["links"]:
            key = canon(int(rec["u"]), int(rec["v"]))
            if key[0] == key[1]:
                raise TopologyError(f"self-loop at node {key[0]}")
            links.append(key)
            latency[key] = int(rec["latency_us"])
            load[key] = float(rec.get("load", 0.0))
            capacity[key] = int(rec.get("capacity_mbps", 1000))
        return cls(int(data["n"]), tuple(sorted(links)), latency, load, capacity, data.get("seed"))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def is_connected(n: int, links: Iterable[Link]) -> bool:
    """True when every node in 1..n is reachable from node 1 (hence no isolated nodes)."""
    adj: dict[int, list[int]] = {i: [] for i in range(1, n + 1)}
    for u, v in links:
        adj[u].append(v)
        adj[v].append(u)
    seen = {1}
    queue = deque([1])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == n


def default_edge_prob(n: int) -> float:
    return min(1.0, 2.0 * math.log(n) / n)


def from_links(n: int, links: Iterable[Iterable[int]], latency_us: int | dict = 100,
               load: float | dict = 0.0, capacity_mbps: int = 1000) -> Topology:
    """Build a topology from an explicit link list (handy for fixtures)."""
    keys = sorted(canon_set(links))
    lat = latency_us if isinstance(latency_us, dict) else {k: latency_us for k in keys}
    lat = {canon(*k): int(v) for k, v in lat.items()}
    ld = load if isinstance(load, dict) else {k: load for k in keys}
    ld = {canon(*k): float(v) for k, v in ld.items()}
    return Topology(n, tuple(keys), lat, ld, {k: capacity_mbps for k in keys})


def gen_random_topology(n: int, edge_prob: float | None = None, seed: int = 0,
                        latency_range: tuple[int, int] = DEFAULT_LATENCY_RANGE) -> Topology:
    """Erdos-Renyi G(n, p) resampled until connected, with link metrics attached."""
    if n < 2:
        raise TopologyError("need at least 2 nodes")
    p = default_edge_prob(n) if edge_prob is None else edge_prob
    if not 0.0 < p <= 1.0:
        raise TopologyError(f"edge_prob must lie in (0, 1], got {p}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(MAX_ATTEMPTS):
        keep = rng.random(iu.size) < p
        links = tuple((int(a) + 1, int(b) + 1) for a, b in zip(iu[keep], ju[keep]))
        if links and is_connected(n, links):
            break
    else:
        raise TopologyError(
            f"no connected G({n}, {p:.4f}) after {MAX_ATTEMPTS} attempts; edge_prob too small"
        )
    placeholder = {k: 1 for k in links}
    topo = Topology(n, links, placeholder, {k: 0.0 for k in links}, placeholder, seed)
    return assign_link_metrics(topo, latency_range, seed=rng.integers(2**63))


def assign_link_metrics(topology: Topology, latency_range: tuple[int, int] = DEFAULT_LATENCY_RANGE,
                        seed: int = 0, capacities: tuple[int, ...] = DEFAULT_CAPACITIES) -> Topology:
    lo, hi = latency_range
    if lo < 1 or hi < lo:
        raise TopologyError(f"bad latency range [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    m = len(topology.links)
    lat = rng.integers(lo, hi + 1, size=m)
    load = rng.random(m)
    cap = rng.choice(capacities, size=m)
    return topology.with_metrics(
        latency={k: int(x) for k, x in zip(topology.links, lat)},
        load={k: float(x) for k, x in zip(topology.links, load)},
        capacity={k: int(x) for k, x in zip(topology.links, cap)},
    )


def select_service_network(topology: Topology, fraction: float = 1.0, seed: int = 0) -> frozenset[Link]:
    """Sample ceil(fraction*|E|) links without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise TopologyError(f"fraction must lie in (0, 1], got {fraction}")
    m = len(topology.links)
    # round first so 0.1*30 does not ceil to 4
    k = math.ceil(round(fraction * m, 9))
    if k >= m:
        return topology.link_set
    rng = np.random.default_rng(seed)
    idx = rng.choice(m, size=k, replace=False)
    return frozenset(topology.links[i] for i in sorted(idx))


def odd_degree_nodes(topology: Topology | None, restricted_to: Iterable[Link]) -> set[int]:
    links = canon_set(restricted_to)
    if topology is not None:
        unknown = links - topology.link_set
        if unknown:
            raise TopologyError(f"links not in topology: {sorted(unknown)}")
    deg: dict[int, int] = {}
    for u, v in links:
        deg[u] = deg.get(u, 0) + 1
        deg[v] = deg.get(v, 0) + 1
    return {node for node, d in deg.items() if d % 2}


def load_topology(path) -> Topology:
    with open(path) as fh:
        return Topology.from_json(json.load(fh))


def save_topology(topology: Topology, path) -> None:
    with open(path, "w") as fh:
        fh.write(topology.dumps())
        fh.write("\n")

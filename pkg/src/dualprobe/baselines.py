"""Classical comparison planners over a demanded link set: DFS, Euler trails, latency-capped DFS."""

from __future__ import annotations

from typing import Iterable

from .appd import Plan, edge_dfs_cover
from .topo import Link, Topology, canon_set, odd_degree_nodes


class PlanningError(ValueError):
    pass


def _demanded(topology: Topology, demanded: Iterable[Link] | None) -> frozenset[Link]:
    links = topology.link_set if demanded is None else canon_set(demanded)
    if not links:
        raise PlanningError("demanded link set is empty")
    unknown = links - topology.link_set
    if unknown:
        raise PlanningError(f"demanded links not in topology: {sorted(unknown)}")
    return links


def plan_dfs(topology: Topology, demanded: Iterable[Link] | None = None, start: int = 1) -> Plan:
    links = _demanded(topology, demanded)
    return Plan.of(edge_dfs_cover(links, start))


def default_tmax(topology: Topology, demanded: Iterable[Link] | None = None, coeff: float = 0.5) -> float:
    """Threshold linear in the switch count: coeff * n * mean effective link latency.

    Never below the slowest demanded link, so the default is always routable.
    """
    links = _demanded(topology, demanded)
    lats = [topology.effective_latency(*k) for k in links]
    return max(coeff * topology.n * sum(lats) / len(lats), max(lats))


def plan_latency_constrained(topology: Topology, demanded: Iterable[Link] | None = None,
                             t_max_us: float | None = None, start: int = 1) -> Plan:
    links = _demanded(topology, demanded)
    if t_max_us is None:
        t_max_us = default_tmax(topology, links)
    worst = max(topology.effective_latency(*k) for k in links)
    if t_max_us < worst:
        raise PlanningError(f"t_max={t_max_us:.1f}us below the slowest demanded link ({worst:.1f}us)")

    def fits(_path, spent, u, w):
        return spent + topology.effective_latency(u, w) <= t_max_us

    return Plan.of(edge_dfs_cover(links, start, fits, topology.effective_latency))


def components(links: Iterable[Link]) -> list[frozenset[Link]]:
    """Connected components of an edge set, ordered by their lowest node."""
    parent: dict[int, int] = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    links = sorted(links)
    for u, v in links:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    groups: dict[int, set[Link]] = {}
    for u, v in links:
        groups.setdefault(find(u), set()).add((u, v))
    return [frozenset(groups[r]) for r in sorted(groups)]


def _euler_circuit(edges: list[tuple[int, int]], start: int) -> tuple[list[int], list[int]]:
    """Hierholzer on a multigraph given as an edge list; returns (nodes, edge ids)."""
    adj: dict[int, list[tuple[int, int]]] = {}
    for eid, (u, v) in enumerate(edges):
        adj.setdefault(u, []).append((v, eid))
        adj.setdefault(v, []).append((u, eid))
    for lst in adj.values():
        lst.sort(reverse=True)
    used = [False] * len(edges)
    stack: list[tuple[int, int]] = [(start, -1)]
    out: list[tuple[int, int]] = []
    while stack:
        v = stack[-1][0]
        lst = adj[v]
        while lst and used[lst[-1][1]]:
            lst.pop()
        if lst:
            w, eid = lst.pop()
            used[eid] = True
            stack.append((w, eid))
        else:
            out.append(stack.pop())
    out.reverse()
    return [v for v, _ in out], [e for _, e in out[1:]]


def _component_trails(comp: frozenset[Link]) -> list[list[int]]:
    odd = sorted(odd_degree_nodes(None, comp))
    edges = sorted(comp)
    real = len(edges)
    edges += [(odd[i], odd[i + 1]) for i in range(0, len(odd), 2)]
    start = odd[0] if odd else min(min(e) for e in comp)
    nodes, eids = _euler_circuit(edges, start)
    if not odd:
        return [nodes]
    # rotate so the walk begins right after a virtual edge, then cut at every virtual edge
    j = next(i for i, e in enumerate(eids) if e >= real)
    m = len(eids)
    order = [(j + 1 + k) % m for k in range(m)]
    trails, cur = [], [nodes[j + 1]]
    for i in order:
        if eids[i] >= real:
            trails.append(cur)
            cur = [nodes[i + 1]]
        else:
            cur.append(nodes[i + 1])
    return trails


def plan_euler(topology: Topology, demanded: Iterable[Link] | None = None) -> Plan:
    """Minimum number of edge-disjoint trails: max(1, odd/2) per connected component."""
    links = _demanded(topology, demanded)
    paths = []
    for comp in components(links):
        paths.extend(_component_trails(comp))
    return Plan.of(paths)


PLANNERS = {
    "dfs": plan_dfs,
    "euler": plan_euler,
    "latconst": plan_latency_constrained,
}

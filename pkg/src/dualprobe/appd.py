"""Auxiliary probe path planning: length-bounded, edge-disjoint trails covering every link.

The planner is an edge depth-first walk. From the current node it always takes
the lowest-index neighbour over a not-yet-covered link. If appending that node
would exceed the length bound, the current path is closed at the current node
and a new path is opened with the link just taken. When the walk gets stuck it
backtracks along its own trail to the most recent node that still has an
uncovered link and opens a new path there.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable

from .topo import Link, Topology, canon, canon_set


@dataclass(frozen=True)
class Plan:
    paths: tuple[tuple[int, ...], ...]
    l_th: int | None = None

    @classmethod
    def of(cls, paths: Iterable[Iterable[int]], l_th: int | None = None) -> "Plan":
        return cls(tuple(tuple(int(x) for x in p) for p in paths), l_th)

    def __len__(self):
        return len(self.paths)

    def path_links(self, index: int) -> list[Link]:
        p = self.paths[index]
        return [canon(a, b) for a, b in zip(p, p[1:])]

    def covered(self) -> set[Link]:
        out: set[Link] = set()
        for i in range(len(self.paths)):
            out.update(self.path_links(i))
        return out

    def is_edge_disjoint(self) -> bool:
        seen: set[Link] = set()
        for i in range(len(self.paths)):
            for key in self.path_links(i):
                if key in seen:
                    return False
                seen.add(key)
        return True

    def to_json(self) -> dict:
        return {"l_th": self.l_th, "paths": [list(p) for p in self.paths]}

    @classmethod
    def from_json(cls, data: dict) -> "Plan":
        return cls.of(data["paths"], data.get("l_th"))


def load_plan(path) -> Plan:
    with open(path) as fh:
        return Plan.from_json(json.load(fh))


def save_plan(plan: Plan, path) -> None:
    with open(path, "w") as fh:
        json.dump(plan.to_json(), fh)
        fh.write("\n")


# fits(path, path_cost, u, v) -> may the link (u, v) extend the open path?
FitsFn = Callable[[list[int], float, int, int], bool]


def edge_dfs_cover(demanded: Iterable[Link], start: int | None = None,
                   fits: FitsFn | None = None, cost: Callable[[int, int], float] | None = None) -> list[list[int]]:
    """Cover ``demanded`` with edge-disjoint trails using the bounded edge-DFS walk.

    ``fits`` decides whether an open path may absorb the next link; when it
    says no, the path is closed and the link opens a fresh path. The walk
    restarts at the lowest-index node with uncovered links when the demanded
    subgraph is disconnected.
    """
    remaining: dict[int, list[int]] = {}
    for u, v in canon_set(demanded):
        remaining.setdefault(u, []).append(v)
        remaining.setdefault(v, []).append(u)
    for nbrs in remaining.values():
        nbrs.sort(reverse=True)  # pop() yields the lowest index
    left = sum(len(x) for x in remaining.values()) // 2

    def take(u: int) -> int | None:
        nbrs = remaining.get(u)
        while nbrs:
            w = nbrs.pop()
            back = remaining[w]
            if u in back:
                back.remove(u)
                return w
        return None

    paths: list[list[int]] = []
    if start is None or not remaining.get(start):
        start = min((k for k, v in remaining.items() if v), default=None)
    while left:
        trail = [start]
        path: list[int] = []
        spent = 0.0
        while trail:
            u = trail[-1]
            w = take(u)
            if w is None:
                trail.pop()
                if len(path) > 1:
                    paths.append(path)
                path = []
                continue
            left -= 1
            if not path:
                # fresh start or just backtracked to u
                path, spent = [u], 0.0
            elif fits is not None and not fits(path, spent, u, w):
                paths.append(path)
                path, spent = [u], 0.0
            path.append(w)
            spent += cost(u, w) if cost else 0.0
            trail.append(w)
        if len(path) > 1:
            paths.append(path)
        start = min((k for k, v in remaining.items() if v), default=None)
    return paths


def plan_auxiliary_paths(topology: Topology, l_th: int = 16, start: int = 1) -> Plan:
    if l_th < 2:
        raise ValueError("l_th must be at least 2 (one link per path)")
    if not 1 <= start <= topology.n:
        raise ValueError(f"start node {start} outside 1..{topology.n}")

    def fits(path, _cost, _u, _w):
        return len(path) + 1 <= l_th

    paths = edge_dfs_cover(topology.links, start, fits)
    return Plan.of(paths, l_th)


def check_plan(plan: Plan, topology: Topology, demanded: Iterable[Link] | None = None,
               l_th: int | None = None) -> list[str]:
    """Return constraint violations (empty list = length bound, exact cover, disjointness all hold)."""
    problems = []
    target = topology.link_set if demanded is None else canon_set(demanded)
    for p in plan.paths:
        for a, b in zip(p, p[1:]):
            if not topology.has_link(a, b):
                problems.append(f"path {list(p)} uses non-link ({a},{b})")
    bound = l_th if l_th is not None else plan.l_th
    if bound is not None and not math.isinf(bound):
        for p in plan.paths:
            if len(p) > bound:
                problems.append(f"path {list(p)} has {len(p)} nodes > l_th={bound}")
    if plan.covered() != set(target):
        missing = set(target) - plan.covered()
        extra = plan.covered() - set(target)
        problems.append(f"cover mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    if not plan.is_edge_disjoint():
        problems.append("paths overlap on some link")
    return problems

"""Switch behaviour for probes: record metadata, pop the SR stack, forward or deliver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .probes import (
    InfoLabel,
    ProbeFrame,
    ProbeKind,
    bitmap_fields,
    decode_frame,
    encode_frame,
)
from .topo import Link, Topology, canon

DEFAULT_LTH = 16
U32_MAX = 2**32 - 1


class ForwardingError(ValueError):
    pass


@dataclass(frozen=True)
class FaultState:
    down_links: frozenset[Link] = frozenset()

    def is_down(self, u: int, v: int) -> bool:
        return canon(u, v) in self.down_links


def inject_link_fault(faults: FaultState, link: tuple[int, int], topology: Topology) -> FaultState:
    key = canon(*link)
    if key not in topology.latency:
        raise ForwardingError(f"unknown link {key}")
    return FaultState(faults.down_links | {key})


def clear_link_fault(faults: FaultState, link: tuple[int, int]) -> FaultState:
    return FaultState(faults.down_links - {canon(*link)})


@dataclass(frozen=True)
class Forward:
    next_node: int
    frame: ProbeFrame


@dataclass(frozen=True)
class Deliver:
    frame: ProbeFrame


@dataclass(frozen=True)
class DeliveredReport:
    frame: ProbeFrame
    path_taken: tuple[int, ...]
    total_latency_us: float

    def to_json(self) -> dict:
        return {
            "status": "delivered",
            "path": list(self.path_taken),
            "total_latency_us": self.total_latency_us,
            "frame": self.frame.to_json(),
        }


@dataclass(frozen=True)
class Lost:
    path: tuple[int, ...]
    link: Link

    def to_json(self) -> dict:
        return {"status": "lost", "path": list(self.path), "failed_link": list(self.link)}


ProbeResult = Union[DeliveredReport, Lost]


def port_status(topology: Topology, node: int, faults: FaultState) -> int:
    """Bit k set when the k-th incident link (neighbours ascending) is down; first 8 links only."""
    nbrs = sorted(v if u == node else u for u, v in topology.links if node in (u, v))
    bits = 0
    for k, w in enumerate(nbrs[:8]):
        if faults.is_down(node, w):
            bits |= 1 << k
    return bits


def switch_metadata(topology: Topology, node: int, clock_us: float) -> dict[str, int]:
    """Synthetic node-level metadata derived from the loads of incident links."""
    incident = [k for k in topology.links if node in k]
    loads = [topology.load[k] for k in incident] or [0.0]
    peak = max(loads)
    pkts = sum(int(topology.load[k] * topology.capacity[k] * 125) for k in incident)
    return {
        "queue_length": int(round(peak * 1000)),
        "switch_workload": int(round(sum(loads) * 1000)),
        "congestion_status": int(peak > 0.8),
        "port_timestamp": int(round(clock_us * 1000)),  # ns
        "port_packet_count": pkts,
        "queue_loss_per_mille": int(round(max(0.0, peak - 0.9) * 100)),
        "port_loss_per_mille": int(round(max(0.0, peak - 0.95) * 100)),
    }


def make_label(frame: ProbeFrame, node: int, topology: Topology, faults: FaultState,
               prev: int | None, clock_us: float) -> InfoLabel:
    if frame.kind is ProbeKind.AUXILIARY:
        lat = 0 if prev is None else min(U32_MAX, int(round(topology.effective_latency(prev, node))))
        return InfoLabel(node, (lat, port_status(topology, node, faults)))
    meta = switch_metadata(topology, node, clock_us)
    return InfoLabel(node, tuple(meta[name] for name, _ in bitmap_fields(frame.bitmap)))


def process_at_switch(frame: ProbeFrame, node: int, topology: Topology, faults: FaultState | None = None,
                      prev: int | None = None, clock_us: float = 0.0) -> Forward | Deliver:
    if not 1 <= node <= topology.n:
        raise ForwardingError(f"node {node} outside 1..{topology.n}")
    faults = faults or FaultState()
    label = make_label(frame, node, topology, faults, prev, clock_us)
    info = frame.info_stack + (label,)
    if not frame.sr_stack:
        return Deliver(ProbeFrame(frame.kind, (), frame.bitmap, info))
    nxt, rest = frame.sr_stack[0], frame.sr_stack[1:]
    if not topology.has_link(node, nxt):
        raise ForwardingError(f"SR label {nxt} is not a neighbour of switch {node}")
    return Forward(nxt, ProbeFrame(frame.kind, rest, frame.bitmap, info))


def run_probe(topology: Topology, faults: FaultState | None, path, kind: ProbeKind = ProbeKind.DYNAMIC,
              bitmap: int = 0, l_th: int = DEFAULT_LTH) -> ProbeResult:
    """Inject a probe at path[0] and follow it hop by hop through the wire format."""
    path = tuple(int(x) for x in path)
    if not path:
        raise ForwardingError("empty probe path")
    for a, b in zip(path, path[1:]):
        if not topology.has_link(a, b):
            raise ForwardingError(f"consecutive nodes {a},{b} are not adjacent")
    faults = faults or FaultState()
    if kind is ProbeKind.AUXILIARY:
        bitmap = 0
    wire = encode_frame(ProbeFrame(kind, path[1:], bitmap), l_th)

    node, prev, clock = path[0], None, 0.0
    taken = [node]
    while True:
        frame = decode_frame(wire, l_th)
        step = process_at_switch(frame, node, topology, faults, prev, clock)
        if isinstance(step, Deliver):
            return DeliveredReport(step.frame, tuple(taken), clock)
        if faults.is_down(node, step.next_node):
            return Lost(path, canon(node, step.next_node))
        clock += topology.effective_latency(node, step.next_node)
        wire = encode_frame(step.frame, l_th)
        prev, node = node, step.next_node
        taken.append(node)


def run_plan(topology: Topology, faults: FaultState | None, paths, kind: ProbeKind = ProbeKind.DYNAMIC,
             bitmap: int = 0, l_th: int = DEFAULT_LTH) -> list[ProbeResult]:
    return [run_probe(topology, faults, p, kind, bitmap, l_th) for p in paths]

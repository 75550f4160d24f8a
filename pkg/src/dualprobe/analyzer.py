"""Collector side: a latest-value telemetry store, fault localization from lost APs, grid exports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .appd import Plan
from .dataplane import DeliveredReport, FaultState, Lost
from .probes import AUX_FIELDS, ProbeKind, bitmap_fields
from .topo import Link, Topology, canon, canon_set

KIND_NAMES = {ProbeKind.AUXILIARY: "aux", ProbeKind.DYNAMIC: "dyn"}

# fault-mode cell codes
NO_LINK, LINK_OK, LINK_FAULT, LINK_UNKNOWN = 0, 1, 2, 3


class AnalyzerError(ValueError):
    pass


@dataclass
class Entry:
    round: int
    values: dict[str, int]


@dataclass
class TelemetryStore:
    """Latest metadata per (switch, probe kind); AP link latencies per link."""

    entries: dict[tuple[int, str], Entry] = field(default_factory=dict)
    link_latency: dict[Link, tuple[int, int]] = field(default_factory=dict)  # link -> (round, us)

    def get(self, switch: int, kind: str) -> dict[str, int] | None:
        e = self.entries.get((switch, kind))
        return None if e is None else dict(e.values)

    def _upsert(self, key, rnd: int, values: dict[str, int]) -> None:
        old = self.entries.get(key)
        if old is None or rnd >= old.round:
            self.entries[key] = Entry(rnd, values)

    def snapshot(self) -> dict:
        return {
            "entries": {k: (e.round, tuple(sorted(e.values.items()))) for k, e in self.entries.items()},
            "links": dict(self.link_latency),
        }

    def to_json(self) -> dict:
        out = {f"{s}:{k}": {"round": e.round, **e.values} for (s, k), e in sorted(self.entries.items())}
        links = {f"{u}-{v}": {"round": r, "latency_us": lat} for (u, v), (r, lat) in sorted(self.link_latency.items())}
        return {"switches": out, "links": links}

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fields(kind: ProbeKind, bitmap: int) -> list[str]:
    if kind is ProbeKind.AUXILIARY:
        return [name for name, _ in AUX_FIELDS]
    return [name for name, _ in bitmap_fields(bitmap)]


def ingest_reports(store: TelemetryStore, reports: Iterable, round: int) -> TelemetryStore:
    """Upsert every label of the delivered reports; lost probes carry nothing and are skipped."""
    for rep in reports:
        if not isinstance(rep, DeliveredReport):
            continue
        frame = rep.frame
        names = _fields(frame.kind, frame.bitmap)
        kind = KIND_NAMES[frame.kind]
        for label in frame.info_stack:
            store._upsert((label.switch_id, kind), round, dict(zip(names, label.fields)))
        if frame.kind is ProbeKind.AUXILIARY:
            # label i>0 carries the latency of the link it arrived over
            for prev, label in zip(rep.path_taken, frame.info_stack[1:]):
                key = canon(prev, label.switch_id)
                old = store.link_latency.get(key)
                if old is None or round >= old[0]:
                    store.link_latency[key] = (round, int(label.fields[0]))
    return store


def localize_fault(ap_plan: Plan, lost_paths: Iterable) -> frozenset[Link]:
    """Union of the links of every lost AP; a superset of the links actually down."""
    known = set(ap_plan.paths)
    out: set[Link] = set()
    for lost in lost_paths:
        path = tuple(lost.path if isinstance(lost, Lost) else lost)
        if path not in known:
            raise AnalyzerError(f"lost path {list(path)} is not part of the AP plan")
        out.update(canon(a, b) for a, b in zip(path, path[1:]))
    return frozenset(out)


def confirmed_faults(ap_plan: Plan, lost_paths: Iterable) -> frozenset[Link]:
    """Links that are certainly down: lost paths that consist of a single link."""
    lost_paths = list(lost_paths)
    localize_fault(ap_plan, lost_paths)  # rejects paths outside the plan
    paths = [tuple(x.path if isinstance(x, Lost) else x) for x in lost_paths]
    return frozenset(canon(*p) for p in paths if len(p) == 2)


def path_latency(report: DeliveredReport) -> float:
    """Last-hop minus first-hop port timestamp, in microseconds."""
    names = _fields(report.frame.kind, report.frame.bitmap)
    if "port_timestamp" not in names:
        raise AnalyzerError("report does not carry port timestamps")
    labels = report.frame.info_stack
    if len(labels) < 2:
        raise AnalyzerError("need at least two labels for a path latency")
    k = names.index("port_timestamp")
    return (labels[-1].fields[k] - labels[0].fields[k]) / 1000.0


def path_utilization(topology: Topology, path, packets_before: Mapping[int, int],
                     packets_after: Mapping[int, int], interval_s: float,
                     packet_bytes: int = 1500) -> tuple[float, float]:
    """Bottleneck utilisation and throughput (Mbit/s) of a path from per-switch packet counters.

    Traffic at a switch is charged to its outgoing path link; a rough
    estimate, not a flow-level measurement.
    """
    if interval_s <= 0:
        raise AnalyzerError("interval must be positive")
    util, thr = 0.0, math.inf
    for a, b in zip(path, path[1:]):
        mbits = (packets_after[a] - packets_before[a]) * packet_bytes * 8 / 1e6
        rate = mbits / interval_s
        util = max(util, rate / topology.capacity[canon(a, b)])
        thr = min(thr, rate)
    return util, (0.0 if math.isinf(thr) else thr)


# --------------------------------------------------------------------------- grid export


@dataclass(frozen=True)
class Grid:
    mode: str
    matrix: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self.matrix:
            if self.mode == "load":
                w.writerow(["" if math.isnan(x) else f"{x:.3f}" for x in row])
            else:
                w.writerow([int(x) for x in row])
        return buf.getvalue()

    def to_svg(self, cell: int = 16) -> str:
        n = self.matrix.shape[0]
        size = n * cell
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
               f'viewBox="0 0 {size} {size}">']
        finite = self.matrix[~np.isnan(self.matrix)] if self.mode == "load" else np.array([])
        top = float(finite.max()) if finite.size else 1.0
        for i in range(n):
            for j in range(n):
                out.append(f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" height="{cell}" '
                           f'fill="{self._colour(self.matrix[i, j], top)}" stroke="#ffffff"/>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def _colour(self, x: float, top: float) -> str:
        if self.mode == "fault":
            return {NO_LINK: "#eeeeee", LINK_OK: "#4caf50", LINK_FAULT: "#d32f2f",
                    LINK_UNKNOWN: "#fbc02d"}[int(x)]
        if math.isnan(x):
            return "#eeeeee"
        # white -> dark blue with load
        t = min(1.0, x / top) if top > 0 else 0.0
        r = g = int(round(255 * (1 - t)))
        return f"#{r:02x}{g:02x}ff"

    def write(self, prefix) -> tuple[str, str]:
        csv_path, svg_path = f"{prefix}.csv", f"{prefix}.svg"
        with open(csv_path, "w") as fh:
            fh.write(self.to_csv())
        with open(svg_path, "w") as fh:
            fh.write(self.to_svg())
        return csv_path, svg_path


def export_grid(topology: Topology, mode: str = "load", store: TelemetryStore | None = None,
                faults: FaultState | Iterable[Link] | None = None,
                candidates: Iterable[Link] = ()) -> Grid:
    """Symmetric n x n grid of the network.

    ``load`` mode holds link latency in microseconds (AP measurements when
    the store has them, else the topology's effective latency) and NaN
    where there is no link. ``fault`` mode holds cell codes: known-down
    links are faults, other candidate links are unknown.
    """
    n = topology.n
    if mode == "load":
        mat = np.full((n, n), np.nan)
        for u, v in topology.links:
            measured = store.link_latency.get((u, v)) if store is not None else None
            val = float(measured[1]) if measured else topology.effective_latency(u, v)
            mat[u - 1, v - 1] = mat[v - 1, u - 1] = val
    elif mode == "fault":
        down = faults.down_links if isinstance(faults, FaultState) else canon_set(faults or ())
        cand = canon_set(candidates)
        mat = np.full((n, n), float(NO_LINK))
        for key in topology.links:
            code = LINK_FAULT if key in down else LINK_UNKNOWN if key in cand else LINK_OK
            u, v = key
            mat[u - 1, v - 1] = mat[v - 1, u - 1] = code
    else:
        raise AnalyzerError(f"unknown grid mode {mode!r}")
    return Grid(mode, mat)

"""Telemetry performance indicators and the weighted cost that combines them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .appd import Plan
from .probes import ProbeKind, label_size, metadata_bitmap
from .topo import Link, Topology, canon_set

DEFAULT_BITMAP = metadata_bitmap({"queue_length", "port_timestamp"})

SCENARIO_WEIGHTS = {
    1: (0.1, 0.9, 0.0),  # latency-aware
    2: (0.9, 0.1, 0.0),  # overhead-aware
    3: (0.4, 0.4, 0.2),  # overhead + latency, some bandwidth
}


class CoverageError(ValueError):
    pass


def normalize_weights(weights: Sequence[float]) -> tuple[float, float, float]:
    w = [float(x) for x in weights]
    if len(w) not in (2, 3):
        raise ValueError("expected 2 or 3 weights (overhead, latency[, bandwidth])")
    if any(x < 0 for x in w):
        raise ValueError("weights must be non-negative")
    w += [0.0] * (3 - len(w))
    total = sum(w)
    if total <= 0:
        raise ValueError("weights sum to zero")
    if not math.isclose(total, 1.0, abs_tol=1e-9):
        warnings.warn(f"weights sum to {total:g}; normalising", stacklevel=2)
        w = [x / total for x in w]
    return (w[0], w[1], w[2])


@dataclass(frozen=True)
class TelemetryTask:
    service: frozenset[Link]
    bitmap: int = DEFAULT_BITMAP
    weights: tuple[float, float, float] = SCENARIO_WEIGHTS[1]
    dp_period: int = 1
    ap_period: int = 10

    def __post_init__(self):
        object.__setattr__(self, "service", canon_set(self.service))
        object.__setattr__(self, "weights", normalize_weights(self.weights))
        if not self.dp_period < self.ap_period:
            raise ValueError("dp_period must be shorter than ap_period")

    @property
    def label_bytes(self) -> int:
        return label_size(ProbeKind.DYNAMIC, self.bitmap)


@dataclass(frozen=True)
class MetricVector:
    f1_probes: int
    f2_latency_us: float
    f3_bytes: int
    normalized: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))


def compute_metrics(plan: Plan, topology: Topology, service: Iterable[Link],
                    label_bytes: int) -> MetricVector:
    service = canon_set(service)
    missing = service - plan.covered()
    if missing:
        raise CoverageError(f"plan leaves demanded links uncovered: {sorted(missing)}")
    f1 = len(plan.paths)
    f2 = max((topology.path_latency(list(p)) for p in plan.paths), default=0.0)
    f3 = sum(len(p) for p in plan.paths) * label_bytes
    m = len(service)
    total_lat = sum(topology.effective_latency(*k) for k in service)
    norm = (
        f1 / m if m else 0.0,
        f2 / total_lat if total_lat else 0.0,
        min(1.0, f3 / (2 * m * label_bytes)) if m else 0.0,
    )
    return MetricVector(f1, f2, f3, norm)


def task_metrics(plan: Plan, topology: Topology, task: TelemetryTask) -> MetricVector:
    return compute_metrics(plan, topology, task.service, task.label_bytes)


def weighted_revenue(metrics: MetricVector | Sequence[float], weights: Sequence[float]) -> float:
    """C = sum_i w_i * f_i over the normalised indicators."""
    w = normalize_weights(weights)
    f = metrics.normalized if isinstance(metrics, MetricVector) else tuple(metrics) + (0.0,) * (3 - len(metrics))
    return sum(a * b for a, b in zip(w, f))

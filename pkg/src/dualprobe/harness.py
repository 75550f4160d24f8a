"""Scenario sweeps, the dual-timescale telemetry loop, and result export."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .analyzer import TelemetryStore, confirmed_faults, ingest_reports, localize_fault
from .appd import Plan, plan_auxiliary_paths
from .baselines import PLANNERS
from .dataplane import DEFAULT_LTH, DeliveredReport, FaultState, Lost, inject_link_fault, run_plan
from .dppd import PolicyModel, build_instance, greedy_plans
from .metrics import (
    DEFAULT_BITMAP,
    SCENARIO_WEIGHTS,
    CoverageError,
    MetricVector,
    TelemetryTask,
    compute_metrics,
    normalize_weights,
    task_metrics,
    weighted_revenue,
)
from .probes import ProbeKind, label_size
from .topo import Link, Topology, assign_link_metrics, gen_random_topology, select_service_network

__all__ = [
    "CoverageError", "MetricVector", "TelemetryTask", "compute_metrics", "task_metrics",
    "weighted_revenue", "normalize_weights", "ResultRow", "run_scenario", "RoundRecord",
    "run_dual_timescale", "export_results", "results_csv", "HarnessError",
]

RESULT_COLUMNS = ("planner", "n", "seed", "f1", "f2_us", "f3_bytes", "C")


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    planner: str
    n: int
    seed: int
    f1: int
    f2_us: float
    f3_bytes: int
    C: float


def _model_for(models, n: int) -> PolicyModel | None:
    if models is None:
        return None
    if isinstance(models, PolicyModel):
        return models if models.n_features == 3 * n else None
    return models.get(n)


def run_scenario(scenario: int, planners: Sequence[str], sizes: Sequence[int], seeds: Sequence[int],
                 models: PolicyModel | Mapping[int, PolicyModel] | None = None, fraction: float = 1.0,
                 bitmap: int = DEFAULT_BITMAP) -> list[ResultRow]:
    """Plan and score one random instance per (size, seed) with every planner.

    ``models`` maps topology size to a trained policy (or is a single
    policy, used wherever its input width matches).
    """
    if scenario not in SCENARIO_WEIGHTS:
        raise HarnessError(f"unknown scenario {scenario}; expected one of {sorted(SCENARIO_WEIGHTS)}")
    weights = SCENARIO_WEIGHTS[scenario]
    label_bytes = label_size(ProbeKind.DYNAMIC, bitmap)
    for name in planners:
        if name != "dppd" and name not in PLANNERS:
            raise HarnessError(f"unknown planner {name!r}")
    if "dppd" in planners:
        missing = [n for n in sizes if _model_for(models, n) is None]
        if missing:
            raise HarnessError(f"no trained model for n={missing}")

    rows = []
    for n in sizes:
        for seed in seeds:
            topo = gen_random_topology(n, seed=seed)
            service = select_service_network(topo, fraction, seed)
            for name in planners:
                if name == "dppd":
                    plan = greedy_plans(_model_for(models, n), [build_instance(topo, service)])[0]
                else:
                    plan = PLANNERS[name](topo, service)
                m = compute_metrics(plan, topo, service, label_bytes)
                rows.append(ResultRow(name, n, seed, m.f1_probes, m.f2_latency_us, m.f3_bytes,
                                      weighted_revenue(m, weights)))
    return rows


# --------------------------------------------------------------------------- dual timescale


@dataclass
class RoundRecord:
    round: int
    ap_round: bool
    dp_paths: list[list[int]]
    f1: int
    f2_us: float
    f3_bytes: int
    C: float
    delivered: int
    lost: int
    candidates: list[Link] = field(default_factory=list)
    confirmed: list[Link] = field(default_factory=list)


def _view(topology: Topology, store: TelemetryStore, suspected: frozenset[Link]) -> Topology:
    """Controller's picture: AP-measured latencies, suspected links removed."""
    links = tuple(k for k in topology.links if k not in suspected)
    lat = {k: (store.link_latency[k][1] if k in store.link_latency else topology.latency[k]) for k in links}
    measured = {k: (0.0 if k in store.link_latency else topology.load[k]) for k in links}
    lat = {k: max(1, v) for k, v in lat.items()}
    return Topology(topology.n, links, lat, measured, {k: topology.capacity[k] for k in links}, topology.seed)


def run_dual_timescale(topology: Topology, task: TelemetryTask, model: PolicyModel, rounds: int,
                       fault_schedule: Mapping[int, Iterable[Link]] | None = None, perturb: bool = False,
                       seed: int = 0, l_th: int = DEFAULT_LTH,
                       on_round: Callable[[RoundRecord], None] | None = None) -> list[RoundRecord]:
    """Run DPs every round and APs every ``ap_period // dp_period`` rounds.

    After each AP round the controller localizes faults, rebuilds the
    instance over the service links not under suspicion and re-decodes the
    DP plan greedily. ``fault_schedule`` maps a round to links that go down
    at its start; ``perturb`` re-draws link latencies before every AP round
    after the first.
    """
    if model.n_features != 3 * topology.n:
        raise HarnessError(f"model expects {model.n_features // 3} nodes, topology has {topology.n}")
    fault_schedule = fault_schedule or {}
    every = max(1, task.ap_period // task.dp_period)
    ap_plan = plan_auxiliary_paths(topology, l_th)
    store = TelemetryStore()
    faults = FaultState()
    truth = topology
    dp_plan = Plan.of([])
    suspected: frozenset[Link] = frozenset()
    out: list[RoundRecord] = []

    for r in range(rounds):
        for link in fault_schedule.get(r, ()):
            faults = inject_link_fault(faults, link, truth)
        ap_round = r % every == 0
        candidates, confirmed = [], []
        if ap_round:
            if perturb and r > 0:
                truth = assign_link_metrics(truth, seed=seed * 100003 + r)
            aps = run_plan(truth, faults, ap_plan.paths, ProbeKind.AUXILIARY, l_th=l_th)
            ingest_reports(store, aps, r)
            lost = [x for x in aps if isinstance(x, Lost)]
            suspected = localize_fault(ap_plan, lost)
            candidates = sorted(suspected)
            confirmed = sorted(confirmed_faults(ap_plan, lost))
            demanded = task.service - suspected
            if demanded:
                view = _view(truth, store, suspected)
                dp_plan = greedy_plans(model, [build_instance(view, demanded)])[0]
            else:
                dp_plan = Plan.of([])
        dps = run_plan(truth, faults, dp_plan.paths, ProbeKind.DYNAMIC, task.bitmap, l_th=l_th)
        ingest_reports(store, dps, r)
        if dp_plan.paths:
            m = compute_metrics(dp_plan, truth, task.service - suspected, task.label_bytes)
            c = weighted_revenue(m, task.weights)
        else:
            m, c = MetricVector(0, 0.0, 0), 0.0
        rec = RoundRecord(r, ap_round, [list(p) for p in dp_plan.paths], m.f1_probes, m.f2_latency_us,
                          m.f3_bytes, c, sum(isinstance(x, DeliveredReport) for x in dps),
                          sum(isinstance(x, Lost) for x in dps), candidates, confirmed)
        out.append(rec)
        if on_round:
            on_round(rec)
    return out


# --------------------------------------------------------------------------- export


def _rows_as_dicts(table) -> list[dict]:
    return [asdict(r) if not isinstance(r, dict) else dict(r) for r in table]


def results_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in _rows_as_dicts(table):
        w.writerow([r["planner"], r["n"], r["seed"], r["f1"], f"{r['f2_us']:.3f}", r["f3_bytes"], f"{r['C']:.6f}"])
    return buf.getvalue()


def _svg_plot(table, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = _rows_as_dicts(table)
    planners = sorted({r["planner"] for r in rows})
    sizes = sorted({r["n"] for r in rows})
    plt.rcParams["svg.hashsalt"] = "dualprobe"
    fig, axes = plt.subplots(1, 4, figsize=(16, 3.6))
    for name in planners:
        mine = [r for r in rows if r["planner"] == name]
        for ax, key in zip(axes[:3], ("C", "f2_us", "f1")):
            ys = [sum(r[key] for r in mine if r["n"] == n) / max(1, sum(r["n"] == n for r in mine)) for n in sizes]
            ax.plot(sizes, ys, marker="o", label=name)
        axes[3].scatter([r["f1"] for r in mine], [r["f2_us"] for r in mine], label=name, s=12)
    for ax, title in zip(axes, ("weighted cost C", "max path latency (us)", "probes", "latency vs probes")):
        ax.set_title(title)
    for ax in axes[:3]:
        ax.set_xlabel("switches")
    axes[3].set_xlabel("probes")
    axes[3].set_ylabel("max path latency (us)")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def export_results(table, path, fmt: str | None = None) -> str:
    """Write a result table as csv, json or an svg plot; format defaults to the file suffix."""
    if not table:
        raise HarnessError("nothing to export: empty table")
    fmt = fmt or str(path).rsplit(".", 1)[-1]
    if fmt == "csv":
        with open(path, "w") as fh:
            fh.write(results_csv(table))
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump(_rows_as_dicts(table), fh, indent=2)
            fh.write("\n")
    elif fmt in ("svg", "svg-plot"):
        _svg_plot(table, path)
    else:
        raise HarnessError(f"unknown export format {fmt!r}")
    return str(path)

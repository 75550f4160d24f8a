import json
import random

import numpy as np
import pytest

from dualprobe.analyzer import (
    LINK_FAULT,
    LINK_OK,
    LINK_UNKNOWN,
    NO_LINK,
    AnalyzerError,
    TelemetryStore,
    confirmed_faults,
    export_grid,
    ingest_reports,
    localize_fault,
    path_latency,
    path_utilization,
)
from dualprobe.appd import Plan, plan_auxiliary_paths
from dualprobe.dataplane import DeliveredReport, FaultState, run_plan, run_probe
from dualprobe.metrics import DEFAULT_BITMAP
from dualprobe.probes import InfoLabel, ProbeFrame, ProbeKind, metadata_bitmap
from dualprobe.topo import canon, from_links, gen_random_topology

DP = ProbeKind.DYNAMIC
QL = metadata_bitmap({"queue_length"})


def report(labels, bitmap=QL, path=None):
    frame = ProbeFrame(DP, (), bitmap, tuple(InfoLabel(s, v) for s, v in labels))
    return DeliveredReport(frame, tuple(path or [s for s, _ in labels]), 0.0)


def test_latest_round_wins():
    store = TelemetryStore()
    ingest_reports(store, [report([(3, (10,))])], 1)
    ingest_reports(store, [report([(3, (20,))])], 2)
    assert store.get(3, "dyn") == {"queue_length": 20}
    ingest_reports(store, [report([(3, (99,))])], 1)
    assert store.get(3, "dyn") == {"queue_length": 20}


def test_empty_batch_leaves_store_unchanged():
    store = TelemetryStore()
    ingest_reports(store, [report([(1, (5,))])], 0)
    before = store.snapshot()
    ingest_reports(store, [], 4)
    assert store.snapshot() == before


def test_keys_touched_bounded_by_labels():
    rng = random.Random(0)
    for _ in range(50):
        reports = [report([(rng.randint(1, 6), (rng.randint(0, 9),)) for _ in range(rng.randint(1, 4))])
                   for _ in range(rng.randint(1, 5))]
        n_labels = sum(len(r.frame.info_stack) for r in reports)
        store = ingest_reports(TelemetryStore(), reports, 0)
        assert len(store.entries) <= n_labels


def test_same_round_twice_is_idempotent():
    t = gen_random_topology(8, seed=1)
    reps = run_plan(t, None, plan_auxiliary_paths(t).paths, ProbeKind.AUXILIARY)
    store = ingest_reports(TelemetryStore(), reps, 3)
    snap = store.snapshot()
    ingest_reports(store, reps, 3)
    assert store.snapshot() == snap


def test_ap_latencies_recorded_per_link():
    t = gen_random_topology(8, seed=6)
    reps = run_plan(t, None, plan_auxiliary_paths(t).paths, ProbeKind.AUXILIARY)
    store = ingest_reports(TelemetryStore(), reps, 0)
    assert set(store.link_latency) == set(t.links)
    for k, (_, lat) in store.link_latency.items():
        assert lat == round(t.effective_latency(*k))


def test_fig6_candidates(fig6):
    plan = Plan.of([[1, 2], [1, 3], [2, 4, 5, 3]])
    assert localize_fault(plan, [[2, 4, 5, 3]]) == {(2, 4), (4, 5), (3, 5)}


def test_no_loss_no_candidates(fig6):
    assert localize_fault(plan_auxiliary_paths(fig6), []) == frozenset()


def test_two_lost_paths_union():
    plan = Plan.of([[1, 2, 3], [3, 4, 5], [5, 6]])
    got = localize_fault(plan, [[1, 2, 3], [5, 6]])
    expected = {canon(1, 2), canon(2, 3)} | {canon(5, 6)}
    assert got == expected


def test_lost_path_must_be_planned():
    with pytest.raises(AnalyzerError):
        localize_fault(Plan.of([[1, 2]]), [[2, 3]])


def test_confirmed_only_single_link_paths():
    plan = Plan.of([[1, 2, 3], [3, 4]])
    assert confirmed_faults(plan, [[1, 2, 3], [3, 4]]) == {(3, 4)}


@pytest.mark.parametrize("seed", range(5))
def test_every_single_fault_is_localised(seed):
    t = gen_random_topology(12, seed=seed)
    plan = plan_auxiliary_paths(t, 4)
    for link in t.links:
        res = run_plan(t, FaultState(frozenset({link})), plan.paths, ProbeKind.AUXILIARY, l_th=4)
        lost = [r for r in res if not isinstance(r, DeliveredReport)]
        cand = localize_fault(plan, lost)
        assert link in cand and len(cand) <= 3


def test_timestamp_difference():
    r = report([(1, (100_000,)), (2, (250_000,)), (3, (400_000,))], metadata_bitmap({"port_timestamp"}))
    assert path_latency(r) == 300


def test_single_hop_equal_stamps():
    r = report([(1, (5000,)), (1, (5000,))], metadata_bitmap({"port_timestamp"}))
    assert path_latency(r) == 0


def test_path_latency_errors():
    with pytest.raises(AnalyzerError):
        path_latency(report([(1, (0,))], metadata_bitmap({"port_timestamp"})))
    with pytest.raises(AnalyzerError):
        path_latency(report([(1, (0,)), (2, (1,))]))


def test_path_latency_matches_simulator():
    rng = random.Random(1)
    for k in range(100):
        t = gen_random_topology(rng.randint(4, 15), seed=k)
        nbrs = t.neighbors()
        walk = [rng.randint(1, t.n)]
        for _ in range(rng.randint(1, 6)):
            walk.append(rng.choice(nbrs[walk[-1]]))
        rep = run_probe(t, None, walk, DP, DEFAULT_BITMAP)
        assert path_latency(rep) == pytest.approx(rep.total_latency_us, abs=1e-3)


def test_triangle_grid(triangle):
    g = export_grid(triangle, "load")
    assert g.matrix.shape == (3, 3)
    assert np.count_nonzero(~np.isnan(np.triu(g.matrix, 1)) & (np.triu(g.matrix, 1) > 0)) == 3
    assert np.array_equal(np.nan_to_num(g.matrix), np.nan_to_num(g.matrix.T))


def test_fault_grid_semantics(fig6):
    plan = Plan.of([[1, 2], [1, 3], [2, 4, 5, 3]])
    cand = localize_fault(plan, [[2, 4, 5, 3]])
    g = export_grid(fig6, "fault", faults=FaultState(frozenset({(4, 5)})), candidates=cand)
    m = g.matrix
    assert m[3, 4] == m[4, 3] == LINK_FAULT
    assert m[1, 3] == LINK_UNKNOWN and m[2, 4] == LINK_UNKNOWN
    assert m[0, 1] == LINK_OK and m[0, 3] == NO_LINK
    assert (m == m.T).all()


@pytest.mark.parametrize("seed", range(10))
def test_grids_always_symmetric(seed):
    t = gen_random_topology(10, seed=seed)
    for g in (export_grid(t, "load"), export_grid(t, "fault", candidates=t.links[:3])):
        assert np.array_equal(np.nan_to_num(g.matrix), np.nan_to_num(g.matrix.T))


def test_grid_files_deterministic(tmp_path, triangle):
    g = export_grid(triangle, "load")
    a = g.write(tmp_path / "a")
    b = g.write(tmp_path / "b")
    for x, y in zip(a, b):
        assert open(x).read() == open(y).read()
    assert open(a[1]).read().startswith("<svg")
    assert open(a[0]).read().splitlines()[0] == ",100.000,100.000"


def test_bad_grid_mode(triangle):
    with pytest.raises(AnalyzerError):
        export_grid(triangle, "heat")


def test_store_dump_keys(tmp_path):
    store = ingest_reports(TelemetryStore(), [report([(4, (7,))])], 2)
    store.dump(tmp_path / "s.json")
    data = json.load(open(tmp_path / "s.json"))
    assert data["switches"] == {"4:dyn": {"round": 2, "queue_length": 7}}


def test_utilisation():
    t = from_links(3, [(1, 2), (2, 3)], capacity_mbps=100)
    util, thr = path_utilization(t, [1, 2, 3], {1: 0, 2: 0}, {1: 1000, 2: 4000}, 1.0, packet_bytes=1250)
    # 1000*1250*8 = 10 Mbit/s and 40 Mbit/s over 100 Mbit/s links
    assert util == pytest.approx(0.4) and thr == pytest.approx(10.0)
    with pytest.raises(AnalyzerError):
        path_utilization(t, [1, 2], {}, {}, 0)

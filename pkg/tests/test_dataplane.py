import itertools

import pytest

from dualprobe.dataplane import (
    Deliver,
    DeliveredReport,
    FaultState,
    Forward,
    ForwardingError,
    Lost,
    clear_link_fault,
    inject_link_fault,
    port_status,
    process_at_switch,
    run_plan,
    run_probe,
)
from dualprobe.metrics import DEFAULT_BITMAP
from dualprobe.probes import ProbeFrame, ProbeKind
from dualprobe.topo import from_links, gen_random_topology

AP, DP = ProbeKind.AUXILIARY, ProbeKind.DYNAMIC


def test_ap_step_at_node_two(path3):
    step = process_at_switch(ProbeFrame(AP, (3,)), 2, path3, prev=1)
    assert isinstance(step, Forward) and step.next_node == 3
    (label,) = step.frame.info_stack
    assert label.switch_id == 2 and label.fields == (100, 0)
    assert step.frame.sr_stack == ()


def test_dp_delivers_at_last_hop(path3):
    rep = run_probe(path3, None, [1, 2, 3], DP, DEFAULT_BITMAP)
    assert isinstance(rep, DeliveredReport)
    assert len(rep.frame.info_stack) == len(rep.path_taken) == 3
    assert isinstance(process_at_switch(ProbeFrame(DP, (), 1), 3, path3), Deliver)


def test_non_neighbour_sr_head(path3):
    with pytest.raises(ForwardingError):
        process_at_switch(ProbeFrame(DP, (3,), 0), 1, path3)


def test_node_out_of_range(path3):
    with pytest.raises(ForwardingError):
        process_at_switch(ProbeFrame(DP, (), 0), 9, path3)


def test_fig6_path_lost_on_faulty_link(fig6):
    faults = inject_link_fault(FaultState(), (4, 5), fig6)
    res = run_probe(fig6, faults, [2, 4, 5, 3], AP)
    assert isinstance(res, Lost) and res.link == (4, 5)


def test_single_hop_latency():
    t = from_links(2, [(1, 2)], latency_us=100)
    assert run_probe(t, None, [1, 2]).total_latency_us == 100


def test_latencies_add_up():
    t = from_links(3, [(1, 2), (2, 3)], latency_us={(1, 2): 100, (2, 3): 200})
    assert run_probe(t, None, [1, 2, 3]).total_latency_us == 300


def test_non_adjacent_path(path3):
    with pytest.raises(ForwardingError):
        run_probe(path3, None, [1, 3])
    with pytest.raises(ForwardingError):
        run_probe(path3, None, [])


def test_fault_injection_idempotent_and_clearable(fig6, triangle):
    f = inject_link_fault(inject_link_fault(FaultState(), (4, 5), fig6), (5, 4), fig6)
    assert f.down_links == {(4, 5)}
    assert clear_link_fault(f, (4, 5)).down_links == frozenset()
    with pytest.raises(ForwardingError):
        inject_link_fault(FaultState(), (1, 9), triangle)


def test_lost_iff_path_hits_a_down_link():
    t = gen_random_topology(9, seed=4)
    nbrs = t.neighbors()
    walks = [[1]]
    for _ in range(4):
        walks = [w + [x] for w in walks for x in nbrs[w[-1]]][:40]
    for link in t.links:
        faults = FaultState(frozenset({link}))
        for w in walks:
            hit = any(tuple(sorted(e)) == link for e in zip(w, w[1:]))
            assert isinstance(run_probe(t, faults, w), Lost) == hit


def test_info_stack_grows_one_label_per_hop():
    t = gen_random_topology(8, seed=2)
    path = [1] + [t.neighbors()[1][0]]
    frame = ProbeFrame(DP, tuple(path[1:]), DEFAULT_BITMAP)
    node, prev = path[0], None
    for hop, nxt in enumerate(path[1:] + [None], start=1):
        step = process_at_switch(frame, node, t, prev=prev)
        assert len(step.frame.info_stack) == hop
        if nxt is None:
            break
        frame, prev, node = step.frame, node, step.next_node


def test_port_status_marks_down_links(star):
    f = FaultState(frozenset({(1, 3)}))
    # neighbours of 1 ascending: 2, 3, 4 -> bit 1
    assert port_status(star, 1, f) == 0b010
    rep = run_probe(star, f, [1, 2], AP)
    assert rep.frame.info_stack[0].fields == (0, 0b010)


def test_timestamps_follow_link_latency(path3):
    rep = run_probe(path3, None, [1, 2, 3], DP, DEFAULT_BITMAP)
    stamps = [lab.fields[1] for lab in rep.frame.info_stack]
    assert stamps == [0, 100_000, 200_000]


def test_run_plan_keeps_order(triangle):
    out = run_plan(triangle, None, [[1, 2], [2, 3, 1]])
    assert [r.path_taken for r in out] == [(1, 2), (2, 3, 1)]


def test_report_json(triangle):
    rep = run_probe(triangle, None, [1, 2], AP)
    assert rep.to_json()["status"] == "delivered"
    lost = run_probe(triangle, FaultState(frozenset({(1, 2)})), [1, 2], AP)
    assert lost.to_json() == {"status": "lost", "path": [1, 2], "failed_link": [1, 2]}


def test_brute_force_all_single_faults_on_fixture(fig6):
    for link, path in itertools.product(fig6.links, [[2, 4, 5, 3], [1, 2], [3, 1, 2, 4]]):
        res = run_probe(fig6, FaultState(frozenset({link})), path, AP)
        edges = {tuple(sorted(e)) for e in zip(path, path[1:])}
        assert isinstance(res, Lost) == (link in edges)

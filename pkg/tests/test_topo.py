import json
import math

import networkx as nx
import pytest

from dualprobe.topo import (
    Topology,
    TopologyError,
    assign_link_metrics,
    default_edge_prob,
    from_links,
    gen_random_topology,
    odd_degree_nodes,
    select_service_network,
)


def as_nx(t):
    g = nx.Graph()
    g.add_nodes_from(range(1, t.n + 1))
    g.add_edges_from(t.links)
    return g


def test_thirty_node_default_is_connected():
    t = gen_random_topology(30, default_edge_prob(30), seed=7)
    g = as_nx(t)
    assert t.n == 30 and nx.is_connected(g)
    assert min(d for _, d in g.degree) >= 1


def test_two_nodes_full_probability_is_one_link():
    for seed in range(5):
        assert gen_random_topology(2, 1.0, seed).links == ((1, 2),)


def test_small_graph_connected_by_reachability():
    t = gen_random_topology(5, 0.6, seed=1)
    assert nx.is_connected(as_nx(t))


@pytest.mark.parametrize("seed", range(30))
def test_generated_graphs_connected_and_handshake(seed):
    n = 5 + seed
    t = gen_random_topology(n, seed=seed)
    g = as_nx(t)
    assert nx.is_connected(g)
    odd = odd_degree_nodes(t, t.links)
    assert odd == {v for v, d in g.degree if d % 2}
    assert len(odd) % 2 == 0


def test_generation_is_deterministic():
    a = gen_random_topology(20, seed=11)
    b = gen_random_topology(20, seed=11)
    assert a == b and a.dumps() == b.dumps()


def test_rejection_budget_exhausted():
    with pytest.raises(TopologyError, match="edge_prob too small"):
        gen_random_topology(40, 0.001, seed=0)


@pytest.mark.parametrize("n,p", [(1, 0.5), (5, 0.0), (5, 1.5)])
def test_bad_generation_arguments(n, p):
    with pytest.raises(TopologyError):
        gen_random_topology(n, p)


def test_degenerate_latency_range(triangle):
    t = assign_link_metrics(triangle, (100, 100), seed=4)
    assert set(t.latency.values()) == {100}


def test_latency_range_respected():
    t = assign_link_metrics(gen_random_topology(25, seed=2), (50, 500), seed=3)
    assert all(50 <= x <= 500 for x in t.latency.values())
    assert all(0.0 <= x <= 1.0 for x in t.load.values())


def test_effective_latency_multiplier(triangle):
    assert triangle.effective_latency(1, 2) == 100
    loaded = triangle.with_metrics(load={k: 0.5 for k in triangle.links})
    assert loaded.effective_latency(2, 1) == pytest.approx(100 * (1 + 4 * 0.5))


def test_bad_latency_range(triangle):
    with pytest.raises(TopologyError):
        assign_link_metrics(triangle, (0, 10))


def test_full_service_fraction(triangle):
    assert select_service_network(triangle, 1.0, 0) == triangle.link_set


def test_fractional_service_cardinality(triangle):
    s = select_service_network(triangle, 0.34, seed=5)
    assert len(s) == math.ceil(0.34 * 3) == 2


def test_service_subset_over_many_draws():
    t = gen_random_topology(15, seed=9)
    for seed in range(100):
        s = select_service_network(t, 0.3, seed)
        assert s <= t.link_set
        assert len(s) == math.ceil(round(0.3 * len(t.links), 9))


def test_service_fraction_bounds(triangle):
    for f in (0.0, 1.2):
        with pytest.raises(TopologyError):
            select_service_network(triangle, f)


def test_odd_degree_examples(cycle4, path3, star):
    assert odd_degree_nodes(cycle4, cycle4.links) == set()
    assert odd_degree_nodes(path3, path3.links) == {1, 3}
    assert odd_degree_nodes(star, star.links) == {1, 2, 3, 4}


def test_odd_degree_rejects_foreign_links(triangle):
    with pytest.raises(TopologyError):
        odd_degree_nodes(triangle, [(1, 4)])


def test_json_round_trip(tmp_path):
    t = gen_random_topology(12, seed=3)
    data = json.loads(t.dumps())
    assert set(data) == {"n", "links", "seed"}
    assert set(data["links"][0]) == {"u", "v", "latency_us", "load", "capacity_mbps"}
    assert all(rec["u"] < rec["v"] for rec in data["links"])
    assert Topology.from_json(data) == t


@pytest.mark.parametrize("links,match", [
    ([(1, 1)], "canonical"),
    ([(1, 2), (1, 2)], "duplicate"),
    ([(1, 7)], "outside"),
])
def test_structural_validation(links, match):
    lat = {k: 10 for k in links}
    with pytest.raises(TopologyError, match=match):
        Topology(3, tuple(links), lat, {k: 0.0 for k in links}, {k: 1 for k in links})

import json
import random

import numpy as np
import pytest

from oracles import random_strong_graph
from pointq import fixtures as F
from pointq import network as net
from pointq.network import (ENTRY, EXIT, INTERNAL, CommodityDemand, Link, Movement, NetworkGraph, Node,
                            Stage, TimingPlan)


def test_fixtures_validate():
    for g in (F.chain(), F.pair(), F.sensor_net(), F.four_approach(), F.two_approach(), F.grid()):
        rep = net.validate_network(g)
        assert rep.ok, str(rep)


def test_validation_collects_every_issue():
    nodes = {"A": Node("A", 60.0, 4.0)}
    links = {"in": Link("in", None, "A", -1.0, 0, 0.0, ENTRY),
             "out": Link("out", "A", None, 0.2, 10, 10.0, EXIT),
             "dead": Link("dead", "A", "B", 0.2, 10, 10.0, INTERNAL)}
    mvs = {("in", "out"): Movement("in", "out", 0.0)}
    plan = TimingPlan("A", (Stage({("in", "out"): 40.0}), Stage({("in", "out"): 30.0})))
    dem = CommodityDemand(1, {"out": 100.0}, {("in", "out"): 0.5})
    rep = net.validate_network(NetworkGraph(nodes, links, mvs, {"A": plan}, (dem,)))
    assert {"bad_length", "bad_storage", "bad_travel_time", "orphan_link", "missing_saturation",
            "dead_end", "stage_overflow", "bad_demand", "ratio_sum"} <= rep.codes()
    assert "dead" in rep.subjects("dead_end")


def test_budget_modes():
    plan = TimingPlan("1", (Stage({("a", "b"): 20.0, ("c", "d"): 15.0}), Stage({("e", "f"): 10.0})))
    assert net.stage_budget_used(plan, "stage") == 30.0
    assert net.stage_budget_used(plan, "phase_sum") == 45.0
    with pytest.raises(ValueError):
        net.stage_budget_used(plan, "other")


def test_capacity_from_green_share():
    g = F.grid()
    assert net.saturation_capacity(g, ("W1", "E12")) == pytest.approx(1800 * 28 / 60)
    assert net.capacity(F.chain(), ("in", "mid")) == 1800.0
    with pytest.raises(net.NetworkError):
        net.saturation_capacity(F.chain(), ("in", "mid"))


def test_super_node_closure_is_strongly_connected():
    fg = net.augment_with_super_node(F.sensor_net())
    assert fg.arcs["c"] == ("0", "1") and fg.arcs["f"] == ("2", "0")
    assert fg.unreachable == ()
    A, nodes, arcs = net.incidence_matrix(fg)
    assert A.shape == (7, 10)
    assert np.allclose(A.sum(axis=0), 0.0)
    assert np.linalg.matrix_rank(A) == 6


def test_incidence_signs():
    fg = net.FlowGraph(("x", "y"), {"e": ("x", "y")}, {"e": 1.0})
    A, nodes, arcs = net.incidence_matrix(fg)
    assert A[nodes.index("x"), 0] == 1.0 and A[nodes.index("y"), 0] == -1.0


def test_reserved_super_node_id():
    g = F.pair()
    bad = NetworkGraph({"0": Node("0")}, g.links, g.movements)
    with pytest.raises(net.NetworkError):
        net.augment_with_super_node(bad)


def test_turn_augmentation_with_forbidden_movement():
    g = F.four_approach()
    fg = net.augment_turn_movements(g, F.FOUR_APPROACH_MOVEMENTS)
    assert fg.arcs["a"] == ("0", "a.h")
    assert fg.movement_arcs[("a", "e")] == "a>e"
    assert fg.zero_arcs == frozenset({"a>e"})
    dropped = net.augment_turn_movements(g, F.FOUR_APPROACH_MOVEMENTS, forbidden="delete")
    assert "a>e" not in dropped.arcs
    with pytest.raises(net.NetworkError):
        net.augment_turn_movements(g, [("a", "zz")])


def test_steady_state_flows_conserve():
    g = F.grid()
    sf = net.steady_state_flows(g, g.demands[0])
    assert sf.link_flows["E12"] == pytest.approx(400 * 0.7 + 400 * 0.3)
    for n in g.nodes:
        inflow = sum(sf.link_flows[l] for l in g.incoming(n))
        outflow = sum(sf.link_flows[l] for l in g.outgoing(n))
        assert inflow == pytest.approx(outflow)


def test_routed_commodity():
    g = F.grid()
    d = CommodityDemand(2, {"W1": 100.0}, None, ("W1", "E12", "X2"))
    sf = net.steady_state_flows(g, d)
    assert sf.link_flows["E12"] == 100.0 and sf.movement_flows[("E12", "X2")] == 100.0
    assert sf.link_flows["S13"] == 0.0


def test_json_round_trip(tmp_path):
    for g in (F.grid(), F.four_approach(), F.sensor_net()):
        p = tmp_path / "n.json"
        net.save_network(g, p)
        assert net.load_network(p) == g


@pytest.mark.parametrize("name,builder", [
    ("chain", F.chain), ("sensor_net", F.sensor_net), ("four_approach", F.four_approach),
    ("two_approach", F.two_approach), ("grid", F.grid)])
def test_shipped_fixtures_match_builders(name, builder, fixtures_dir):
    doc = json.loads((fixtures_dir / f"{name}.json").read_text())
    assert net.network_from_dict(doc) == builder()


def test_random_graph_incidence_rank():
    rng = random.Random(3)
    for _ in range(50):
        fg = random_strong_graph(rng)
        A, nodes, _ = net.incidence_matrix(fg)
        assert np.linalg.matrix_rank(A) == len(nodes) - 1


def test_aggregate_two_opposite_commodities():
    g = F.two_approach()
    c1 = CommodityDemand(1, {"a": 100.0}, {("a", "f"): 1.0, ("a", "e"): 0.0})
    c2 = CommodityDemand(2, {"a": 100.0}, {("a", "f"): 0.0, ("a", "e"): 1.0})
    agg = net.aggregate_commodities([c1, c2], g)
    assert agg.turn_ratios[("a", "f")] == pytest.approx(0.5)
    assert agg.turn_ratios[("a", "e")] == pytest.approx(0.5)
    assert "d" in agg.zero_flow_links


def test_aggregate_preserves_summed_link_flows():
    g = F.grid()
    base = g.demands[0]
    routed = CommodityDemand(2, {"W1": 150.0}, None, ("W1", "E12", "S24", "X4S"))
    agg = net.aggregate_commodities([base, routed], g)
    single = net.steady_state_flows(g, CommodityDemand(1, agg.entry_flows, agg.turn_ratios))
    a = net.steady_state_flows(g, base).link_flows
    b = net.steady_state_flows(g, routed).link_flows
    for l in g.links:
        assert single.link_flows[l] == pytest.approx(a[l] + b[l], abs=1e-9)


def test_capacity_is_linear_in_green():
    g = F.grid(ew_green=14.0)
    doubled = F.grid(ew_green=28.0)
    k = ("W1", "E12")
    assert net.saturation_capacity(doubled, k) == pytest.approx(2 * net.saturation_capacity(g, k))


def test_closed_loop_without_entries_is_flagged():
    nodes = {"A": Node("A"), "B": Node("B")}
    links = {"p": Link("p", "A", "B", 1.0, 5, 5.0), "q": Link("q", "B", "A", 1.0, 5, 5.0)}
    fg = net.augment_with_super_node(NetworkGraph(nodes, links, {}))
    assert set(fg.unreachable) == {"p", "q"}
    assert not fg.strongly_connected

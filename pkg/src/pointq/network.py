"""Static arterial network model.

Flows are in vehicles/hour, times in seconds, lengths in miles.  Entry links
start at a virtual source (``from_node is None``), exit links end at a virtual
sink (``to_node is None``).
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ENTRY, INTERNAL, EXIT = "entry", "internal", "exit"
SUPER_NODE = "0"

MovementKey = tuple[str, str]


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str | None
    to_node: str | None
    length: float
    storage_capacity: int
    travel_time: float
    kind: str = INTERNAL
    lanes: int = 1


@dataclass(frozen=True)
class Movement:
    from_link: str
    to_link: str
    saturation_flow: float
    allowed: bool = True

    @property
    def key(self) -> MovementKey:
        return (self.from_link, self.to_link)


@dataclass(frozen=True)
class Node:
    id: str
    cycle_time: float | None = None  # None: unsignalized, always green
    lost_time: float = 0.0

    @property
    def signalized(self) -> bool:
        return self.cycle_time is not None


@dataclass(frozen=True)
class Stage:
    durations: Mapping[MovementKey, float]

    @property
    def length(self) -> float:
        return max(self.durations.values(), default=0.0)


@dataclass(frozen=True)
class TimingPlan:
    node_id: str
    stages: tuple[Stage, ...]
    offset: float = 0.0

    def green_time(self, movement: MovementKey) -> float:
        return sum(st.durations.get(movement, 0.0) for st in self.stages)

    def phases(self) -> list[MovementKey]:
        seen: dict[MovementKey, None] = {}
        for st in self.stages:
            for mv in st.durations:
                seen.setdefault(mv)
        return list(seen)


@dataclass(frozen=True)
class CommodityDemand:
    index: int
    entry_flows: Mapping[str, float]
    turn_ratios: Mapping[MovementKey, float] | None = None
    route: tuple[str, ...] | None = None

    @property
    def routed(self) -> bool:
        return self.route is not None


@dataclass(frozen=True)
class NetworkGraph:
    nodes: Mapping[str, Node]
    links: Mapping[str, Link]
    movements: Mapping[MovementKey, Movement]
    timing: Mapping[str, TimingPlan] = field(default_factory=dict)
    demands: tuple[CommodityDemand, ...] = ()

    def incoming(self, node: str) -> list[str]:
        return sorted(l.id for l in self.links.values() if l.to_node == node)

    def outgoing(self, node: str) -> list[str]:
        return sorted(l.id for l in self.links.values() if l.from_node == node)

    def links_of_kind(self, kind: str) -> list[str]:
        return sorted(l.id for l in self.links.values() if l.kind == kind)

    def movements_from(self, link: str, allowed_only: bool = True) -> list[MovementKey]:
        return sorted(k for k, mv in self.movements.items()
                      if k[0] == link and (mv.allowed or not allowed_only))

    def movements_into(self, link: str, allowed_only: bool = True) -> list[MovementKey]:
        return sorted(k for k, mv in self.movements.items()
                      if k[1] == link and (mv.allowed or not allowed_only))

    def movement_node(self, key: MovementKey) -> str:
        node = self.links[key[0]].to_node
        if node is None:
            raise NetworkError(f"movement {key} leaves an exit link")
        return node

    def allowed_movements(self) -> list[MovementKey]:
        return sorted(k for k, mv in self.movements.items() if mv.allowed)

    def with_timing(self, timing: Mapping[str, TimingPlan]) -> "NetworkGraph":
        return NetworkGraph(self.nodes, self.links, self.movements, dict(timing), self.demands)

    def with_demands(self, demands: Sequence[CommodityDemand]) -> "NetworkGraph":
        return NetworkGraph(self.nodes, self.links, self.movements, self.timing, tuple(demands))


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Issue:
    code: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.subject}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...]

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> set[str]:
        return {i.code for i in self.issues}

    def subjects(self, code: str | None = None) -> set[str]:
        return {i.subject for i in self.issues if code is None or i.code == code}

    def __str__(self) -> str:
        if self.ok:
            return "network is well-formed"
        return "\n".join(str(i) for i in self.issues)


def stage_budget_used(plan: TimingPlan, mode: str = "stage") -> float:
    """Green time charged against ``T_n - L_n``.

    ``mode="stage"`` charges each stage once (its longest phase); concurrent
    phases share the stage.  ``mode="phase_sum"`` charges every
    (stage, phase) duration separately.
    """
    if mode == "stage":
        return sum(st.length for st in plan.stages)
    if mode == "phase_sum":
        return sum(sum(st.durations.values()) for st in plan.stages)
    raise ValueError(f"unknown budget mode {mode!r}")


def validate_network(g: NetworkGraph, budget_mode: str = "stage", ratio_tol: float = 1e-6) -> ValidationReport:
    issues: list[Issue] = []

    def add(code: str, subject: object, msg: str) -> None:
        issues.append(Issue(code, str(subject), msg))

    if not g.nodes:
        add("no_nodes", "network", "no nodes")
        return ValidationReport(tuple(issues))

    for l in g.links.values():
        if l.kind not in (ENTRY, INTERNAL, EXIT):
            add("bad_kind", l.id, f"unknown link kind {l.kind!r}")
        if not l.length > 0:
            add("bad_length", l.id, "length must be > 0")
        if l.storage_capacity < 1:
            add("bad_storage", l.id, "storage capacity must be >= 1")
        if not l.travel_time > 0:
            add("bad_travel_time", l.id, "travel time must be > 0")
        if l.kind == ENTRY and l.from_node is not None:
            add("orphan_link", l.id, "entry link must start at the virtual source")
        if l.kind == EXIT and l.to_node is not None:
            add("orphan_link", l.id, "exit link must end at the virtual sink")
        for end, node in (("from", l.from_node), ("to", l.to_node)):
            needed = not ((end == "from" and l.kind == ENTRY) or (end == "to" and l.kind == EXIT))
            if needed and node is None:
                add("orphan_link", l.id, f"missing {end}_node")
            elif node is not None and node not in g.nodes:
                add("orphan_link", l.id, f"{end}_node {node!r} does not exist")

    for key, mv in g.movements.items():
        a, b = key
        if a not in g.links or b not in g.links:
            add("bad_movement", f"{a}>{b}", "movement references an unknown link")
            continue
        la, lb = g.links[a], g.links[b]
        if la.kind == EXIT:
            add("bad_movement", f"{a}>{b}", "exit links have no downstream movements")
        if lb.kind == ENTRY:
            add("bad_movement", f"{a}>{b}", "entry links have no upstream movements")
        if la.to_node is None or la.to_node != lb.from_node:
            add("bad_movement", f"{a}>{b}", "links do not share a node")
        if mv.allowed and not mv.saturation_flow > 0:
            add("missing_saturation", f"{a}>{b}", "allowed movement needs saturation_flow > 0")

    for l in g.links.values():
        if l.kind != EXIT and l.id in g.links and not g.movements_from(l.id):
            add("dead_end", l.id, "no allowed downstream movement")

    for n in g.nodes.values():
        if n.signalized:
            if not (n.cycle_time > n.lost_time >= 0):
                add("bad_cycle", n.id, "need cycle_time > lost_time >= 0")
            if not g.incoming(n.id) or not g.outgoing(n.id):
                add("bad_node", n.id, "signalized node needs incoming and outgoing links")

    for node_id, plan in g.timing.items():
        node = g.nodes.get(node_id)
        if node is None:
            add("bad_timing", node_id, "timing plan for unknown node")
            continue
        if not node.signalized:
            add("bad_timing", node_id, "timing plan on a node without cycle time")
            continue
        for i, st in enumerate(plan.stages):
            for mv, dur in st.durations.items():
                if mv not in g.movements:
                    add("bad_timing", node_id, f"stage {i} actuates unknown movement {mv}")
                elif g.links[mv[0]].to_node != node_id:
                    add("bad_timing", node_id, f"stage {i} actuates movement {mv} of another node")
                if dur < 0:
                    add("bad_timing", node_id, f"stage {i} has negative duration")
        used = stage_budget_used(plan, budget_mode)
        budget = node.cycle_time - node.lost_time
        if used > budget + 1e-9:
            add("stage_overflow", node_id, f"green {used:g}s exceeds T-L = {budget:g}s")

    for dem in g.demands:
        for l, d in dem.entry_flows.items():
            if l not in g.links or g.links[l].kind != ENTRY:
                add("bad_demand", l, f"commodity {dem.index}: demand on a non-entry link")
            if d < 0:
                add("bad_demand", l, f"commodity {dem.index}: negative demand")
        if dem.turn_ratios:
            sums: dict[str, float] = defaultdict(float)
            for (a, b), r in dem.turn_ratios.items():
                if (a, b) not in g.movements or not g.movements[(a, b)].allowed:
                    add("bad_ratio", a, f"commodity {dem.index}: ratio on unknown/forbidden movement {a}>{b}")
                if r < 0 or r > 1:
                    add("bad_ratio", a, f"commodity {dem.index}: ratio {r} outside [0,1]")
                sums[a] += r
            for a, s in sorted(sums.items()):
                if abs(s - 1.0) > ratio_tol:
                    add("ratio_sum", a, f"commodity {dem.index}: turn ratios sum to {s:.6g}, not 1")
        if dem.route is not None:
            problem = _route_problem(g, dem.route)
            if problem:
                add("bad_route", dem.index, problem)
    return ValidationReport(tuple(issues))


def _route_problem(g: NetworkGraph, route: Sequence[str]) -> str | None:
    if len(route) < 2:
        return "route needs at least an entry and an exit link"
    if any(l not in g.links for l in route):
        return "route references unknown links"
    if g.links[route[0]].kind != ENTRY or g.links[route[-1]].kind != EXIT:
        return "route must run from an entry link to an exit link"
    for a, b in zip(route, route[1:]):
        mv = g.movements.get((a, b))
        if mv is None or not mv.allowed:
            return f"route step {a}>{b} is not an allowed movement"
    return None


# ---------------------------------------------------------------- capacity

def saturation_capacity(g: NetworkGraph, movement: MovementKey) -> float:
    """Movement capacity ``s = c * (sum of stage greens) / T_n`` in vph."""
    mv = g.movements.get(tuple(movement))
    if mv is None:
        raise NetworkError(f"unknown movement {movement}")
    node = g.movement_node(mv.key)
    plan = g.timing.get(node)
    if plan is None or not g.nodes[node].signalized:
        raise NetworkError(f"no timing plan at node {node}")
    if not mv.allowed:
        return 0.0
    return plan.green_time(mv.key) * mv.saturation_flow / g.nodes[node].cycle_time


def capacity(g: NetworkGraph, movement: MovementKey) -> float:
    """Like :func:`saturation_capacity` but unsignalized nodes give ``c``."""
    mv = g.movements[tuple(movement)]
    if not mv.allowed:
        return 0.0
    node = g.movement_node(mv.key)
    if node in g.timing and g.nodes[node].signalized:
        return saturation_capacity(g, mv.key)
    return mv.saturation_flow


# ---------------------------------------------------------------- flow graphs

@dataclass(frozen=True)
class FlowGraph:
    """Directed multigraph used for conservation and identifiability.

    ``arcs`` maps arc id to ``(tail, head)``.  Movement arcs created by
    :func:`augment_turn_movements` are listed in ``movement_arcs``; arcs in
    ``zero_arcs`` carry a known flow of 0 (forbidden turns).
    """
    nodes: tuple[str, ...]
    arcs: Mapping[str, tuple[str, str]]
    lengths: Mapping[str, float]
    movement_arcs: Mapping[MovementKey, str] = field(default_factory=dict)
    zero_arcs: frozenset[str] = frozenset()
    unreachable: tuple[str, ...] = ()
    super_node: str = SUPER_NODE

    @property
    def arc_ids(self) -> list[str]:
        return list(self.arcs)

    @property
    def strongly_connected(self) -> bool:
        return not self.unreachable and _strongly_connected(self.nodes, self.arcs)

    def incident(self, node: str) -> list[str]:
        return [a for a, (t, h) in self.arcs.items() if t == node or h == node]


def movement_arc_id(key: MovementKey) -> str:
    return f"{key[0]}>{key[1]}"


def _reach(start: str, adj: Mapping[str, list[str]]) -> set[str]:
    seen = {start}
    todo = deque([start])
    while todo:
        u = todo.popleft()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


def _strongly_connected(nodes: Sequence[str], arcs: Mapping[str, tuple[str, str]]) -> bool:
    if not nodes:
        return True
    fwd: dict[str, list[str]] = defaultdict(list)
    bwd: dict[str, list[str]] = defaultdict(list)
    for t, h in arcs.values():
        fwd[t].append(h)
        bwd[h].append(t)
    root = nodes[0]
    everything = set(nodes)
    return _reach(root, fwd) >= everything and _reach(root, bwd) >= everything


def _unreachable_arcs(nodes: Sequence[str], arcs: Mapping[str, tuple[str, str]], root: str) -> tuple[str, ...]:
    fwd: dict[str, list[str]] = defaultdict(list)
    bwd: dict[str, list[str]] = defaultdict(list)
    for t, h in arcs.values():
        fwd[t].append(h)
        bwd[h].append(t)
    down = _reach(root, fwd)
    up = _reach(root, bwd)
    # an arc lies on a root->root walk iff its tail is reachable and its head reaches back
    return tuple(sorted(a for a, (t, h) in arcs.items() if t not in down or h not in up))


def augment_with_super_node(g: NetworkGraph) -> FlowGraph:
    """Close the network through an artificial node ``0``.

    Entry links start at node 0 and exit links end at it.  Links that lie on
    no entry-to-exit path are listed in ``unreachable``.
    """
    if SUPER_NODE in g.nodes:
        raise NetworkError(f"node id {SUPER_NODE!r} is reserved for the super node")
    arcs: dict[str, tuple[str, str]] = {}
    for lid in sorted(g.links):
        l = g.links[lid]
        tail = SUPER_NODE if l.kind == ENTRY else l.from_node
        head = SUPER_NODE if l.kind == EXIT else l.to_node
        if tail is None or head is None:
            raise NetworkError(f"link {lid} has a dangling end; validate the network first")
        arcs[lid] = (tail, head)
    nodes = (SUPER_NODE,) + tuple(sorted(g.nodes))
    lengths = {lid: g.links[lid].length for lid in arcs}
    return FlowGraph(nodes, arcs, lengths, unreachable=_unreachable_arcs(nodes, arcs, SUPER_NODE))


def augment_turn_movements(g: NetworkGraph, movements: Iterable[MovementKey],
                           forbidden: str = "measure") -> FlowGraph:
    """Add an explicit arc for each requested turn movement.

    A link's head is split off to a new node ``"<link>.h"`` when every allowed
    movement leaving it is requested (its flow then conserves over the movement
    arcs); likewise the tail of a destination link moves to ``"<link>.t"``
    when every allowed movement entering it is requested.  Otherwise the
    movement arc attaches to the intersection node itself.  Requested movements
    that are not allowed are added as known zero-flow arcs
    (``forbidden="measure"``) or dropped (``forbidden="delete"``).
    """
    if forbidden not in ("measure", "delete"):
        raise ValueError("forbidden must be 'measure' or 'delete'")
    base = augment_with_super_node(g)
    req = []
    for key in movements:
        key = (str(key[0]), str(key[1]))
        if key not in g.movements:
            raise NetworkError(f"movement {key} not in graph")
        req.append(key)
    req = sorted(set(req))
    if not req:
        return base
    wanted = set(req)
    allowed = {k for k in req if g.movements[k].allowed}

    split_head = {l for l in {k[0] for k in allowed}
                  if set(g.movements_from(l)) <= wanted}
    split_tail = {m for m in {k[1] for k in allowed}
                  if set(g.movements_into(m)) <= wanted}

    arcs = dict(base.arcs)
    new_nodes: list[str] = []
    for l in sorted(split_head):
        t, _ = arcs[l]
        arcs[l] = (t, f"{l}.h")
        new_nodes.append(f"{l}.h")
    for m in sorted(split_tail):
        _, h = arcs[m]
        arcs[m] = (f"{m}.t", h)
        new_nodes.append(f"{m}.t")

    lengths = dict(base.lengths)
    movement_arcs: dict[MovementKey, str] = {}
    zero: set[str] = set()
    for key in req:
        mv = g.movements[key]
        if not mv.allowed and forbidden == "delete":
            continue
        node = g.movement_node(key)
        tail = f"{key[0]}.h" if key[0] in split_head else node
        head = f"{key[1]}.t" if key[1] in split_tail else node
        aid = movement_arc_id(key)
        arcs[aid] = (tail, head)
        lengths[aid] = 0.0
        movement_arcs[key] = aid
        if not mv.allowed:
            zero.add(aid)

    used = {x for ends in arcs.values() for x in ends}
    nodes = tuple(n for n in base.nodes if n in used or n == SUPER_NODE) + tuple(new_nodes)
    return FlowGraph(nodes, arcs, lengths, movement_arcs, frozenset(zero),
                     _unreachable_arcs(nodes, arcs, SUPER_NODE))


def incidence_matrix(fg: FlowGraph) -> tuple[np.ndarray, list[str], list[str]]:
    """Node-arc incidence: +1 where the arc leaves the node, -1 where it enters.

    Returns ``(A, node_order, arc_order)``.  Self-loops give a zero column.
    """
    nodes = list(fg.nodes)
    arcs = list(fg.arcs)
    row = {n: i for i, n in enumerate(nodes)}
    A = np.zeros((len(nodes), len(arcs)))
    for j, a in enumerate(arcs):
        t, h = fg.arcs[a]
        A[row[t], j] += 1.0
        A[row[h], j] -= 1.0
    return A, nodes, arcs


# ---------------------------------------------------------------- commodities

@dataclass(frozen=True)
class SteadyFlows:
    link_flows: dict[str, float]
    movement_flows: dict[MovementKey, float]


def steady_state_flows(g: NetworkGraph, demand: CommodityDemand) -> SteadyFlows:
    """Propagate one commodity's demand through its turn ratios or fixed route."""
    links = sorted(g.links)
    if demand.route is not None:
        flow = sum(demand.entry_flows.values()) if demand.entry_flows else 0.0
        lf = {l: 0.0 for l in links}
        mf: dict[MovementKey, float] = defaultdict(float)
        for l in demand.route:
            lf[l] += flow
        for a, b in zip(demand.route, demand.route[1:]):
            mf[(a, b)] += flow
        return SteadyFlows(lf, dict(mf))

    ratios = demand.turn_ratios or {}
    idx = {l: i for i, l in enumerate(links)}
    n = len(links)
    R = np.zeros((n, n))
    for (a, b), r in ratios.items():
        R[idx[a], idx[b]] += r
    d = np.zeros(n)
    for l, v in demand.entry_flows.items():
        d[idx[l]] += v
    # f = d + R^T f
    f = np.linalg.solve(np.eye(n) - R.T, d)
    lf = {l: float(f[idx[l]]) for l in links}
    mf = {k: r * lf[k[0]] for k, r in ratios.items()}
    return SteadyFlows(lf, mf)


@dataclass(frozen=True)
class AggregateRouting:
    turn_ratios: dict[MovementKey, float]
    link_flows: dict[str, float]
    entry_flows: dict[str, float]
    zero_flow_links: tuple[str, ...]


def aggregate_commodities(demands: Sequence[CommodityDemand], g: NetworkGraph) -> AggregateRouting:
    """Single-commodity turn ratios reproducing the summed commodity flows.

    Links with zero total flow get ratio 0 on every movement and are listed in
    ``zero_flow_links``.
    """
    per = [steady_state_flows(g, d) for d in demands]
    total_link = {l: sum(p.link_flows.get(l, 0.0) for p in per) for l in sorted(g.links)}
    total_mv: dict[MovementKey, float] = defaultdict(float)
    for p in per:
        for k, v in p.movement_flows.items():
            total_mv[k] += v
    ratios: dict[MovementKey, float] = {}
    zero: list[str] = []
    for l in sorted(g.links):
        outs = g.movements_from(l)
        if not outs:
            continue
        if total_link[l] > 0:
            for k in outs:
                ratios[k] = total_mv.get(k, 0.0) / total_link[l]
        else:
            zero.append(l)
            for k in outs:
                ratios[k] = 0.0
    entry: dict[str, float] = defaultdict(float)
    for d in demands:
        for l, v in d.entry_flows.items():
            entry[l] += v
    return AggregateRouting(ratios, total_link, dict(entry), tuple(zero))


# ---------------------------------------------------------------- JSON / CSV

def _mk(a: object, b: object) -> MovementKey:
    return (str(a), str(b))


def _opt_str(x: object) -> str | None:
    return None if x is None else str(x)


def network_from_dict(doc: Mapping) -> NetworkGraph:
    try:
        nodes = {}
        for n in doc.get("nodes", []):
            nodes[str(n["id"])] = Node(str(n["id"]), n.get("cycle_time"), float(n.get("lost_time", 0.0)))
        links = {}
        for l in doc.get("links", []):
            lid = str(l["id"])
            links[lid] = Link(lid, _opt_str(l.get("from")), _opt_str(l.get("to")), float(l["length"]),
                              int(l["storage"]), float(l["travel_time"]), l.get("kind", INTERNAL),
                              int(l.get("lanes", 1)))
        movements = {}
        for m in doc.get("movements", []):
            key = _mk(m["from"], m["to"])
            movements[key] = Movement(key[0], key[1], float(m.get("saturation_flow", 0.0)),
                                      bool(m.get("allowed", True)))
        timing = {}
        for p in doc.get("timing_plans", []):
            stages = []
            for st in p["stages"]:
                stages.append(Stage({_mk(e["from"], e["to"]): float(e["duration"]) for e in st}))
            timing[str(p["node"])] = TimingPlan(str(p["node"]), tuple(stages), float(p.get("offset", 0.0)))
        demands = tuple(demand_from_dict(d, i + 1) for i, d in enumerate(doc.get("demands", [])))
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed network document: {exc!r}") from exc
    return NetworkGraph(nodes, links, movements, timing, demands)


def demand_from_dict(d: Mapping, default_index: int = 1) -> CommodityDemand:
    ratios = None
    if d.get("turn_ratios") is not None:
        ratios = {_mk(e["from"], e["to"]): float(e["ratio"]) for e in d["turn_ratios"]}
    route = tuple(str(x) for x in d["route"]) if d.get("route") is not None else None
    return CommodityDemand(int(d.get("commodity", default_index)),
                           {str(k): float(v) for k, v in d.get("entry_flows", {}).items()},
                           ratios, route)


def demand_to_dict(d: CommodityDemand) -> dict:
    out: dict = {"commodity": d.index, "entry_flows": dict(d.entry_flows)}
    if d.turn_ratios is not None:
        out["turn_ratios"] = [{"from": a, "to": b, "ratio": r} for (a, b), r in sorted(d.turn_ratios.items())]
    if d.route is not None:
        out["route"] = list(d.route)
    return out


def network_to_dict(g: NetworkGraph) -> dict:
    return {
        "nodes": [{"id": n.id, "cycle_time": n.cycle_time, "lost_time": n.lost_time}
                  for n in (g.nodes[k] for k in sorted(g.nodes))],
        "links": [{"id": l.id, "from": l.from_node, "to": l.to_node, "length": l.length,
                   "storage": l.storage_capacity, "travel_time": l.travel_time, "kind": l.kind,
                   "lanes": l.lanes} for l in (g.links[k] for k in sorted(g.links))],
        "movements": [{"from": m.from_link, "to": m.to_link, "saturation_flow": m.saturation_flow,
                       "allowed": m.allowed} for m in (g.movements[k] for k in sorted(g.movements))],
        "timing_plans": [{"node": p.node_id, "offset": p.offset,
                          "stages": [[{"from": a, "to": b, "duration": dur}
                                      for (a, b), dur in sorted(st.durations.items())]
                                     for st in p.stages]}
                         for p in (g.timing[k] for k in sorted(g.timing))],
        "demands": [demand_to_dict(d) for d in g.demands],
    }


def load_network(path: str | Path) -> NetworkGraph:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return network_from_dict(doc)


def save_network(g: NetworkGraph, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(g), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_links_csv(g: NetworkGraph, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "kind", "from_node", "to_node", "length", "storage", "travel_time", "lanes"])
        for k in sorted(g.links):
            l = g.links[k]
            w.writerow([l.id, l.kind, l.from_node or "", l.to_node or "", l.length,
                        l.storage_capacity, l.travel_time, l.lanes])


def write_movements_csv(g: NetworkGraph, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from_link", "to_link", "node", "saturation_flow", "allowed", "capacity"])
        for k in sorted(g.movements):
            m = g.movements[k]
            try:
                cap = capacity(g, k)
            except NetworkError:
                cap = ""
            w.writerow([m.from_link, m.to_link, g.links[m.from_link].to_node or "",
                        m.saturation_flow, int(m.allowed), cap])

"""Which flows the sensor layout pins down, and bounds on the rest.

All functions take a :class:`~pointq.network.FlowGraph` closed through the
super node.  A flow is identified when its arc lies on no undirected cycle of
unknown arcs; values come from cutset sums of known flows.  Known turn ratios
extend the known set (``f(l,m) = r f_l`` in either direction) and the two
rules are iterated to a fixed point.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .lpsolve import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, solve_lp
from .network import FlowGraph, MovementKey, incidence_matrix

MEASURED, IDENTIFIED, UNDETERMINED = "measured", "identified", "undetermined"
CONSISTENCY_RTOL = 1e-6


class IdentifyError(ValueError):
    pass


class InconsistentMeasurements(IdentifyError):
    def __init__(self, nodes: Iterable[str], residual: float):
        self.nodes = sorted(nodes)
        self.residual = residual
        super().__init__(f"cutset around nodes {self.nodes} does not conserve flow "
                         f"(residual {residual:.6g} vph)")


@dataclass
class VMTBounds:
    measured: float
    upper: float            # VMT^u_+ (inf when unbounded)
    lower: float            # VMT^u_-
    unbounded: bool = False

    @property
    def estimate(self) -> float:
        return self.measured + 0.5 * (self.upper + self.lower)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)


@dataclass
class IdentifiabilityReport:
    status: dict[str, str]
    undetermined_nodes: list[str]
    undetermined_links: list[str]
    components: list[tuple[list[str], list[str]]]     # (nodes, arcs) per undetermined component
    required_additional_count: int
    suggested_measurements: list[str] = field(default_factory=list)
    flows: dict[str, float] = field(default_factory=dict)
    flow_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    vmt: VMTBounds | None = None

    def count(self, status: str) -> int:
        return sum(1 for s in self.status.values() if s == status)

    def links_with(self, status: str) -> list[str]:
        return sorted(a for a, s in self.status.items() if s == status)


# ---------------------------------------------------------------- graph helpers

def _require_strong(fg: FlowGraph) -> None:
    if not fg.strongly_connected:
        raise IdentifyError("graph is not strongly connected"
                            + (f"; arcs on no entry-exit path: {list(fg.unreachable)}" if fg.unreachable else ""))


def cycle_arcs(fg: FlowGraph, arcs: Iterable[str]) -> set[str]:
    """Arcs of ``arcs`` lying on an undirected cycle within ``arcs`` (non-bridges)."""
    arcs = list(arcs)
    adj: dict[str, list[tuple[str, str]]] = defaultdict(list)
    on_cycle: set[str] = set()
    for a in arcs:
        t, h = fg.arcs[a]
        if t == h:
            on_cycle.add(a)
            continue
        adj[t].append((h, a))
        adj[h].append((t, a))
    disc: dict[str, int] = {}
    low: dict[str, int] = {}
    bridges: set[str] = set()
    counter = 0
    for root in sorted(adj):
        if root in disc:
            continue
        disc[root] = low[root] = counter
        counter += 1
        stack = [(root, None, iter(adj[root]))]
        while stack:
            u, via, it = stack[-1]
            advanced = False
            for v, a in it:
                if a == via:
                    continue
                if v in disc:
                    low[u] = min(low[u], disc[v])
                else:
                    disc[v] = low[v] = counter
                    counter += 1
                    stack.append((v, a, iter(adj[v])))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[u])
                    if low[u] > disc[p]:
                        bridges.add(via)
    on_cycle |= {a for a in arcs if a not in bridges}
    return on_cycle


def _components(fg: FlowGraph, arcs: Iterable[str], nodes: Iterable[str]) -> list[tuple[list[str], list[str]]]:
    parent: dict[str, str] = {n: n for n in nodes}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    arcs = list(arcs)
    for a in arcs:
        t, h = fg.arcs[a]
        parent.setdefault(t, t)
        parent.setdefault(h, h)
        rt, rh = find(t), find(h)
        if rt != rh:
            parent[max(rt, rh)] = min(rt, rh)
    groups_n: dict[str, list[str]] = defaultdict(list)
    groups_a: dict[str, list[str]] = defaultdict(list)
    for n in parent:
        groups_n[find(n)].append(n)
    for a in arcs:
        groups_a[find(fg.arcs[a][0])].append(a)
    return [(sorted(groups_n[r]), sorted(groups_a[r])) for r in sorted(groups_n)]


def _ratio_table(fg: FlowGraph, ratios: Mapping[MovementKey, float] | None) -> list[tuple[str, str, float]]:
    """(link arc, movement arc, ratio) triples, validated."""
    if not ratios:
        return []
    per_link: dict[str, list[float]] = defaultdict(list)
    out = []
    for key, r in sorted(ratios.items()):
        key = (str(key[0]), str(key[1]))
        if key not in fg.movement_arcs:
            raise IdentifyError(f"turn ratio on {key[0]}>{key[1]} needs that movement added as an arc")
        if key[0] not in fg.arcs:
            raise IdentifyError(f"unknown link {key[0]}")
        if not 0.0 <= r <= 1.0:
            raise IdentifyError(f"turn ratio {key} = {r} outside [0,1]")
        per_link[key[0]].append(r)
        out.append((key[0], fg.movement_arcs[key], float(r)))
    covered = defaultdict(int)
    for (a, _b) in fg.movement_arcs:
        covered[a] += 1
    for l, rs in per_link.items():
        if len(rs) == covered[l] and abs(sum(rs) - 1.0) > 1e-6:
            raise IdentifyError(f"turn ratios on link {l} sum to {sum(rs):.6g}, not 1")
        if sum(rs) > 1.0 + 1e-6:
            raise IdentifyError(f"turn ratios on link {l} sum to {sum(rs):.6g} > 1")
    return out


# ---------------------------------------------------------------- identification

def _closure(fg: FlowGraph, known: set[str], ratio_rules: list[tuple[str, str, float]]) -> set[str]:
    known = set(known)
    while True:
        unknown = [a for a in fg.arcs if a not in known]
        cyc = cycle_arcs(fg, unknown)
        new = {a for a in unknown if a not in cyc}
        for link, marc, r in ratio_rules:
            if link in known | new and marc not in known:
                new.add(marc)
            if marc in known | new and link not in known and r > 0:
                new.add(link)
        if not new - known:
            return known
        known |= new


def identifiable_links(fg: FlowGraph, measured: Iterable[str],
                       ratios: Mapping[MovementKey, float] | None = None) -> IdentifiabilityReport:
    """Classify every arc as measured, identified or undetermined."""
    _require_strong(fg)
    measured = {str(a) for a in measured} | set(fg.zero_arcs)
    for a in measured:
        if a not in fg.arcs:
            raise IdentifyError(f"measured link {a} not in graph")
    rules = _ratio_table(fg, ratios)
    known = _closure(fg, measured, rules)
    status = {a: (MEASURED if a in measured else IDENTIFIED if a in known else UNDETERMINED)
              for a in fg.arcs}
    und = sorted(a for a, s in status.items() if s == UNDETERMINED)
    und_nodes = sorted({x for a in und for x in fg.arcs[a]})
    comps = _components(fg, und, und_nodes)
    need = sum(len(arcs) - (len(nodes) - 1) for nodes, arcs in comps)
    rep = IdentifiabilityReport(status, und_nodes, und, comps, need)
    rep.suggested_measurements = minimal_additional_measurements(rep, fg)
    return rep


def minimal_additional_measurements(report: IdentifiabilityReport, fg: FlowGraph) -> list[str]:
    """Non-tree arcs of a BFS spanning forest of the undetermined subgraph.

    Each component's tree grows from the super node when present, otherwise
    from its smallest node id; arcs are scanned in sorted id order.
    """
    out: list[str] = []
    for nodes, arcs in report.components:
        if not arcs:
            continue
        adj: dict[str, list[tuple[str, str]]] = defaultdict(list)
        for a in sorted(arcs):
            t, h = fg.arcs[a]
            adj[t].append((a, h))
            if h != t:
                adj[h].append((a, t))
        root = fg.super_node if fg.super_node in nodes else nodes[0]
        seen = {root}
        tree: set[str] = set()
        todo = deque([root])
        while todo:
            u = todo.popleft()
            for a, v in sorted(adj[u]):
                if v not in seen:
                    seen.add(v)
                    tree.add(a)
                    todo.append(v)
        out.extend(a for a in sorted(arcs) if a not in tree)
    return sorted(out)


def _check_consistency(fg: FlowGraph, values: Mapping[str, float], unknown: Iterable[str]) -> None:
    for nodes, _arcs in _components(fg, unknown, fg.nodes):
        inside = set(nodes)
        net = 0.0
        mag = 0.0
        touched = False
        for a, (t, h) in fg.arcs.items():
            if (t in inside) == (h in inside):
                continue
            touched = True
            v = values[a]
            net += v if h in inside else -v
            mag += abs(v)
        if touched and abs(net) > CONSISTENCY_RTOL * max(1.0, mag):
            raise InconsistentMeasurements(nodes, net)


def _cutset_value(fg: FlowGraph, arc: str, unknown: set[str], values: Mapping[str, float]) -> float:
    """Flow on a bridge of the unknown subgraph from the cutset around its tail side."""
    t, h = fg.arcs[arc]
    adj: dict[str, list[str]] = defaultdict(list)
    for a in unknown:
        if a == arc:
            continue
        x, y = fg.arcs[a]
        adj[x].append(y)
        adj[y].append(x)
    side = {t}
    todo = [t]
    while todo:
        u = todo.pop()
        for v in adj[u]:
            if v not in side:
                side.add(v)
                todo.append(v)
    if h in side:
        raise IdentifyError(f"arc {arc} is on an unknown cycle")
    total = 0.0
    for a, (x, y) in fg.arcs.items():
        if a == arc or (x in side) == (y in side):
            continue
        v = values[a]
        total += v if y in side else -v
    return total


def impute_flows(fg: FlowGraph, measured_flows: Mapping[str, float],
                 ratios: Mapping[MovementKey, float] | None = None) -> dict[str, float]:
    """Values of all identified arcs (measured values are passed through)."""
    _require_strong(fg)
    values = {str(a): float(v) for a, v in measured_flows.items()}
    for a in fg.zero_arcs:
        values.setdefault(a, 0.0)
    for a in values:
        if a not in fg.arcs:
            raise IdentifyError(f"measured link {a} not in graph")
    rules = _ratio_table(fg, ratios)
    while True:
        unknown = {a for a in fg.arcs if a not in values}
        _check_consistency(fg, values, unknown)
        cyc = cycle_arcs(fg, unknown)
        new: dict[str, float] = {}
        for a in sorted(unknown - cyc):
            new[a] = _cutset_value(fg, a, unknown, values)
        values.update(new)
        changed = bool(new)
        for link, marc, r in rules:
            if link in values and marc not in values:
                values[marc] = r * values[link]
                changed = True
            elif marc in values and link not in values and r > 0:
                values[link] = values[marc] / r
                changed = True
        if not changed:
            return values


def propagate_turn_ratios(fg: FlowGraph, measured_flows: Mapping[str, float],
                          ratios: Mapping[MovementKey, float]) -> tuple[IdentifiabilityReport, dict[str, float]]:
    """Identification with known turn ratios, iterated with the cycle test."""
    rep = identifiable_links(fg, measured_flows.keys(), ratios)
    vals = impute_flows(fg, measured_flows, ratios)
    rep.flows = {a: v for a, v in vals.items() if rep.status[a] != UNDETERMINED}
    return rep, rep.flows


# ---------------------------------------------------------------- bounds

def directed_cycle_arcs(fg: FlowGraph, arcs: Iterable[str]) -> set[str]:
    """Arcs lying on a directed cycle of the subgraph (inside a nontrivial SCC)."""
    arcs = list(arcs)
    adj: dict[str, list[str]] = defaultdict(list)
    radj: dict[str, list[str]] = defaultdict(list)
    nodes: set[str] = set()
    for a in arcs:
        t, h = fg.arcs[a]
        adj[t].append(h)
        radj[h].append(t)
        nodes |= {t, h}
    # Kosaraju
    order: list[str] = []
    seen: set[str] = set()
    for s in sorted(nodes):
        if s in seen:
            continue
        seen.add(s)
        stack = [(s, iter(adj[s]))]
        while stack:
            u, it = stack[-1]
            for v in it:
                if v not in seen:
                    seen.add(v)
                    stack.append((v, iter(adj[v])))
                    break
            else:
                stack.pop()
                order.append(u)
    comp: dict[str, int] = {}
    for s in reversed(order):
        if s in comp:
            continue
        cid = len(set(comp.values()))
        comp[s] = cid
        todo = [s]
        while todo:
            u = todo.pop()
            for v in radj[u]:
                if v not in comp:
                    comp[v] = cid
                    todo.append(v)
    return {a for a in arcs if comp[fg.arcs[a][0]] == comp[fg.arcs[a][1]]}


def flow_bounds(fg: FlowGraph, measured_flows: Mapping[str, float],
                ratios: Mapping[MovementKey, float] | None = None) -> dict[str, tuple[float, float]]:
    """Bounds on undetermined arcs.

    Arcs on a directed cycle of undetermined arcs are unbounded above.  On the
    acyclic part, nodes are visited in topological order and each newly
    reached outgoing arc is bounded by the absolute algebraic sum of the known
    flows at the node plus the bounds already assigned there.  Arcs sharing a
    weak component with a directed cycle are bounded by linear programming
    instead, since the induction needs an acyclic component.
    """
    rep = identifiable_links(fg, measured_flows.keys(), ratios)
    vals = impute_flows(fg, measured_flows, ratios)
    und = rep.undetermined_links
    if not und:
        return {}
    cyc = directed_cycle_arcs(fg, und)
    bounds: dict[str, tuple[float, float]] = {a: (0.0, math.inf) for a in cyc}
    for nodes, arcs in _components(fg, und, rep.undetermined_nodes):
        if not arcs:
            continue
        if any(a in cyc for a in arcs):
            for a in arcs:
                if a not in cyc:
                    bounds[a] = _lp_bound(fg, vals, und, a)
            continue
        comp_nodes = set(nodes)
        indeg = {n: 0 for n in comp_nodes}
        out_arcs: dict[str, list[str]] = defaultdict(list)
        for a in arcs:
            t, h = fg.arcs[a]
            indeg[h] += 1
            out_arcs[t].append(a)
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for a in sorted(out_arcs[n]):
                h = fg.arcs[a][1]
                indeg[h] -= 1
                if indeg[h] == 0:
                    ready.append(h)
                    ready.sort()
        done: set[str] = set()
        for n in order:
            known_sum = 0.0
            prior = 0.0
            fresh: list[str] = []
            for a in fg.incident(n):
                t, h = fg.arcs[a]
                sign = 1.0 if h == n else -1.0
                if t == h:
                    continue
                if a in vals:
                    known_sum += sign * vals[a]
                elif a in done:
                    prior += bounds[a][1]
                else:
                    fresh.append(a)
            hi = abs(known_sum) + prior
            for a in fresh:
                bounds[a] = (0.0, hi)
                done.add(a)
    return bounds


def _lp_bound(fg: FlowGraph, vals: Mapping[str, float], und: list[str], arc: str) -> tuple[float, float]:
    A, nodes, arcs = incidence_matrix(fg)
    col = {a: j for j, a in enumerate(arcs)}
    ui = [col[a] for a in und]
    ki = [col[a] for a in arcs if a in vals]
    b = -A[:, ki] @ np.array([vals[arcs[j]] for j in ki]) if ki else np.zeros(len(nodes))
    c = np.zeros(len(ui))
    c[und.index(arc)] = 1.0
    Au = A[:, ui]
    lo = solve_lp(LinearProgram(c, Au, b, sense="min"))
    hi = solve_lp(LinearProgram(c, Au, b, sense="max"))
    return (lo.value if lo.status == OPTIMAL else 0.0,
            hi.value if hi.status == OPTIMAL else math.inf)


def vmt_bounds(fg: FlowGraph, measured_flows: Mapping[str, float],
               lengths: Mapping[str, float] | None = None) -> VMTBounds:
    """Measured VMT plus max/min VMT on unmeasured arcs over conserving flows."""
    _require_strong(fg)
    lengths = dict(fg.lengths) if lengths is None else {**fg.lengths, **lengths}
    known = {str(a): float(v) for a, v in measured_flows.items()}
    for a in fg.zero_arcs:
        known.setdefault(a, 0.0)
    A, nodes, arcs = incidence_matrix(fg)
    mi = [j for j, a in enumerate(arcs) if a in known]
    ui = [j for j, a in enumerate(arcs) if a not in known]
    vmt_m = math.fsum(lengths.get(arcs[j], 0.0) * known[arcs[j]] for j in mi)
    if not ui:
        return VMTBounds(vmt_m, 0.0, 0.0)
    fm = np.array([known[arcs[j]] for j in mi])
    b = -A[:, mi] @ fm if mi else np.zeros(len(nodes))
    d = np.array([lengths.get(arcs[j], 0.0) for j in ui])
    Au = A[:, ui]
    up = solve_lp(LinearProgram(d, Au, b, sense="max"))
    if up.status == INFEASIBLE:
        raise InconsistentMeasurements([], up.infeasibility)
    lo = solve_lp(LinearProgram(d, Au, b, sense="min"))
    if lo.status == INFEASIBLE:
        raise InconsistentMeasurements([], lo.infeasibility)
    if up.status == UNBOUNDED:
        return VMTBounds(vmt_m, math.inf, lo.value, unbounded=True)
    return VMTBounds(vmt_m, up.value, lo.value)


# ---------------------------------------------------------------- analysis / export

def analyze(fg: FlowGraph, measured_flows: Mapping[str, float],
            ratios: Mapping[MovementKey, float] | None = None) -> IdentifiabilityReport:
    """Full report: status, imputed flows, suggestions, bounds and VMT."""
    rep = identifiable_links(fg, measured_flows.keys(), ratios)
    vals = impute_flows(fg, measured_flows, ratios)
    rep.flows = {a: v for a, v in vals.items() if rep.status[a] != UNDETERMINED}
    rep.flow_bounds = flow_bounds(fg, measured_flows, ratios)
    rep.vmt = vmt_bounds(fg, rep.flows)
    return rep


COLORS = {MEASURED: "red", IDENTIFIED: "green", UNDETERMINED: "black"}


def write_report(rep: IdentifiabilityReport, fg: FlowGraph, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p_status = out / "identify_status.csv"
    with open(p_status, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link", "status", "flow", "lo", "hi"])
        for a in sorted(rep.status):
            flow = f"{rep.flows[a]:.6f}" if a in rep.flows else ""
            lo, hi = rep.flow_bounds.get(a, ("", ""))
            w.writerow([a, rep.status[a], flow,
                        "" if lo == "" else f"{lo:.6f}",
                        "" if hi == "" else ("inf" if math.isinf(hi) else f"{hi:.6f}")])
    suggested = set(rep.suggested_measurements)
    p_color = out / "identify_colors.csv"
    with open(p_color, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link", "tail", "head", "status", "color", "suggested"])
        for a in sorted(rep.status):
            t, h = fg.arcs[a]
            color = "blue" if a in suggested else COLORS[rep.status[a]]
            w.writerow([a, t, h, rep.status[a], color, int(a in suggested)])
    return [p_status, p_color]

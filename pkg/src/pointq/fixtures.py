"""Small reference networks used by the tests, the CLI examples and the docs."""

from __future__ import annotations

from .network import (ENTRY, EXIT, INTERNAL, CommodityDemand, Link, Movement, NetworkGraph, Node,
                      Stage, TimingPlan)

SAT = 1800.0


def _net(nodes, links, movements, timing=None, demands=()):
    return NetworkGraph({n.id: n for n in nodes}, {l.id: l for l in links},
                        {m.key: m for m in movements}, timing or {}, tuple(demands))


def chain(demand: float = 600.0) -> NetworkGraph:
    """Entry ``in`` -> node A -> ``mid`` -> node B -> exit ``out``; unsignalized."""
    nodes = [Node("A"), Node("B")]
    links = [Link("in", None, "A", 0.25, 20, 20.0, ENTRY),
             Link("mid", "A", "B", 0.5, 40, 40.0, INTERNAL),
             Link("out", "B", None, 0.25, 20, 20.0, EXIT)]
    mvs = [Movement("in", "mid", SAT), Movement("mid", "out", SAT)]
    dem = CommodityDemand(1, {"in": demand}, {("in", "mid"): 1.0, ("mid", "out"): 1.0})
    return _net(nodes, links, mvs, demands=[dem])


def pair(demand: float = 360.0) -> NetworkGraph:
    """One entry link feeding one exit link through a single always-green node."""
    nodes = [Node("A")]
    links = [Link("in", None, "A", 0.5, 50, 30.0, ENTRY),
             Link("out", "A", None, 0.5, 50, 45.0, EXIT)]
    mvs = [Movement("in", "out", SAT)]
    dem = CommodityDemand(1, {"in": demand}, {("in", "out"): 1.0})
    return _net(nodes, links, mvs, demands=[dem])


SENSOR_NET_MEASURED = ("b", "e", "f", "g")


def sensor_net() -> NetworkGraph:
    """Ten links, two entries (c, i) and two exits (e, f).

    With b, e, f, g measured the remaining six links form a spanning tree of
    the graph closed through the super node, so every flow is identified.
    """
    nodes = [Node(str(k)) for k in range(1, 7)]
    L = lambda lid, a, b, kind=INTERNAL: Link(lid, a, b, 0.5, 30, 30.0, kind)
    links = [L("c", None, "1", ENTRY), L("i", None, "4", ENTRY),
             L("f", "2", None, EXIT), L("e", "5", None, EXIT),
             L("a", "1", "2"), L("b", "1", "3"), L("d", "3", "2"),
             L("j", "4", "5"), L("g", "4", "6"), L("h", "6", "5")]
    mvs = [Movement(*k, SAT) for k in [("c", "a"), ("c", "b"), ("b", "d"), ("a", "f"), ("d", "f"),
                                       ("i", "j"), ("i", "g"), ("g", "h"), ("j", "e"), ("h", "e")]]
    return _net(nodes, links, mvs)


def sensor_net_flows() -> dict[str, float]:
    """A conserving flow on :func:`sensor_net` (vph)."""
    return {"c": 900.0, "a": 600.0, "b": 300.0, "d": 300.0, "f": 900.0,
            "i": 700.0, "j": 450.0, "g": 250.0, "h": 250.0, "e": 700.0}


def four_approach() -> NetworkGraph:
    """One node with four approaches; link ``a`` can reach b, c, d, and a forbidden U-turn to e."""
    nodes = [Node("N")]
    links = [Link(x, None, "N", 0.3, 20, 20.0, ENTRY) for x in ("a", "w", "x", "y")]
    links += [Link(x, "N", None, 0.3, 20, 20.0, EXIT) for x in ("b", "c", "d", "e")]
    mvs = [Movement("a", "b", SAT), Movement("a", "c", SAT), Movement("a", "d", SAT),
           Movement("a", "e", SAT, allowed=False)]
    for src, dst in (("w", "c"), ("w", "e"), ("x", "d"), ("x", "b"), ("y", "e"), ("y", "b")):
        mvs.append(Movement(src, dst, SAT))
    return _net(nodes, links, mvs)


FOUR_APPROACH_MOVEMENTS = (("a", "b"), ("a", "c"), ("a", "d"), ("a", "e"))


def two_approach() -> NetworkGraph:
    """Two approaches a, d splitting between exits f and e."""
    nodes = [Node("N")]
    links = [Link("a", None, "N", 0.3, 20, 20.0, ENTRY), Link("d", None, "N", 0.3, 20, 20.0, ENTRY),
             Link("f", "N", None, 0.3, 20, 20.0, EXIT), Link("e", "N", None, 0.3, 20, 20.0, EXIT)]
    mvs = [Movement(*k, SAT) for k in [("a", "f"), ("a", "e"), ("d", "f"), ("d", "e")]]
    return _net(nodes, links, mvs)


TWO_APPROACH_MOVEMENTS = (("a", "f"), ("a", "e"), ("d", "f"), ("d", "e"))


GRID_CYCLE = 60.0
GRID_LOST = 4.0


def grid(demand: float = 400.0, storage: int = 40, ew_green: float = 28.0,
         ns_green: float = 28.0, through: float = 0.7, entry_storage: int | None = None,
         demands: dict[str, float] | None = None,
         greens: dict[str, tuple[float, float]] | None = None) -> NetworkGraph:
    """2x2 signalized grid.

    Eastbound rows W1 -> 1 -> 2 and W3 -> 3 -> 4, southbound columns
    N1 -> 1 -> 3 and N2 -> 2 -> 4.  At every node the eastbound approach
    goes through or turns south, the southbound approach goes through or
    turns east.  Two stages per node (eastbound, southbound); cycle 60 s with
    4 s lost time; ``greens`` overrides (eastbound, southbound) per node.  With a 2 s discharge headway, greens that are whole
    multiples of 2 s make the discrete service rate equal the capacity.
    """
    ids = ["1", "2", "3", "4"]
    nodes = [Node(n, GRID_CYCLE, GRID_LOST) for n in ids]
    es = storage if entry_storage is None else entry_storage

    def link(lid, a, b, kind, ln=0.25, tt=30.0, st=storage):
        return Link(lid, a, b, ln, st, tt, kind)

    links = [link("W1", None, "1", ENTRY, st=es), link("W3", None, "3", ENTRY, st=es),
             link("N1", None, "1", ENTRY, st=es), link("N2", None, "2", ENTRY, st=es),
             link("E12", "1", "2", INTERNAL), link("E34", "3", "4", INTERNAL),
             link("S13", "1", "3", INTERNAL), link("S24", "2", "4", INTERNAL),
             link("X2", "2", None, EXIT), link("X4E", "4", None, EXIT),
             link("X3", "3", None, EXIT), link("X4S", "4", None, EXIT)]
    # (eastbound in, southbound in, eastbound out, southbound out) per node
    layout = {"1": ("W1", "N1", "E12", "S13"), "2": ("E12", "N2", "X2", "S24"),
              "3": ("W3", "S13", "E34", "X3"), "4": ("E34", "S24", "X4E", "X4S")}
    mvs = []
    timing = {}
    ratios = {}
    for n, (ein, sin, eout, sout) in layout.items():
        mvs += [Movement(ein, eout, SAT), Movement(ein, sout, SAT),
                Movement(sin, sout, SAT), Movement(sin, eout, SAT)]
        ew, ns = (greens or {}).get(n, (ew_green, ns_green))
        timing[n] = TimingPlan(n, (Stage({(ein, eout): ew, (ein, sout): ew}),
                                   Stage({(sin, sout): ns, (sin, eout): ns})))
        ratios[(ein, eout)] = through
        ratios[(ein, sout)] = 1.0 - through
        ratios[(sin, sout)] = through
        ratios[(sin, eout)] = 1.0 - through
    flows = demands or {e: demand for e in ("W1", "W3", "N1", "N2")}
    dem = CommodityDemand(1, dict(flows), ratios)
    return _net(nodes, links, mvs, timing, [dem])

"""Point-queue discrete-event simulator.

Vehicles arrive at entry links, travel each link in ``travel_time`` seconds,
wait in a FIFO queue per movement and cross when their phase is green, the
movement's discharge headway ``3600/c`` has elapsed and the receiving link has
room.  Every state change is written to an :class:`EventLog`.

Simultaneous events run in a fixed order: phase changes, network exits,
crossings, queue joins, link entries, external arrivals; then by vehicle id.
"""

from __future__ import annotations

import csv
import gzip
import heapq
import json
import math
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

from .network import (ENTRY, EXIT, CommodityDemand, MovementKey, NetworkError, NetworkGraph, capacity,
                      load_network, validate_network)

EXTERNAL_ARRIVAL = "external_arrival"
ENTER_LINK = "enter_link"
JOIN_QUEUE = "join_queue"
CROSS = "cross_intersection"
EXIT_NETWORK = "exit_network"
PHASE_CHANGE = "phase_change"
BLOCKED = "blocked"
EVENT_KINDS = (EXTERNAL_ARRIVAL, ENTER_LINK, JOIN_QUEUE, CROSS, EXIT_NETWORK, PHASE_CHANGE, BLOCKED)
CSV_HEADER = ("time", "kind", "vehicle", "link_from", "link_to", "node")

# heap priorities (internal kinds share a slot with the logged kind they produce)
_P_SIGNAL, _P_EXIT, _P_SERVE, _P_JOIN, _P_ENTER, _P_ARRIVE = range(6)


class SimError(ValueError):
    pass


class Event(NamedTuple):
    time: float
    kind: str
    vehicle: str = ""
    link_from: str = ""
    link_to: str = ""
    node: str = ""


@dataclass
class EventLog:
    """Time-ordered simulation record.

    ``segments`` holds ``(label, start, end)`` for each run segment (one per
    loading step in a sweep).  For ``phase_change`` rows the vehicle column
    carries ``1`` when the movement turns green and ``0`` when it turns red.
    """
    events: list[Event] = field(default_factory=list)
    segments: list[tuple[str, float, float]] = field(default_factory=list)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def horizon(self) -> float:
        return max((s[2] for s in self.segments), default=0.0)

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "wt", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for e in self.events:
                w.writerow((f"{e.time:.6f}", e.kind, e.vehicle, e.link_from, e.link_to, e.node))


def read_events(path: str | Path) -> Iterator[Event]:
    """Stream events from a CSV log (plain or ``.gz``)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise SimError(f"{path}: not an event log (header {header})")
        for lineno, row in enumerate(rd, start=2):
            if len(row) != 6:
                raise SimError(f"{path}: line {lineno}: expected 6 fields, got {len(row)}")
            yield Event(float(row[0]), row[1], row[2], row[3], row[4], row[5])


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class ControllerConfig:
    mode: str = "fixed_time"            # or "max_pressure"
    decisions_per_cycle: int = 4

    def __post_init__(self):
        if self.mode not in ("fixed_time", "max_pressure"):
            raise SimError(f"unknown controller mode {self.mode!r}")
        if self.mode == "max_pressure" and (not isinstance(self.decisions_per_cycle, int)
                                            or self.decisions_per_cycle < 1):
            raise SimError("decisions_per_cycle must be a positive integer")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "ControllerConfig":
        if not d:
            return cls()
        try:
            return cls(str(d.get("mode", "fixed_time")), int(d.get("decisions_per_cycle", 4)))
        except (TypeError, ValueError) as exc:
            raise SimError(f"malformed controller config: {exc}") from exc


@dataclass(frozen=True)
class SimOptions:
    arrivals: str = "deterministic"     # or "poisson"
    travel: str = "constant"            # or "exponential"
    drain: bool = False                 # keep running without new arrivals until empty

    def __post_init__(self):
        if self.arrivals not in ("deterministic", "poisson"):
            raise SimError(f"unknown arrival process {self.arrivals!r}")
        if self.travel not in ("constant", "exponential"):
            raise SimError(f"unknown travel time mode {self.travel!r}")


# ---------------------------------------------------------------- stability

@dataclass(frozen=True)
class Margin:
    ok: bool
    margin: float
    capacity: float
    flow: float


def stability_check(g: NetworkGraph, movement_flows: Mapping[MovementKey, float]) -> dict[MovementKey, Margin]:
    """Capacity margin ``s - f`` for every allowed movement; ok iff strictly positive."""
    out = {}
    for key in g.allowed_movements():
        s = capacity(g, key)
        f = float(movement_flows.get(key, 0.0))
        out[key] = Margin(s - f > 0, s - f, s, f)
    return out


# ---------------------------------------------------------------- simulator

@dataclass
class _Vehicle:
    id: str
    commodity: CommodityDemand
    rng: random.Random
    link: str = ""
    route_pos: int = 0
    movement: MovementKey | None = None


@dataclass
class _MovementState:
    key: MovementKey
    node: str
    headway: float
    queue: deque = field(default_factory=deque)
    green: bool = False
    last_cross: float = -math.inf
    pending: float | None = None        # time of a scheduled service attempt
    blocked: bool = False


class Simulator:
    """Stateful simulator; :func:`run` and :func:`loading_sweep` drive it."""

    def __init__(self, g: NetworkGraph, controller: ControllerConfig, seed: int = 0,
                 options: SimOptions | None = None):
        rep = validate_network(g)
        if not rep.ok:
            raise SimError(f"invalid network: {rep}")
        self.g = g
        self.ctl = controller
        self.seed = seed
        self.opt = options or SimOptions()
        self.log = EventLog()
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.occupancy = {l: 0 for l in g.links}
        self.outside: dict[str, deque] = {l: deque() for l in g.links_of_kind(ENTRY)}
        self.waiters: dict[str, set[MovementKey]] = defaultdict(set)
        self.mv = {}
        for key in g.allowed_movements():
            c = g.movements[key].saturation_flow
            self.mv[key] = _MovementState(key, g.movement_node(key), 3600.0 / c)
        self.node_mvs: dict[str, list[MovementKey]] = defaultdict(list)
        for key, st in self.mv.items():
            self.node_mvs[st.node].append(key)
        self._counter: dict[tuple[str, int], int] = defaultdict(int)
        self._tagged = False        # commodity index goes into vehicle ids once several are simulated
        self._arrival_rng: dict[tuple[str, int], random.Random] = {}
        self._stream_epoch = 0
        self.inside = 0
        self._ratios = self._pressure_ratios()
        self._controlled = [n for n in sorted(g.nodes)
                            if g.nodes[n].signalized and n in g.timing]
        for key, st in self.mv.items():
            if st.node not in self._controlled:
                st.green = True
        self._signals_started = False

    # -- queue plumbing
    def _push(self, t: float, prio: int, tie: str, fn, *args) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, prio, tie, self._seq, fn, args))

    def _emit(self, kind: str, vehicle: str = "", lf: str = "", lt: str = "", node: str = "") -> None:
        self.log.events.append(Event(self.now, kind, vehicle, lf, lt, node))

    # -- signals
    def _start_signals(self, t0: float) -> None:
        self._signals_started = True
        for n in self._controlled:
            T = self.g.nodes[n].cycle_time
            plan = self.g.timing[n]
            if self.ctl.mode == "fixed_time":
                k = math.floor((t0 - plan.offset) / T)
                self._push(plan.offset + k * T, _P_SIGNAL, n, self._ft_cycle, n, plan.offset + k * T)
            else:
                self._push(t0, _P_SIGNAL, n, self._mp_epoch, n)

    def _set_green(self, node: str, green: set[MovementKey]) -> None:
        for key in sorted(self.node_mvs[node]):
            st = self.mv[key]
            on = key in green
            if on != st.green:
                st.green = on
                self._emit(PHASE_CHANGE, "1" if on else "0", key[0], key[1], node)
                if on:
                    self._try_serve(key)

    def _ft_intervals(self, node: str) -> list[tuple[float, frozenset]]:
        """Piecewise-constant green sets over one cycle as (start offset, set)."""
        plan = self.g.timing[node]
        T = self.g.nodes[node].cycle_time
        cuts = {0.0, T}
        s = 0.0
        spans = []
        for st in plan.stages:
            for key, dur in st.durations.items():
                if dur > 0 and key in self.mv:
                    spans.append((s, s + dur, key))
                    cuts.add(min(s + dur, T))
            cuts.add(min(s, T))
            s += st.length
        cuts = sorted(c for c in cuts if c <= T)
        out = []
        for a, b in zip(cuts, cuts[1:]):
            mid = 0.5 * (a + b)
            out.append((a, frozenset(k for lo, hi, k in spans if lo <= mid < hi)))
        return out

    def _ft_cycle(self, node: str, start: float) -> None:
        T = self.g.nodes[node].cycle_time
        current = None
        for off, green in self._ft_intervals(node):
            t = start + off
            if t <= self.now:
                current = green
            else:
                self._push(t, _P_SIGNAL, node, self._apply_green, node, green)
        if current is not None:
            self._apply_green(node, current)
        self._push(start + T, _P_SIGNAL, node, self._ft_cycle, node, start + T)

    def _apply_green(self, node: str, green) -> None:
        self._set_green(node, set(green))

    def _pressure_ratios(self) -> dict[str, list[tuple[MovementKey, float]]]:
        """Aggregate turn ratios per link used in the max-pressure weights."""
        tot: dict[MovementKey, float] = defaultdict(float)
        for d in self.g.demands:
            if d.turn_ratios:
                for k, r in d.turn_ratios.items():
                    tot[k] += r
        n = max(1, sum(1 for d in self.g.demands if d.turn_ratios))
        out: dict[str, list[tuple[MovementKey, float]]] = defaultdict(list)
        for k, r in sorted(tot.items()):
            if k in self.mv:
                out[k[0]].append((k, r / n))
        return out

    def pressure(self, key: MovementKey) -> float:
        st = self.mv[key]
        down = sum(r * len(self.mv[k2].queue) for k2, r in self._ratios.get(key[1], ()))
        return self.g.movements[key].saturation_flow * (len(st.queue) - down)

    def _mp_epoch(self, node: str) -> None:
        nd = self.g.nodes[node]
        k = self.ctl.decisions_per_cycle
        epoch = nd.cycle_time / k
        green_len = (nd.cycle_time - nd.lost_time) / k
        best, best_p = 0, -math.inf
        for i, stage in enumerate(self.g.timing[node].stages):
            p = sum(self.pressure(m) for m in stage.durations if m in self.mv)
            if p > best_p + 1e-9:
                best, best_p = i, p
        stage = self.g.timing[node].stages[best]
        self._set_green(node, {m for m, d in stage.durations.items() if d > 0 and m in self.mv})
        if green_len < epoch:
            self._push(self.now + green_len, _P_SIGNAL, node, self._set_green, node, set())
        self._push(self.now + epoch, _P_SIGNAL, node, self._mp_epoch, node)

    # -- vehicles
    def _travel(self, veh: _Vehicle, link: str) -> float:
        tt = self.g.links[link].travel_time
        if self.opt.travel == "exponential" and tt > 0:
            return veh.rng.expovariate(1.0 / tt)
        return tt

    def _choose(self, veh: _Vehicle, link: str) -> MovementKey:
        d = veh.commodity
        if d.route is not None:
            nxt = d.route[veh.route_pos + 1]
            return (link, nxt)
        opts = [(k, d.turn_ratios.get(k, 0.0)) for k in self.g.movements_from(link)
                if d.turn_ratios and d.turn_ratios.get(k, 0.0) > 0]
        if not opts:
            raise SimError(f"no turn ratio for vehicles leaving link {link}")
        u = veh.rng.random() * sum(r for _, r in opts)
        acc = 0.0
        for k, r in opts:
            acc += r
            if u < acc:
                return k
        return opts[-1][0]

    def _enter(self, veh: _Vehicle, link: str) -> None:
        veh.link = link
        self.occupancy[link] += 1
        self._emit(ENTER_LINK, veh.id, "", link, self.g.links[link].from_node or "")
        tt = self._travel(veh, link)
        if self.g.links[link].kind == EXIT:
            self._push(self.now + tt, _P_EXIT, veh.id, self._exit, veh)
        else:
            veh.movement = self._choose(veh, link)
            if veh.movement not in self.mv:
                raise SimError(f"vehicle {veh.id} routed over a forbidden movement {veh.movement}")
            self._push(self.now + tt, _P_JOIN, veh.id, self._join, veh)

    def _join(self, veh: _Vehicle) -> None:
        st = self.mv[veh.movement]
        st.queue.append(veh)
        self._emit(JOIN_QUEUE, veh.id, veh.movement[0], veh.movement[1], st.node)
        if len(st.queue) == 1:
            self._try_serve(veh.movement)

    def _exit(self, veh: _Vehicle) -> None:
        self._emit(EXIT_NETWORK, veh.id, veh.link, "", self.g.links[veh.link].to_node or "")
        self.inside -= 1
        self._free(veh.link)

    def _free(self, link: str) -> None:
        self.occupancy[link] -= 1
        if link in self.outside and self.outside[link]:
            veh = self.outside[link].popleft()
            self._enter(veh, link)
        for key in sorted(self.waiters.pop(link, ())):
            self._try_serve(key)

    def _try_serve(self, key: MovementKey) -> None:
        st = self.mv[key]
        if not st.queue or not st.green or st.pending is not None:
            return
        t = max(self.now, st.last_cross + st.headway)
        st.pending = t
        self._push(t, _P_SERVE, st.queue[0].id, self._serve, key)

    def _serve(self, key: MovementKey) -> None:
        st = self.mv[key]
        st.pending = None
        if not st.queue or not st.green or self.now < st.last_cross + st.headway - 1e-9:
            self._try_serve(key)
            return
        veh = st.queue[0]
        dst = self.g.links[key[1]]
        if self.occupancy[key[1]] >= dst.storage_capacity:
            if not st.blocked:
                st.blocked = True
                self._emit(BLOCKED, veh.id, key[0], key[1], st.node)
            self.waiters[key[1]].add(key)
            return
        st.blocked = False
        st.queue.popleft()
        st.last_cross = self.now
        self._emit(CROSS, veh.id, key[0], key[1], st.node)
        veh.route_pos += 1
        self._free(key[0])
        self._enter(veh, key[1])
        self._try_serve(key)

    def _arrive(self, veh: _Vehicle, entry: str) -> None:
        self._emit(EXTERNAL_ARRIVAL, veh.id, "", entry, "")
        self.inside += 1
        if self.occupancy[entry] < self.g.links[entry].storage_capacity and not self.outside[entry]:
            self._enter(veh, entry)
        else:
            self.outside[entry].append(veh)

    def _new_vehicle(self, d: CommodityDemand, entry: str) -> _Vehicle:
        k = self._counter[(entry, d.index)]
        self._counter[(entry, d.index)] = k + 1
        vid = f"{entry}:{d.index}:{k}" if self._tagged else f"{entry}:{k}"
        return _Vehicle(vid, d, random.Random(f"{self.seed}:{vid}"))

    def _schedule_arrivals(self, demands: Sequence[CommodityDemand], start: float, end: float) -> None:
        self._stream_epoch += 1
        for d in demands:
            if d.route is not None:
                entries = [(d.route[0], d.entry_flows.get(d.route[0], 0.0))]
            else:
                entries = sorted(d.entry_flows.items())
            for entry, rate in entries:
                if entry not in self.outside:
                    raise SimError(f"demand on {entry}, which is not an entry link")
                if rate <= 0:
                    continue
                if self.opt.arrivals == "deterministic":
                    gap = 3600.0 / rate
                    n = 0
                    while start + n * gap < end - 1e-9:
                        self._push(start + n * gap, _P_ARRIVE, entry, self._arrival_event, d, entry)
                        n += 1
                else:
                    rng = random.Random(f"{self.seed}:arrivals:{entry}:{d.index}:{self._stream_epoch}")
                    t = start + rng.expovariate(rate / 3600.0)
                    while t < end:
                        self._push(t, _P_ARRIVE, entry, self._arrival_event, d, entry)
                        t += rng.expovariate(rate / 3600.0)

    def _arrival_event(self, d: CommodityDemand, entry: str) -> None:
        self._arrive(self._new_vehicle(d, entry), entry)

    def advance(self, demands: Sequence[CommodityDemand], duration: float, label: str = "run") -> None:
        """Run ``duration`` seconds from the current state with the given arrivals."""
        if not duration > 0:
            raise SimError("horizon must be positive")
        start = self.now
        end = start + duration
        if not self._signals_started:
            self._start_signals(start)
        self._tagged = self._tagged or len(demands) > 1
        self._schedule_arrivals(demands, start, end)
        self._loop(end)
        self.now = end
        self.log.segments.append((label, start, end))

    def drain(self, limit: float = 86400.0) -> None:
        """Continue with no new arrivals until every vehicle has left (or ``limit`` s pass)."""
        start = self.now
        if self.inside > 0:
            self._loop(start + limit, stop_when_empty=True)
        if self.inside > 0:
            raise SimError(f"{self.inside} vehicles still in the network after draining {limit:g} s")
        self.log.segments.append(("drain", start, self.now))

    def _loop(self, end: float, stop_when_empty: bool = False) -> None:
        heap = self._heap
        while heap and heap[0][0] <= end:
            t, _p, _tie, _s, fn, args = heapq.heappop(heap)
            self.now = t
            fn(*args)
            if stop_when_empty and self.inside == 0:
                return


def _check_demands(g: NetworkGraph, demands: Sequence[CommodityDemand]) -> None:
    if not demands:
        raise SimError("no demand given")
    for d in demands:
        for e, v in d.entry_flows.items():
            if e not in g.links or g.links[e].kind != ENTRY:
                raise SimError(f"demand on {e}, which is not an entry link")
            if v < 0:
                raise SimError(f"negative demand on {e}")


def run(g: NetworkGraph, demand: Sequence[CommodityDemand] | None = None,
        controller: ControllerConfig | None = None, horizon: float = 3600.0, seed: int = 0,
        options: SimOptions | None = None) -> EventLog:
    """Simulate ``horizon`` seconds from an empty network."""
    if not horizon > 0:
        raise SimError("horizon must be positive")
    demand = list(demand if demand is not None else g.demands)
    _check_demands(g, demand)
    sim = Simulator(g, controller or ControllerConfig(), seed, options)
    sim.advance(demand, horizon)
    if sim.opt.drain:
        sim.drain()
    return sim.log


def scale_demands(demands: Sequence[CommodityDemand], factor: float) -> list[CommodityDemand]:
    return [CommodityDemand(d.index, {k: v * factor for k, v in d.entry_flows.items()},
                            d.turn_ratios, d.route) for d in demands]


def loading_sweep(g: NetworkGraph, base: Sequence[CommodityDemand] | None, controller: ControllerConfig | None,
                  factors: Sequence[float], step_hours: float = 2.0, seed: int = 0,
                  options: SimOptions | None = None) -> EventLog:
    """Run one step of ``step_hours`` per loading factor, carrying state across steps."""
    if not factors:
        raise SimError("empty loading schedule")
    if any(f <= 0 for f in factors) or any(b <= a for a, b in zip(factors, factors[1:])):
        raise SimError("loading factors must be positive and increasing")
    base = list(base if base is not None else g.demands)
    _check_demands(g, base)
    sim = Simulator(g, controller or ControllerConfig(), seed, options)
    for f in factors:
        sim.advance(scale_demands(base, f), step_hours * 3600.0, label=f"{f:g}")
    return sim.log


# ---------------------------------------------------------------- scenarios

@dataclass
class Scenario:
    network: NetworkGraph
    demands: list[CommodityDemand]
    controller: ControllerConfig
    horizon: float
    seed: int
    factors: list[float] | None = None
    step_hours: float = 2.0
    options: SimOptions = field(default_factory=SimOptions)


def load_scenario(path: str | Path, network: NetworkGraph | None = None) -> Scenario:
    """Scenario JSON: ``network`` (path, relative to the file), ``demands``,
    ``controller``, ``horizon``, ``seed``, ``factors``, ``step_hours``,
    ``arrivals``, ``travel``, ``drain``."""
    from .network import demand_from_dict
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SimError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if network is None:
        if "network" not in doc:
            raise SimError(f"{path}: missing field 'network'")
        net_path = Path(doc["network"])
        if not net_path.is_absolute():
            net_path = path.parent / net_path
        network = load_network(net_path)
    try:
        demands = ([demand_from_dict(d, i + 1) for i, d in enumerate(doc["demands"])]
                   if doc.get("demands") else list(network.demands))
        factors = [float(x) for x in doc["factors"]] if doc.get("factors") else None
        opts = SimOptions(doc.get("arrivals", "deterministic"), doc.get("travel", "constant"),
                          bool(doc.get("drain", False)))
        return Scenario(network, demands, ControllerConfig.from_dict(doc.get("controller")),
                        float(doc.get("horizon", 3600.0)), int(doc.get("seed", 0)), factors,
                        float(doc.get("step_hours", 2.0)), opts)
    except (KeyError, TypeError, ValueError, NetworkError) as exc:
        if isinstance(exc, SimError):
            raise
        raise SimError(f"{path}: malformed scenario: {exc}") from exc

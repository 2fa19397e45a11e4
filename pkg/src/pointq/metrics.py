"""Queries over a simulation event log.

Every function makes one streaming pass over an iterable of
:class:`~pointq.sim.Event` (an :class:`EventLog` or :func:`read_events`), so
logs larger than memory can be analysed from disk.

Conventions: standard deviations are population values; a movement's green
time counts as excess only while its queue is empty, so green time spent
blocked by a full downstream link is neither excess nor service.
"""

from __future__ import annotations

import csv
import json
import math
from bisect import bisect_right
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .network import ENTRY, EXIT, INTERNAL, NetworkGraph
from .sim import (CROSS, ENTER_LINK, EXIT_NETWORK, EXTERNAL_ARRIVAL, JOIN_QUEUE, PHASE_CHANGE, Event)

DEFAULT_BIN = 5.0


class MetricsError(ValueError):
    pass


# ---------------------------------------------------------------- trips

@dataclass(frozen=True)
class TripRecord:
    vehicle: str
    entry_link: str
    exit_link: str
    arrival: float          # external arrival time
    start: float            # first link entry
    end: float              # network exit
    distance: float         # miles
    links: tuple[str, ...]

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def speed(self) -> float:
        return self.distance / (self.duration / 3600.0)


def trips(events: Iterable[Event], lengths: Mapping[str, float]) -> list[TripRecord]:
    """Completed trips, in exit order."""
    arrival: dict[str, float] = {}
    start: dict[str, float] = {}
    path: dict[str, list[str]] = defaultdict(list)
    out = []
    for e in events:
        if e.kind == EXTERNAL_ARRIVAL:
            arrival[e.vehicle] = e.time
        elif e.kind == ENTER_LINK:
            start.setdefault(e.vehicle, e.time)
            path[e.vehicle].append(e.link_to)
        elif e.kind == EXIT_NETWORK:
            p = path.pop(e.vehicle)
            t0 = start.pop(e.vehicle)
            out.append(TripRecord(e.vehicle, p[0], p[-1], arrival.pop(e.vehicle, t0), t0, e.time,
                                  math.fsum(lengths[l] for l in p), tuple(p)))
    return out


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    mu = math.fsum(xs) / n
    return mu, math.sqrt(math.fsum((x - mu) ** 2 for x in xs) / n)


@dataclass
class TravelTimes:
    entry: str
    exit: str
    samples: list[tuple[str, float, float]]   # (vehicle, start time, travel time s)
    mean: float | None
    std: float | None
    flags: list[str] = field(default_factory=list)

    @property
    def band(self) -> tuple[float, float] | None:
        if self.mean is None:
            return None
        return (self.mean - 2 * self.std, self.mean + 2 * self.std)

    @property
    def within_band(self) -> float | None:
        """Fraction of samples inside mean +- 2 std."""
        if not self.samples:
            return None
        lo, hi = self.band
        return sum(1 for _, _, t in self.samples if lo <= t <= hi) / len(self.samples)


def route_travel_times(events: Iterable[Event], entry: str, exit: str,
                       lengths: Mapping[str, float] | None = None) -> TravelTimes:
    first: dict[str, tuple[str, float]] = {}
    samples = []
    for e in events:
        if e.kind == ENTER_LINK and e.vehicle not in first:
            first[e.vehicle] = (e.link_to, e.time)
        elif e.kind == EXIT_NETWORK:
            ent, t0 = first.pop(e.vehicle, ("", e.time))
            if ent == entry and e.link_from == exit:
                samples.append((e.vehicle, t0, e.time - t0))
    if not samples:
        return TravelTimes(entry, exit, [], None, None, ["no_trips"])
    mu, sd = _mean_std([s[2] for s in samples])
    flags = ["single_sample"] if len(samples) == 1 else []
    return TravelTimes(entry, exit, samples, mu, sd, flags)


@dataclass
class SpeedStats:
    trips: int
    hours: float
    vmt_per_hour: float
    vht_per_hour: float
    speed: float                # VMT / VHT, flow-weighted
    mean_distance: float
    mean_time: float            # s
    mean_speed: float           # trip mean of d_i / t_i
    correlation: float | None   # Pearson(v_i, t_i)
    flags: list[str] = field(default_factory=list)


def vmt_vht(events: Iterable[Event], g: NetworkGraph, hours: float | None = None) -> SpeedStats:
    """VMT, VHT and speed statistics over trips that use at least one internal link."""
    lengths = {l: g.links[l].length for l in g.links}
    tracker = _EndTracker()
    recs = [t for t in trips(tracker(events), lengths)
            if any(g.links[l].kind == INTERNAL for l in t.links)]
    hours = hours if hours is not None else tracker.last / 3600.0
    if not recs:
        raise MetricsError("no trips through the network interior")
    if hours <= 0:
        raise MetricsError("duration must be positive")
    d = [t.distance for t in recs]
    tt = [t.duration for t in recs]
    v = [t.speed for t in recs]
    vmt = math.fsum(d)
    vht = math.fsum(tt) / 3600.0
    flags = []
    _, sv = _mean_std(v)
    _, st = _mean_std(tt)
    if sv == 0 or st == 0:
        rho = None
        flags.append("zero_variance")
    else:
        mv, mt = math.fsum(v) / len(v), math.fsum(tt) / len(tt)
        cov = math.fsum((a - mv) * (b - mt) for a, b in zip(v, tt)) / len(v)
        rho = cov / (sv * st)
    return SpeedStats(len(recs), hours, vmt / hours, vht / hours, vmt / vht, vmt / len(recs),
                      math.fsum(tt) / len(tt), math.fsum(v) / len(v), rho, flags)


class _EndTracker:
    """Pass-through iterator remembering the last event time."""

    def __init__(self):
        self.last = 0.0

    def __call__(self, events: Iterable[Event]):
        for e in events:
            self.last = e.time
            yield e


def vmt_two_ways(events: Iterable[Event], lengths: Mapping[str, float]) -> tuple[float, float]:
    """Completed-trip VMT from trip paths and from per-link entry counts.

    Both sums run over the same multiset of link lengths through
    :func:`math.fsum`, which rounds the exact total once, so they agree bit
    for bit whenever the trip and link bookkeeping agree.
    """
    path: dict[str, list[str]] = defaultdict(list)
    per_trip: list[float] = []      # every link length of every completed trip
    counts: dict[str, int] = defaultdict(int)
    for e in events:
        if e.kind == ENTER_LINK:
            path[e.vehicle].append(e.link_to)
        elif e.kind == EXIT_NETWORK:
            p = path.pop(e.vehicle)
            per_trip.extend(lengths[l] for l in p)
            for l in p:
                counts[l] += 1
    from_trips = math.fsum(per_trip)
    from_links = math.fsum(lengths[l] for l, c in sorted(counts.items()) for _ in range(c))
    return from_trips, from_links


# ---------------------------------------------------------------- excess green

@dataclass
class ExcessGreen:
    per_phase: dict[tuple[str, str], float]
    green_time: dict[tuple[str, str], float]
    never_green: list[tuple[str, str]]

    def cdf(self) -> list[tuple[float, float]]:
        """Right-continuous step CDF as (e, F(e)) at each distinct value."""
        vals = sorted(self.per_phase.values())
        n = len(vals)
        out = []
        for i, x in enumerate(vals):
            if i + 1 < n and vals[i + 1] == x:
                continue
            out.append((x, (i + 1) / n))
        return out

    def F(self, e: float) -> float:
        vals = sorted(self.per_phase.values())
        return bisect_right(vals, e) / len(vals) if vals else float("nan")


def excess_green(events: Iterable[Event], end: float | None = None,
                 movements: Iterable[tuple[str, str]] = ()) -> ExcessGreen:
    """Fraction of each movement's green time during which its queue is empty."""
    queue: dict[tuple, int] = defaultdict(int)
    green_since: dict[tuple, float | None] = {}
    empty_since: dict[tuple, float | None] = {}
    green_total: dict[tuple, float] = defaultdict(float)
    empty_total: dict[tuple, float] = defaultdict(float)
    seen = set(movements)
    t = 0.0

    def close_empty(k, now):
        s = empty_since.get(k)
        if s is not None:
            empty_total[k] += now - s
            empty_since[k] = None

    for e in events:
        t = e.time
        k = (e.link_from, e.link_to)
        if e.kind == PHASE_CHANGE:
            seen.add(k)
            if e.vehicle == "1" and green_since.get(k) is None:
                green_since[k] = t
                if queue[k] == 0:
                    empty_since[k] = t
            elif e.vehicle == "0" and green_since.get(k) is not None:
                green_total[k] += t - green_since[k]
                green_since[k] = None
                close_empty(k, t)
        elif e.kind == JOIN_QUEUE:
            if queue[k] == 0:
                close_empty(k, t)
            queue[k] += 1
        elif e.kind == CROSS:
            queue[k] -= 1
            if queue[k] == 0 and green_since.get(k) is not None:
                empty_since[k] = t
    end = t if end is None else end
    for k, s in green_since.items():
        if s is not None:
            green_total[k] += end - s
            close_empty(k, end)
    per = {k: empty_total[k] / green_total[k] for k in sorted(green_total) if green_total[k] > 0}
    never = sorted(k for k in seen if k not in per)
    return ExcessGreen(per, dict(green_total), never)


# ---------------------------------------------------------------- macroscopic series

@dataclass
class MacroSeries:
    bin: float
    times: list[float]          # bin end times
    e: list[float]              # external arrivals, vph
    a: list[float]              # internal arrivals (departures from entry links), vph
    d: list[float]              # network exits, vph
    cum_e: list[int]
    cum_a: list[int]
    cum_d: list[int]
    w: list[int]                # waiting at or outside entry links
    n: list[int]                # inside the network interior
    n_occupancy: list[int]      # same quantity counted from link occupancies


@dataclass
class LittleReport:
    window: tuple[float, float]
    arrival_rate: float         # vph
    E: float                    # mean entry wait, s
    T: float                    # mean interior sojourn, s
    w: float                    # time-average
    n: float
    rel_err_n: float            # |n - T lambda| / n
    rel_err_w: float            # |w - E lambda| / max(w, 1)
    rel_err_total: float        # |(w+n) - (E+T) lambda| / (w+n)


def macro_series(events: Iterable[Event], g: NetworkGraph, bin: float = DEFAULT_BIN,
                 end: float | None = None) -> MacroSeries:
    if bin <= 0:
        raise MetricsError("bin width must be positive")
    entries = set(g.links_of_kind(ENTRY))
    counts = defaultdict(lambda: [0, 0, 0])
    occ: dict[str, int] = defaultdict(int)
    cum = [0, 0, 0]
    snaps: list[tuple[int, int, int, int]] = []
    next_edge = bin
    t_last = 0.0

    def snap_until(t):
        nonlocal next_edge
        while next_edge <= t:
            # events at exactly the edge belong to the next bin
            snaps.append((cum[0], cum[1], cum[2], sum(v for l, v in occ.items() if l not in entries)))
            next_edge += bin

    for ev in events:
        t_last = ev.time
        if ev.time >= next_edge:
            snap_until(ev.time)
        if ev.kind == EXTERNAL_ARRIVAL:
            cum[0] += 1
        elif ev.kind == CROSS:
            occ[ev.link_from] -= 1
            if ev.link_from in entries:
                cum[1] += 1
        elif ev.kind == EXIT_NETWORK:
            cum[2] += 1
            occ[ev.link_from] -= 1
        elif ev.kind == ENTER_LINK:
            occ[ev.link_to] += 1
    end = t_last if end is None else end
    snap_until(end)
    k = 3600.0 / bin
    times, es, as_, ds, ce, ca, cd, w, n, no = [], [], [], [], [], [], [], [], [], []
    prev = (0, 0, 0)
    for i, (e_, a_, d_, inner) in enumerate(snaps):
        times.append((i + 1) * bin)
        es.append((e_ - prev[0]) * k)
        as_.append((a_ - prev[1]) * k)
        ds.append((d_ - prev[2]) * k)
        ce.append(e_)
        ca.append(a_)
        cd.append(d_)
        w.append(e_ - a_)
        n.append(a_ - d_)
        no.append(inner)
        prev = (e_, a_, d_)
    return MacroSeries(bin, times, es, as_, ds, ce, ca, cd, w, n, no)


def littles_law(events: Iterable[Event], g: NetworkGraph, window: tuple[float, float]) -> LittleReport:
    """Compare time-averaged w, n against arrival rate times mean E, T over ``window``."""
    t0, t1 = window
    if not t1 > t0:
        raise MetricsError("empty analysis window")
    entries = set(g.links_of_kind(ENTRY))
    arr: dict[str, float] = {}
    inner: dict[str, float] = {}
    waits, sojourns = [], []
    n_arr = 0
    w = n = 0
    area_w = area_n = 0.0
    t_prev = t0

    def accumulate(t):
        nonlocal area_w, area_n, t_prev
        lo, hi = max(t_prev, t0), min(t, t1)
        if hi > lo:
            area_w += w * (hi - lo)
            area_n += n * (hi - lo)
        t_prev = max(t_prev, t)

    for e in events:
        accumulate(e.time)
        if e.kind == EXTERNAL_ARRIVAL:
            w += 1
            arr[e.vehicle] = e.time
            if t0 <= e.time < t1:
                n_arr += 1
        elif e.kind == CROSS and e.link_from in entries:
            w -= 1
            n += 1
            inner[e.vehicle] = e.time
            ta = arr.pop(e.vehicle)
            if t0 <= ta < t1:
                waits.append(e.time - ta)
        elif e.kind == EXIT_NETWORK:
            if e.vehicle in inner:
                n -= 1
                ti = inner.pop(e.vehicle)
                if t0 <= ti < t1:
                    sojourns.append(e.time - ti)
            else:                       # entry link feeding an exit directly
                w -= 1
                ta = arr.pop(e.vehicle)
                if t0 <= ta < t1:
                    waits.append(e.time - ta)
    accumulate(t1)
    if n_arr == 0:
        raise MetricsError("no arrivals in the analysis window")
    span = t1 - t0
    lam = n_arr / span
    E = math.fsum(waits) / len(waits) if waits else 0.0
    T = math.fsum(sojourns) / len(sojourns) if sojourns else 0.0
    wbar, nbar = area_w / span, area_n / span
    return LittleReport((t0, t1), lam * 3600.0, E, T, wbar, nbar,
                        abs(nbar - T * lam) / nbar if nbar > 0 else 0.0,
                        abs(wbar - E * lam) / max(wbar, 1.0),
                        abs(wbar + nbar - (E + T) * lam) / (wbar + nbar) if wbar + nbar > 0 else 0.0)


# ---------------------------------------------------------------- queues

@dataclass
class QueueSeries:
    times: list[float]
    queued: list[int]           # vehicles in movement queues
    outside: list[int]          # vehicles waiting outside full entry links

    @property
    def total(self) -> list[int]:
        return [a + b for a, b in zip(self.queued, self.outside)]


def queue_series(events: Iterable[Event], bin: float = DEFAULT_BIN, end: float | None = None,
                 movement: tuple[str, str] | None = None) -> QueueSeries:
    """Queue lengths sampled at bin ends; one movement when given, else the whole network."""
    q = 0
    outside = 0
    waiting: set[str] = set()
    times, qs, os_ = [], [], []
    edge = bin
    t = 0.0
    for e in events:
        t = e.time
        while edge <= t:
            times.append(edge)
            qs.append(q)
            os_.append(outside)
            edge += bin
        k = (e.link_from, e.link_to)
        if e.kind == JOIN_QUEUE and (movement is None or k == movement):
            q += 1
        elif e.kind == CROSS and (movement is None or k == movement):
            q -= 1
        elif e.kind == EXTERNAL_ARRIVAL and movement is None:
            outside += 1
            waiting.add(e.vehicle)
        elif e.kind == ENTER_LINK and e.vehicle in waiting:
            outside -= 1
            waiting.discard(e.vehicle)
    end = t if end is None else end
    while edge <= end:
        times.append(edge)
        qs.append(q)
        os_.append(outside)
        edge += bin
    return QueueSeries(times, qs, os_)


def average_total_queue(events: Iterable[Event], start: float = 0.0, end: float | None = None) -> float:
    """Time-averaged number of vehicles queued at movements or outside entries."""
    q = 0
    waiting: set[str] = set()
    area = 0.0
    t_prev = start
    for e in events:
        if end is not None and e.time > end:
            break
        if e.time > t_prev:
            area += (q + len(waiting)) * (e.time - t_prev)
            t_prev = e.time
        if e.kind == JOIN_QUEUE:
            q += 1
        elif e.kind == CROSS:
            q -= 1
        elif e.kind == EXTERNAL_ARRIVAL:
            waiting.add(e.vehicle)
        elif e.kind == ENTER_LINK:
            waiting.discard(e.vehicle)
    stop = t_prev if end is None else end
    if stop > t_prev:
        area += (q + len(waiting)) * (stop - t_prev)
    return area / (stop - start) if stop > start else 0.0


# ---------------------------------------------------------------- MFD

@dataclass
class MFDPoint:
    time: float
    flow: float         # weighted mean vph
    occupancy: float    # weighted mean fraction of storage


def mfd_aggregate(events: Iterable[Event], g: NetworkGraph, links: Sequence[str] | None = None,
                  bin: float = 300.0, end: float | None = None) -> list[MFDPoint]:
    """Length-and-lane weighted flow and occupancy per bin over sampled links."""
    links = sorted(links if links is not None else
                   [l for l in g.links if g.links[l].kind == INTERNAL])
    if not links:
        raise MetricsError("empty link sample")
    for l in links:
        if l not in g.links:
            raise MetricsError(f"unknown link {l}")
    if bin <= 0:
        raise MetricsError("bin width must be positive")
    wt = {l: g.links[l].length * g.links[l].lanes for l in links}
    wsum = math.fsum(wt.values())
    occ = {l: 0 for l in links}
    dep = {l: 0 for l in links}
    area = {l: 0.0 for l in links}
    changed = {l: 0.0 for l in links}
    edge = bin
    out: list[MFDPoint] = []

    def close_bins(t):
        nonlocal edge
        while edge <= t:
            for l in links:
                area[l] += occ[l] * (edge - changed[l])
                changed[l] = edge
            f = math.fsum(wt[l] * dep[l] * 3600.0 / bin for l in links) / wsum
            o = math.fsum(wt[l] * area[l] / bin / g.links[l].storage_capacity for l in links) / wsum
            out.append(MFDPoint(edge, f, o))
            for l in links:
                dep[l] = 0
                area[l] = 0.0
            edge += bin

    def bump(l, t, delta):
        area[l] += occ[l] * (t - changed[l])
        changed[l] = t
        occ[l] += delta

    t = 0.0
    for e in events:
        t = e.time
        close_bins(t)
        if e.kind == ENTER_LINK and e.link_to in occ:
            bump(e.link_to, t, 1)
        elif e.kind in (CROSS, EXIT_NETWORK) and e.link_from in occ:
            bump(e.link_from, t, -1)
            dep[e.link_from] += 1
    close_bins(t if end is None else end)
    return out

"""Dense bounded-variable primal simplex and the diversion programs built on it."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .network import MovementKey, NetworkGraph, Stage, TimingPlan, capacity, stage_budget_used

OPTIMAL, UNBOUNDED, INFEASIBLE = "optimal", "unbounded", "infeasible"
BINDING_TOL = 1e-7


class LPError(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """``sense`` of ``c'x`` subject to ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``lo <= x <= hi``."""
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    sense: str = "min"

    def __post_init__(self):
        self.c = np.asarray(self.c, float).reshape(-1)
        n = self.c.size
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, float).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).reshape(-1)
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.asarray(self.A_ub, float).reshape(-1, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float).reshape(-1)
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, float).reshape(-1)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, float).reshape(-1)
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        if self.A_eq.shape[0] != self.b_eq.size or self.A_ub.shape[0] != self.b_ub.size:
            raise ValueError("constraint dimensions do not match")
        if self.lo.size != n or self.hi.size != n:
            raise ValueError("bound dimensions do not match")
        if np.any(self.lo > self.hi):
            raise ValueError("lower bound exceeds upper bound")


@dataclass
class LPResult:
    status: str
    value: float | None
    x: np.ndarray | None
    iterations: int
    ray: np.ndarray | None = None       # improving direction when unbounded
    farkas: np.ndarray | None = None    # row multipliers certifying infeasibility
    infeasibility: float = 0.0


def _to_standard(lp: LinearProgram):
    """Rewrite as ``min c'y, M y = r, 0 <= y <= u`` with ``x = shift + T y``."""
    n = lp.c.size
    cols: list[np.ndarray] = []
    ups: list[float] = []
    shift = np.zeros(n)
    for j in range(n):
        lo, hi = lp.lo[j], lp.hi[j]
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lo):
            shift[j] = lo
            cols.append(e)
            ups.append(hi - lo)
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append(-e)
            ups.append(np.inf)
        else:
            cols.append(e)
            ups.append(np.inf)
            cols.append(-e)
            ups.append(np.inf)
    T = np.array(cols).T if cols else np.zeros((n, 0))
    m_eq, m_ub = lp.A_eq.shape[0], lp.A_ub.shape[0]
    k = T.shape[1]
    M = np.zeros((m_eq + m_ub, k + m_ub))
    M[:m_eq, :k] = lp.A_eq @ T
    M[m_eq:, :k] = lp.A_ub @ T
    M[m_eq:, k:] = np.eye(m_ub)
    r = np.concatenate([lp.b_eq - lp.A_eq @ shift, lp.b_ub - lp.A_ub @ shift])
    sign = -1.0 if lp.sense == "max" else 1.0
    cost = np.concatenate([sign * (T.T @ lp.c), np.zeros(m_ub)])
    u = np.concatenate([np.array(ups, float), np.full(m_ub, np.inf)])
    return M, r, cost, u, T, shift, k


class _Simplex:
    """Revised bounded-variable simplex with Bland's rule."""

    def __init__(self, M, r, u, tol):
        self.M, self.r, self.u, self.tol = M, r, u, tol
        self.m, self.n = M.shape

    def run(self, cost, basis, upper, max_iter):
        M, u, tol = self.M, self.u, self.tol
        it = 0
        while True:
            it += 1
            if it > max_iter:
                raise LPError(f"simplex iteration limit {max_iter} reached")
            x = self.values(basis, upper)
            B = M[:, basis]
            try:
                y = np.linalg.solve(B.T, cost[basis])
            except np.linalg.LinAlgError:
                raise LPError(f"singular basis (cond={np.linalg.cond(B):.2e})") from None
            d = cost - M.T @ y
            inb = np.zeros(self.n, bool)
            inb[basis] = True
            enter, direction = -1, 0
            for j in range(self.n):
                if inb[j] or u[j] <= 0:
                    continue
                if not upper[j] and d[j] < -tol:
                    enter, direction = j, 1
                    break
                if upper[j] and d[j] > tol:
                    enter, direction = j, -1
                    break
            if enter < 0:
                return x, y, it, None
            w = np.linalg.solve(B, M[:, enter])
            # basic values move by -direction * t * w
            t_best, leave, leave_to_upper = u[enter], -1, False
            for i, bj in enumerate(basis):
                rate = direction * w[i]
                if rate > tol:
                    t = x[bj] / rate
                elif rate < -tol and np.isfinite(u[bj]):
                    t = (u[bj] - x[bj]) / -rate
                else:
                    continue
                t = max(t, 0.0)
                if t < t_best - 1e-12 or (abs(t - t_best) <= 1e-12 and leave >= 0 and bj < basis[leave]):
                    t_best, leave, leave_to_upper = t, i, rate < 0
            if not np.isfinite(t_best):
                ray = np.zeros(self.n)
                ray[enter] = direction
                ray[basis] = -direction * w
                return x, y, it, ray
            if leave < 0:
                upper[enter] = not upper[enter]     # bound flip
                continue
            old = basis[leave]
            basis[leave] = enter
            upper[enter] = False
            upper[old] = leave_to_upper

    def values(self, basis, upper):
        x = np.zeros(self.n)
        x[upper] = self.u[upper]
        inb = np.zeros(self.n, bool)
        inb[basis] = True
        x[inb] = 0.0
        rhs = self.r - self.M[:, ~inb] @ x[~inb]
        x[basis] = np.linalg.solve(self.M[:, basis], rhs)
        return x


def solve_lp(lp: LinearProgram, tol: float = 1e-9, max_iter: int = 10000) -> LPResult:
    M, r, cost, u, T, shift, k = _to_standard(lp)
    m, n = M.shape
    flip = r < 0
    M = M.copy()
    r = r.copy()
    M[flip] *= -1
    r[flip] *= -1
    # phase 1 with one artificial per row
    Ma = np.hstack([M, np.eye(m)])
    ua = np.concatenate([u, np.full(m, np.inf)])
    scale = max(1.0, np.abs(r).max() if m else 1.0)
    sx = _Simplex(Ma, r, ua, tol)
    basis = list(range(n, n + m))
    upper = np.zeros(n + m, bool)
    cost1 = np.concatenate([np.zeros(n), np.ones(m)])
    it_total = 0
    if m:
        x, y, it, _ = sx.run(cost1, basis, upper, max_iter)
        it_total += it
        infeas = float(x[n:].sum())
        if infeas > 1e-8 * scale:
            farkas = y.copy()
            farkas[flip] *= -1
            return LPResult(INFEASIBLE, None, None, it_total, farkas=farkas, infeasibility=infeas)
    # phase 2: artificials pinned at zero
    sx.u = np.concatenate([u, np.zeros(m)])
    ua2 = sx.u
    cost2 = np.concatenate([cost, np.zeros(m)])
    x, y, it, ray = sx.run(cost2, basis, upper, max_iter)
    it_total += it
    if ray is not None:
        dx = T @ ray[:k]
        return LPResult(UNBOUNDED, None, None, it_total, ray=dx)
    del ua2
    xo = shift + T @ x[:k]
    return LPResult(OPTIMAL, float(lp.c @ xo), xo, it_total)


# ---------------------------------------------------------------- diversion

class DiversionError(RuntimeError):
    pass


@dataclass
class DiversionResult:
    optimal_diversion: float
    binding_movements: list[MovementKey]
    slacks: dict[MovementKey, float]
    new_timing: dict[str, TimingPlan] | None = None
    flagged: list[MovementKey] = field(default_factory=list)
    lp_value: float | None = None

    def to_dict(self) -> dict:
        out: dict = {"optimal_diversion": self.optimal_diversion,
                     "binding_movements": [list(k) for k in self.binding_movements],
                     "slacks": [{"from": a, "to": b, "slack": s} for (a, b), s in sorted(self.slacks.items())],
                     "flagged": [list(k) for k in self.flagged]}
        if self.new_timing is not None:
            out["timing_plans"] = [
                {"node": p.node_id, "offset": p.offset,
                 "stages": [[{"from": a, "to": b, "duration": d} for (a, b), d in sorted(st.durations.items())]
                            for st in p.stages]}
                for p in (self.new_timing[k] for k in sorted(self.new_timing))]
        return out


def route_movements(g: NetworkGraph, route: Sequence[str]) -> list[MovementKey]:
    steps = [(str(a), str(b)) for a, b in zip(route, route[1:])]
    for k in steps:
        if k not in g.movements or not g.movements[k].allowed:
            raise DiversionError(f"route step {k[0]}>{k[1]} is not an allowed movement")
    return steps


def max_simple_diversion(g: NetworkGraph, baseline: Mapping[MovementKey, float],
                         route: Sequence[str]) -> DiversionResult:
    """Largest extra flow along ``route`` that fits under current capacities."""
    steps = route_movements(g, route)
    if not steps:
        raise DiversionError("route has no movements")
    slack = {k: capacity(g, k) - baseline.get(k, 0.0) for k in steps}
    flagged = [k for k in steps if capacity(g, k) <= 0]
    bad = [k for k, s in slack.items() if s < -BINDING_TOL and k not in flagged]
    if bad:
        raise DiversionError(f"baseline exceeds capacity on {bad[0][0]}>{bad[0][1]}")
    keys = sorted(slack)
    lp = LinearProgram(c=np.array([1.0]), A_ub=np.ones((len(keys), 1)),
                       b_ub=np.array([max(slack[k], 0.0) for k in keys]), sense="max")
    res = solve_lp(lp)
    if res.status != OPTIMAL:
        raise DiversionError(f"diversion LP {res.status}")
    d = max(res.value, 0.0)
    binding = sorted(k for k in keys if slack[k] - d <= BINDING_TOL)
    return DiversionResult(d, binding, slack, None, flagged, res.value)


def max_retimed_diversion(g: NetworkGraph, baseline: Mapping[MovementKey, float], route: Sequence[str],
                          budget_mode: str = "stage") -> DiversionResult:
    """Largest extra flow along ``route`` when green splits may be re-chosen.

    One green variable per (node, stage, phase) present in the current plans;
    cycle times, stage sets and offsets are kept.  ``budget_mode="stage"``
    charges each stage its longest green against ``T_n - L_n``;
    ``"phase_sum"`` charges every (stage, phase) green.
    """
    steps = route_movements(g, route)
    on_route = set(steps)
    for node_id, plan in sorted(g.timing.items()):
        node = g.nodes[node_id]
        if stage_budget_used(plan, budget_mode) > node.cycle_time - node.lost_time + 1e-9:
            raise DiversionError(f"baseline timing at node {node_id} violates its green budget")

    gvars: list[tuple[str, int, MovementKey]] = []
    svars: list[tuple[str, int]] = []
    for node_id in sorted(g.timing):
        for i, st in enumerate(g.timing[node_id].stages):
            for mv in sorted(st.durations):
                gvars.append((node_id, i, mv))
            if budget_mode == "stage":
                svars.append((node_id, i))
    gi = {v: 1 + j for j, v in enumerate(gvars)}
    si = {v: 1 + len(gvars) + j for j, v in enumerate(svars)}
    nvar = 1 + len(gvars) + len(svars)

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    signalized_mvs = sorted(k for k in g.allowed_movements()
                            if g.movement_node(k) in g.timing)
    for k in signalized_mvs:
        node_id = g.movement_node(k)
        T = g.nodes[node_id].cycle_time
        c = g.movements[k].saturation_flow
        row = np.zeros(nvar)
        for (n_, i, mv), j in gi.items():
            if n_ == node_id and mv == k:
                row[j] = -c / T
        if k in on_route:
            row[0] = 1.0
        rows.append(row)
        rhs.append(-baseline.get(k, 0.0))
    for k in steps:
        if k in signalized_mvs:
            continue
        # unsignalized route step: fixed capacity c
        row = np.zeros(nvar)
        row[0] = 1.0
        rows.append(row)
        rhs.append(capacity(g, k) - baseline.get(k, 0.0))
    for node_id in sorted(g.timing):
        node = g.nodes[node_id]
        row = np.zeros(nvar)
        if budget_mode == "stage":
            for (n_, i), j in si.items():
                if n_ == node_id:
                    row[j] = 1.0
            for (n_, i, mv), j in gi.items():
                if n_ == node_id:
                    link = np.zeros(nvar)
                    link[j] = 1.0
                    link[si[(n_, i)]] = -1.0
                    rows.append(link)
                    rhs.append(0.0)
        elif budget_mode == "phase_sum":
            for (n_, i, mv), j in gi.items():
                if n_ == node_id:
                    row[j] = 1.0
        else:
            raise ValueError(f"unknown budget mode {budget_mode!r}")
        rows.append(row)
        rhs.append(node.cycle_time - node.lost_time)

    cvec = np.zeros(nvar)
    cvec[0] = 1.0
    lp = LinearProgram(c=cvec, A_ub=np.array(rows), b_ub=np.array(rhs), sense="max")
    res = solve_lp(lp)
    if res.status == INFEASIBLE:
        raise DiversionError("re-timing LP infeasible: baseline flows exceed what any split can serve")
    if res.status != OPTIMAL:
        raise DiversionError(f"re-timing LP {res.status}")
    x = res.x
    d = max(float(x[0]), 0.0)
    new_timing: dict[str, TimingPlan] = {}
    for node_id in sorted(g.timing):
        plan = g.timing[node_id]
        stages = []
        for i, st in enumerate(plan.stages):
            stages.append(Stage({mv: max(float(x[gi[(node_id, i, mv)]]), 0.0) for mv in sorted(st.durations)}))
        new_timing[node_id] = TimingPlan(node_id, tuple(stages), plan.offset)
    g2 = g.with_timing(new_timing)
    slack = {k: capacity(g2, k) - baseline.get(k, 0.0) for k in steps}
    binding = sorted(k for k in steps if slack[k] - d <= BINDING_TOL * max(1.0, d))
    return DiversionResult(d, binding, slack, new_timing, [], res.value)


def check_retimed_plan(g: NetworkGraph, baseline: Mapping[MovementKey, float], route: Sequence[str],
                       result: DiversionResult, budget_mode: str = "stage", tol: float = 1e-6) -> list[str]:
    """Independent re-check of capacity, budget and sign constraints."""
    problems: list[str] = []
    g2 = g.with_timing(result.new_timing or g.timing)
    on_route = set(route_movements(g, route))
    for k in g.allowed_movements():
        if g.movement_node(k) not in g2.timing and k not in on_route:
            continue
        need = baseline.get(k, 0.0) + (result.optimal_diversion if k in on_route else 0.0)
        if need > capacity(g2, k) + tol:
            problems.append(f"capacity {k}: {need:.6f} > {capacity(g2, k):.6f}")
    for node_id, plan in g2.timing.items():
        node = g.nodes[node_id]
        if stage_budget_used(plan, budget_mode) > node.cycle_time - node.lost_time + tol:
            problems.append(f"budget at node {node_id}")
        for st in plan.stages:
            if any(v < -tol for v in st.durations.values()):
                problems.append(f"negative green at node {node_id}")
    return problems

"""Calibration of link, demand and turn-movement flows by weighted least squares."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .network import ENTRY, EXIT, MovementKey, NetworkGraph, capacity
from .qp import QPResult, solve_box_qp

DEFAULT_TOL = 1e-8
MIN_NORM_REG = 1e-10


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementSet:
    """Measured values with confidence weights (default weight 1)."""
    link_flows: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    demands: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    turn_ratios: Mapping[MovementKey, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for name, table in (("link_flow", self.link_flows), ("demand", self.demands),
                            ("turn_ratio", self.turn_ratios)):
            for k, (v, w) in table.items():
                if not w > 0:
                    raise MeasurementError(f"{name} {k}: weight must be > 0")
                if name == "turn_ratio" and not 0.0 <= v <= 1.0:
                    raise MeasurementError(f"turn ratio {k}: {v} outside [0,1]")

    def scaled(self, factor: float) -> "MeasurementSet":
        return MeasurementSet({k: (v, w * factor) for k, (v, w) in self.link_flows.items()},
                              {k: (v, w * factor) for k, (v, w) in self.demands.items()},
                              {k: (v, w * factor) for k, (v, w) in self.turn_ratios.items()})


@dataclass
class QuadraticProgram:
    """``0.5 x'Hx + c'x + const`` over ``A x = b``, ``lo <= x <= hi``.

    ``variables`` names each coordinate: ``("f", l)``, ``("d", l)`` or
    ``("q", l, m)``.
    """
    H: np.ndarray
    c: np.ndarray
    const: float
    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    variables: list[tuple]
    network: NetworkGraph | None = None
    measurements: MeasurementSet | None = None

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.c @ x + self.const)

    def index(self) -> dict[tuple, int]:
        return {v: i for i, v in enumerate(self.variables)}


@dataclass
class FlowSolution:
    link_flows: dict[str, float]
    demands: dict[str, float]
    movement_flows: dict[MovementKey, float]
    split_ratios: dict[MovementKey, float]
    undetermined_ratios: set[str]
    residuals: dict[tuple, float]
    objective_value: float
    kkt_residual: float
    conservation_residual: float
    non_unique: bool
    binding: list[MovementKey]
    iterations: int
    regularization: float = MIN_NORM_REG


def assemble_qp(g: NetworkGraph, meas: MeasurementSet) -> QuadraticProgram:
    for l in meas.link_flows:
        if l not in g.links:
            raise MeasurementError(f"link flow measured on unknown link {l}")
    for l in meas.demands:
        if l not in g.links or g.links[l].kind != ENTRY:
            raise MeasurementError(f"demand measured on non-entry link {l}")
    for k in meas.turn_ratios:
        if k not in g.movements or not g.movements[k].allowed:
            raise MeasurementError(f"turn ratio measured on unknown movement {k}")

    links = sorted(g.links)
    entries = [l for l in links if g.links[l].kind == ENTRY]
    mvs = g.allowed_movements()
    variables: list[tuple] = [("f", l) for l in links] + [("d", l) for l in entries] + \
                             [("q", a, b) for a, b in mvs]
    idx = {v: i for i, v in enumerate(variables)}
    n = len(variables)
    H = np.zeros((n, n))
    c = np.zeros(n)
    const = 0.0

    def add_term(coefs: dict[int, float], target: float, w: float) -> None:
        nonlocal const
        a = np.zeros(n)
        for i, v in coefs.items():
            a[i] += v
        H[:] += 2.0 * w * np.outer(a, a)
        c[:] -= 2.0 * w * target * a
        const += w * target * target

    for l, (v, w) in sorted(meas.link_flows.items()):
        add_term({idx[("f", l)]: 1.0}, v, w)
    for l, (v, w) in sorted(meas.demands.items()):
        add_term({idx[("d", l)]: 1.0}, v, w)
    for (a, b), (r, w) in sorted(meas.turn_ratios.items()):
        add_term({idx[("q", a, b)]: 1.0, idx[("f", a)]: -r}, 0.0, w)

    rows: list[np.ndarray] = []
    for l in links:
        kind = g.links[l].kind
        if kind != EXIT:       # f_l = sum_m f(l,m)
            row = np.zeros(n)
            row[idx[("f", l)]] = 1.0
            for a, b in g.movements_from(l):
                row[idx[("q", a, b)]] -= 1.0
            rows.append(row)
        if kind != ENTRY:      # f_m = sum_l f(l,m)
            row = np.zeros(n)
            row[idx[("f", l)]] = 1.0
            for a, b in g.movements_into(l):
                row[idx[("q", a, b)]] -= 1.0
            rows.append(row)
        else:                  # f_l = d_l
            row = np.zeros(n)
            row[idx[("f", l)]] = 1.0
            row[idx[("d", l)]] = -1.0
            rows.append(row)
    A = np.array(rows) if rows else np.zeros((0, n))
    b = np.zeros(A.shape[0])
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    for a, bb in mvs:
        hi[idx[("q", a, bb)]] = capacity(g, (a, bb))
    return QuadraticProgram(H, c, const, A, b, lo, hi, variables, g, meas)


def solve_qp(qp: QuadraticProgram, tol: float = DEFAULT_TOL) -> FlowSolution:
    res: QPResult = solve_box_qp(qp.H, qp.c, qp.A, qp.b, qp.lo, qp.hi, tol=tol, reg=MIN_NORM_REG)
    return _solution_from(qp, res, tol)


def _solution_from(qp: QuadraticProgram, res: QPResult, tol: float) -> FlowSolution:
    x = res.x
    lf: dict[str, float] = {}
    dm: dict[str, float] = {}
    mf: dict[MovementKey, float] = {}
    binding: list[MovementKey] = []
    for i, v in enumerate(qp.variables):
        if v[0] == "f":
            lf[v[1]] = float(x[i])
        elif v[0] == "d":
            dm[v[1]] = float(x[i])
        else:
            mf[(v[1], v[2])] = float(x[i])
            if np.isfinite(qp.hi[i]) and qp.hi[i] > 0 and x[i] >= qp.hi[i] - tol * max(1.0, qp.hi[i]):
                binding.append((v[1], v[2]))
    meas = qp.measurements or MeasurementSet()
    resid: dict[tuple, float] = {}
    for l, (v, _) in meas.link_flows.items():
        resid[("link_flow", l)] = lf[l] - v
    for l, (v, _) in meas.demands.items():
        resid[("demand", l)] = dm[l] - v
    for (a, b), (r, _) in meas.turn_ratios.items():
        resid[("turn_ratio", a, b)] = mf[(a, b)] - r * lf[a]
    ratios, undetermined = _ratios(qp.network, lf, mf, tol) if qp.network else ({}, set())
    cons = float(np.abs(qp.A @ x - qp.b).max()) if qp.A.shape[0] else 0.0
    return FlowSolution(lf, dm, mf, ratios, undetermined, resid, qp.objective(x), res.kkt_residual,
                        cons, res.non_unique, sorted(binding), res.iterations)


def _ratios(g: NetworkGraph, lf, mf, tol) -> tuple[dict[MovementKey, float], set[str]]:
    out: dict[MovementKey, float] = {}
    undetermined: set[str] = set()
    for l in sorted(g.links):
        outs = g.movements_from(l)
        if not outs:
            continue
        if lf[l] > tol:
            for k in outs:
                out[k] = mf[k] / lf[l]
        else:
            undetermined.add(l)
            for k in outs:
                out[k] = 1.0 / len(outs)
    return out, undetermined


def split_ratios(sol: FlowSolution, tol: float = DEFAULT_TOL) -> dict[MovementKey, float]:
    """Calibrated ratios ``f(l,m) / f_l``.

    Links with no flow split uniformly; they are listed in
    ``sol.undetermined_ratios``.
    """
    by_link: dict[str, list[MovementKey]] = {}
    for k in sol.movement_flows:
        by_link.setdefault(k[0], []).append(k)
    out: dict[MovementKey, float] = {}
    for l, ks in by_link.items():
        fl = sol.link_flows.get(l, 0.0)
        for k in ks:
            out[k] = sol.movement_flows[k] / fl if fl > tol else 1.0 / len(ks)
    return out


def calibrate(g: NetworkGraph, meas: MeasurementSet, tol: float = DEFAULT_TOL) -> FlowSolution:
    return solve_qp(assemble_qp(g, meas), tol)


# ---------------------------------------------------------------- file formats

MEASUREMENT_KINDS = ("link_flow", "demand", "turn_ratio")


def read_measurements(path: str | Path) -> MeasurementSet:
    """Read ``kind,id_from,id_to,value,weight`` rows (blank weight means 1)."""
    lf: dict = {}
    dm: dict = {}
    tr: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["kind", "id_from", "id_to", "value", "weight"]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise MeasurementError(f"{path}: line 1: header must be {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            kind = (row["kind"] or "").strip()
            try:
                value = float(row["value"])
                weight = float(row["weight"]) if (row["weight"] or "").strip() else 1.0
            except (TypeError, ValueError):
                raise MeasurementError(f"{path}: line {lineno}: value/weight must be numbers") from None
            a = (row["id_from"] or "").strip()
            b = (row["id_to"] or "").strip()
            if kind == "link_flow":
                table, key = lf, a
            elif kind == "demand":
                table, key = dm, a
            elif kind == "turn_ratio":
                if not b:
                    raise MeasurementError(f"{path}: line {lineno}: turn_ratio needs id_to")
                table, key = tr, (a, b)
            else:
                raise MeasurementError(f"{path}: line {lineno}: unknown kind {kind!r}")
            if not a:
                raise MeasurementError(f"{path}: line {lineno}: missing id_from")
            if key in table:
                # repeated measurement: the weighted mean with summed weight has the same argmin
                old_v, old_w = table[key]
                wsum = old_w + weight
                table[key] = ((old_v * old_w + value * weight) / wsum, wsum)
            else:
                table[key] = (value, weight)
    try:
        return MeasurementSet(lf, dm, tr)
    except MeasurementError as exc:
        raise MeasurementError(f"{path}: {exc}") from None


def write_measurements(meas: MeasurementSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "id_from", "id_to", "value", "weight"])
        for l, (v, wt) in sorted(meas.link_flows.items()):
            w.writerow(["link_flow", l, "", repr(v), repr(wt)])
        for l, (v, wt) in sorted(meas.demands.items()):
            w.writerow(["demand", l, "", repr(v), repr(wt)])
        for (a, b), (v, wt) in sorted(meas.turn_ratios.items()):
            w.writerow(["turn_ratio", a, b, repr(v), repr(wt)])


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_solution(sol: FlowSolution, meas: MeasurementSet, out_dir: str | Path) -> list[Path]:
    """Write link and movement tables; ``-1`` marks a quantity not measured."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p_links = out / "solution_links.csv"
    with open(p_links, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link", "measured_flow", "calculated_flow", "measured_demand", "calculated_demand"])
        for l in sorted(sol.link_flows):
            mf = meas.link_flows.get(l, (-1, 0))[0]
            md = meas.demands.get(l, (-1, 0))[0] if l in sol.demands else -1
            cd = _fmt(sol.demands[l]) if l in sol.demands else -1
            w.writerow([l, _fmt(mf) if mf != -1 else -1, _fmt(sol.link_flows[l]),
                        _fmt(md) if md != -1 else -1, cd])
    p_mv = out / "solution_movements.csv"
    with open(p_mv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from_link", "to_link", "measured_ratio", "calculated_ratio", "calculated_flow"])
        for k in sorted(sol.movement_flows):
            mr = meas.turn_ratios.get(k, (-1, 0))[0]
            w.writerow([k[0], k[1], _fmt(mr) if mr != -1 else -1, _fmt(sol.split_ratios.get(k, 0.0)),
                        _fmt(sol.movement_flows[k])])
    p_res = out / "residuals.csv"
    with open(p_res, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "id_from", "id_to", "residual"])
        for key in sorted(sol.residuals, key=lambda t: tuple(map(str, t))):
            a = key[1]
            b = key[2] if len(key) > 2 else ""
            w.writerow([key[0], a, b, _fmt(sol.residuals[key])])
    return [p_links, p_mv, p_res]

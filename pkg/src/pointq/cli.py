"""``pointq`` command line.

Exit codes: 0 success, 1 computational failure, 2 bad input.  Set
``POINTQ_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import calibrate as cal
from . import identify as idf
from . import lpsolve as lps
from . import metrics as met
from . import network as net
from . import sim

log = logging.getLogger("pointq")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _load_network(path: str | None) -> net.NetworkGraph:
    if not path:
        raise InputError("--network is required")
    if not Path(path).is_file():
        raise InputError(f"network file not found: {path}")
    return net.load_network(path)


def _load_json(path: str | None, what: str) -> dict:
    if not path:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def _out_dir(path: str | None) -> Path:
    out = Path(path or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if hasattr(x, "tolist"):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def _finite(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


# ---------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    g = _load_network(args.network)
    rep = net.validate_network(g)
    print(rep)
    return EXIT_OK if rep.ok else EXIT_INPUT


def cmd_calibrate(args) -> int:
    g = _load_network(args.network)
    if not args.measurements or not Path(args.measurements).is_file():
        raise InputError(f"measurements file not found: {args.measurements}")
    meas = cal.read_measurements(args.measurements)
    sol = cal.calibrate(g, meas, tol=args.tol)
    out = _out_dir(args.out)
    cal.write_solution(sol, meas, out)
    _dump({"objective": sol.objective_value, "kkt_residual": sol.kkt_residual,
           "conservation_residual": sol.conservation_residual, "non_unique": sol.non_unique,
           "iterations": sol.iterations, "undetermined_ratios": sorted(sol.undetermined_ratios),
           "max_abs_residual": max((abs(v) for v in sol.residuals.values()), default=0.0)},
          out / "calibration_summary.json")
    print(f"objective {sol.objective_value:.6g}  conservation residual {sol.conservation_residual:.3g}"
          + ("  (solution not unique)" if sol.non_unique else ""))
    return EXIT_OK


def cmd_identify(args) -> int:
    g = _load_network(args.network)
    measured: dict[str, float] = {}
    ratios: dict = {}
    if args.measurements:
        if not Path(args.measurements).is_file():
            raise InputError(f"measurements file not found: {args.measurements}")
        meas = cal.read_measurements(args.measurements)
        measured = {k: v for k, (v, _w) in meas.link_flows.items()}
        ratios = {k: v for k, (v, _w) in meas.turn_ratios.items()}
    if ratios:
        # a known ratio is used through the movement arcs of every turn out of its link
        fg = net.augment_turn_movements(g, sorted({k for l, _ in ratios for k in g.movements_from(l)}))
    else:
        fg = net.augment_with_super_node(g)
    rep = idf.analyze(fg, measured, ratios or None)
    out = _out_dir(args.out)
    idf.write_report(rep, fg, out)
    vmt = rep.vmt
    _dump({"counts": {s: rep.count(s) for s in (idf.MEASURED, idf.IDENTIFIED, idf.UNDETERMINED)},
           "required_additional_count": rep.required_additional_count,
           "suggested_measurements": rep.suggested_measurements,
           "vmt": {"measured": vmt.measured, "upper": _finite(vmt.upper), "lower": vmt.lower,
                   "estimate": _finite(vmt.estimate), "half_width": _finite(vmt.half_width),
                   "unbounded": vmt.unbounded}},
          out / "identify_summary.json")
    print(f"{rep.count(idf.MEASURED)} measured, {rep.count(idf.IDENTIFIED)} identified, "
          f"{rep.count(idf.UNDETERMINED)} undetermined; "
          f"{rep.required_additional_count} more measurements needed")
    return EXIT_OK


def cmd_divert(args) -> int:
    g = _load_network(args.network)
    doc = _load_json(args.scenario, "scenario")
    if "route" not in doc:
        raise InputError(f"{args.scenario}: missing field 'route'")
    route = [str(x) for x in doc["route"]]
    if args.measurements:
        sol = cal.calibrate(g, cal.read_measurements(args.measurements), tol=args.tol)
        baseline = dict(sol.movement_flows)
    elif doc.get("baseline"):
        baseline = {(str(e["from"]), str(e["to"])): float(e["flow"]) for e in doc["baseline"]}
    else:
        if not g.demands:
            raise InputError("no baseline: give --measurements, a 'baseline' list or network demands")
        baseline = {}
        for d in g.demands:
            for k, v in net.steady_state_flows(g, d).movement_flows.items():
                baseline[k] = baseline.get(k, 0.0) + v
    if doc.get("retime"):
        res = lps.max_retimed_diversion(g, baseline, route, doc.get("budget_mode", "stage"))
    else:
        res = lps.max_simple_diversion(g, baseline, route)
    out = _out_dir(args.out)
    _dump(res.to_dict(), out / "diversion.json")
    print(f"maximum diversion {res.optimal_diversion:.6f} vph")
    return EXIT_OK


def _scenario(args) -> sim.Scenario:
    if not args.scenario:
        raise InputError("--scenario is required")
    if not Path(args.scenario).is_file():
        raise InputError(f"scenario file not found: {args.scenario}")
    g = _load_network(args.network) if args.network else None
    sc = sim.load_scenario(args.scenario, g)
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    if sc.factors and sc.factors != [1.0]:
        log.info("scenario has a loading schedule; simulate ignores it (use sweep)")
    elog = sim.run(sc.network, sc.demands, sc.controller, sc.horizon, sc.seed, sc.options)
    out = _out_dir(args.out)
    elog.write_csv(out / "events.csv")
    print(f"{len(elog)} events written to {out / 'events.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    factors = sc.factors or [1.0]
    if factors == [1.0]:
        elog = sim.run(sc.network, sc.demands, sc.controller, sc.horizon, sc.seed, sc.options)
    else:
        elog = sim.loading_sweep(sc.network, sc.demands, sc.controller, factors, sc.step_hours,
                                 sc.seed, sc.options)
    out = _out_dir(args.out)
    elog.write_csv(out / "events.csv")
    if len(factors) > 1:
        rows = mqd_table(elog, sc.network)
        with open(out / "mqd.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gamma", "start", "end", "arrival_rate", "departure_rate", "mean_n", "final_n",
                        "final_w"])
            for r in rows:
                w.writerow([r["gamma"], f"{r['start']:.1f}", f"{r['end']:.1f}", f"{r['arrival_rate']:.3f}",
                            f"{r['departure_rate']:.3f}", f"{r['mean_n']:.3f}", r["final_n"], r["final_w"]])
    print(f"{len(elog)} events over {len(elog.segments)} step(s) written to {out}")
    return EXIT_OK


def mqd_table(elog: sim.EventLog, g: net.NetworkGraph, bin: float = 60.0) -> list[dict]:
    """Per loading step: rates and counts over the second half of the step."""
    ms = met.macro_series(elog, g, bin=bin, end=elog.horizon)
    rows = []
    for label, a, b in elog.segments:
        mid = 0.5 * (a + b)
        idx = [j for j, t in enumerate(ms.times) if mid < t <= b + 1e-9]
        if not idx:
            continue
        k = len(idx)
        rows.append({"gamma": label, "start": a, "end": b,
                     "arrival_rate": sum(ms.e[j] for j in idx) / k,
                     "departure_rate": sum(ms.d[j] for j in idx) / k,
                     "mean_n": sum(ms.n[j] for j in idx) / k,
                     "final_n": ms.n[idx[-1]], "final_w": ms.w[idx[-1]]})
    return rows


def cmd_metrics(args) -> int:
    g = _load_network(args.network)
    if not args.events or not Path(args.events).is_file():
        raise InputError(f"event log not found: {args.events}")
    events = lambda: sim.read_events(args.events)
    out = _out_dir(args.out)
    lengths = {l: g.links[l].length for l in g.links}
    summary: dict = {}

    end = 0.0
    for e in events():
        end = e.time
    horizon = args.horizon or end

    try:
        sp = met.vmt_vht(events(), g, hours=horizon / 3600.0)
        summary["speed"] = asdict(sp)
    except met.MetricsError as exc:
        summary["speed"] = {"error": str(exc)}
    vt, vl = met.vmt_two_ways(events(), lengths)
    summary["vmt_check"] = {"from_trips": vt, "from_links": vl}

    if args.entry and args.exit:
        tt = met.route_travel_times(events(), args.entry, args.exit)
        summary["travel_time"] = {"entry": tt.entry, "exit": tt.exit, "count": len(tt.samples),
                                  "mean": tt.mean, "std": tt.std, "band": tt.band,
                                  "within_band": tt.within_band, "flags": tt.flags}
        with open(out / "travel_times.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["vehicle", "start", "travel_time"])
            for v, t0, t in tt.samples:
                w.writerow([v, f"{t0:.6f}", f"{t:.6f}"])

    eg = met.excess_green(events(), end=horizon)
    with open(out / "excess_green.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from_link", "to_link", "green_time", "excess"])
        for (a, b), e in eg.per_phase.items():
            w.writerow([a, b, f"{eg.green_time[(a, b)]:.6f}", f"{e:.6f}"])
    with open(out / "excess_green_cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["excess", "F"])
        for x, f in eg.cdf():
            w.writerow([f"{x:.6f}", f"{f:.6f}"])
    summary["excess_green"] = {"phases": len(eg.per_phase), "never_green": [list(k) for k in eg.never_green]}

    ms = met.macro_series(events(), g, bin=args.bin, end=horizon)
    with open(out / "macro_series.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "e", "a", "d", "cum_e", "cum_a", "cum_d", "w", "n"])
        for row in zip(ms.times, ms.e, ms.a, ms.d, ms.cum_e, ms.cum_a, ms.cum_d, ms.w, ms.n):
            w.writerow([f"{row[0]:.1f}", *(f"{x:.3f}" for x in row[1:4]), *row[4:]])

    qs = met.queue_series(events(), bin=args.bin, end=horizon)
    with open(out / "queue_series.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "queued", "outside", "total"])
        for t, q, o in zip(qs.times, qs.queued, qs.outside):
            w.writerow([f"{t:.1f}", q, o, q + o])
    summary["average_total_queue"] = met.average_total_queue(events(), 0.0, horizon)

    window = args.window or (0.25 * horizon, horizon)
    try:
        summary["little"] = asdict(met.littles_law(events(), g, tuple(window)))
    except met.MetricsError as exc:
        summary["little"] = {"error": str(exc)}

    try:
        pts = met.mfd_aggregate(events(), g, bin=args.mfd_bin, end=horizon)
        with open(out / "mfd.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "flow", "occupancy"])
            for p in pts:
                w.writerow([f"{p.time:.1f}", f"{p.flow:.6f}", f"{p.occupancy:.6f}"])
    except met.MetricsError as exc:
        summary["mfd"] = {"error": str(exc)}
    _dump(summary, out / "summary.json")
    print(f"metrics written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pointq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *flags):
        if "network" in flags:
            sp.add_argument("--network", help="network JSON")
        if "measurements" in flags:
            sp.add_argument("--measurements", help="measurement CSV (kind,id_from,id_to,value,weight)")
        if "scenario" in flags:
            sp.add_argument("--scenario", help="scenario JSON")
        if "out" in flags:
            sp.add_argument("--out", default=".", help="output directory")
        if "seed" in flags:
            sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        if "tol" in flags:
            sp.add_argument("--tol", type=float, default=cal.DEFAULT_TOL, help="solver tolerance")

    sp = sub.add_parser("validate", help="check a network file")
    common(sp, "network")
    sp.set_defaults(func=cmd_validate)
    sp = sub.add_parser("calibrate", help="fit flows to measurements")
    common(sp, "network", "measurements", "out", "tol")
    sp.set_defaults(func=cmd_calibrate)
    sp = sub.add_parser("identify", help="which flows the measured links determine")
    common(sp, "network", "measurements", "out")
    sp.set_defaults(func=cmd_identify)
    sp = sub.add_parser("divert", help="largest extra flow along a route")
    common(sp, "network", "measurements", "scenario", "out", "tol")
    sp.set_defaults(func=cmd_divert)
    sp = sub.add_parser("simulate", help="run the event simulator")
    common(sp, "network", "scenario", "out", "seed")
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("sweep", help="stepped demand loading")
    common(sp, "network", "scenario", "out", "seed")
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("metrics", help="summarize an event log")
    common(sp, "network", "out")
    sp.add_argument("--events", help="event log CSV")
    sp.add_argument("--entry", help="route entry link for travel times")
    sp.add_argument("--exit", help="route exit link for travel times")
    sp.add_argument("--bin", type=float, default=met.DEFAULT_BIN, help="series bin width, s")
    sp.add_argument("--mfd-bin", type=float, default=300.0, help="MFD bin width, s")
    sp.add_argument("--horizon", type=float, default=None, help="end of the analysed period, s")
    sp.add_argument("--window", type=float, nargs=2, default=None, metavar=("START", "END"),
                    help="Little's-law analysis window, s")
    sp.set_defaults(func=cmd_metrics)
    return p


INPUT_ERRORS = (InputError, net.NetworkError, cal.MeasurementError, sim.SimError, OSError)
FAILURES = (idf.IdentifyError, lps.DiversionError, lps.LPError, met.MetricsError, ArithmeticError,
            RuntimeError, ValueError)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("POINTQ_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FAILURES as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

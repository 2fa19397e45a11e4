import random

import numpy as np
import pytest
from scipy.optimize import minimize

from pointq import fixtures as F
from pointq import network as net
from pointq.calibrate import (MeasurementError, MeasurementSet, assemble_qp, calibrate, read_measurements,
                              split_ratios, write_measurements, write_solution)
from pointq.qp import QPError, solve_box_qp


def test_chain_single_measurement_propagates():
    sol = calibrate(F.chain(), MeasurementSet({"mid": (600.0, 1.0)}))
    for l in ("in", "mid", "out"):
        assert sol.link_flows[l] == pytest.approx(600.0, abs=1e-8)
    assert sol.demands["in"] == pytest.approx(600.0, abs=1e-8)
    assert sol.conservation_residual <= 1e-8


def test_conflicting_measurements_split_residual(fixtures_dir):
    meas = read_measurements(fixtures_dir / "chain_duplicates.csv")
    sol = calibrate(F.chain(), meas)
    assert sol.link_flows["mid"] == pytest.approx(110.0, abs=1e-8)
    assert sol.residuals[("link_flow", "in")] == pytest.approx(10.0, abs=1e-8)
    assert sol.residuals[("link_flow", "out")] == pytest.approx(-10.0, abs=1e-8)
    assert sol.objective_value == pytest.approx(200.0, abs=1e-6)


def test_weights_shift_the_compromise():
    meas = MeasurementSet({"in": (100.0, 3.0), "out": (120.0, 1.0)})
    sol = calibrate(F.chain(), meas)
    assert sol.link_flows["mid"] == pytest.approx(105.0, abs=1e-8)


def test_repeated_rows_merge_to_weighted_mean(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("kind,id_from,id_to,value,weight\nlink_flow,mid,,100,1\nlink_flow,mid,,130,2\n")
    meas = read_measurements(p)
    assert meas.link_flows["mid"] == (120.0, 3.0)


def test_capacity_bound_binds():
    sol = calibrate(F.chain(), MeasurementSet({"mid": (2500.0, 1.0)}))
    assert sol.link_flows["mid"] == pytest.approx(1800.0, abs=1e-6)
    assert ("in", "mid") in sol.binding


def test_ratio_measurements_recover_split():
    g = F.two_approach()
    meas = MeasurementSet({"a": (500.0, 1.0), "d": (300.0, 1.0)}, {},
                          {("a", "f"): (0.6, 1.0), ("d", "f"): (0.5, 1.0)})
    sol = calibrate(g, meas)
    assert sol.link_flows["f"] == pytest.approx(450.0, abs=1e-6)
    assert split_ratios(sol)[("a", "f")] == pytest.approx(0.6, abs=1e-8)
    assert "e" not in sol.undetermined_ratios


def test_unmeasured_flow_is_flagged_non_unique():
    sol = calibrate(F.two_approach(), MeasurementSet({"a": (500.0, 1.0), "d": (300.0, 1.0)}))
    assert sol.non_unique


@pytest.mark.parametrize("meas,msg", [
    (lambda: MeasurementSet({"nope": (1.0, 1.0)}), "unknown link"),
    (lambda: MeasurementSet({}, {"mid": (1.0, 1.0)}), "non-entry"),
    (lambda: MeasurementSet({}, {}, {("in", "out"): (0.5, 1.0)}), "unknown movement"),
])
def test_bad_measurements(meas, msg):
    with pytest.raises(MeasurementError, match=msg):
        assemble_qp(F.chain(), meas())


def test_measurement_validation():
    with pytest.raises(MeasurementError):
        MeasurementSet({"mid": (1.0, 0.0)})
    with pytest.raises(MeasurementError):
        MeasurementSet({}, {}, {("in", "mid"): (1.5, 1.0)})


def test_bad_csv(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("kind,id_from,value\n")
    with pytest.raises(MeasurementError, match="line 1"):
        read_measurements(p)
    p.write_text("kind,id_from,id_to,value,weight\nspeed,mid,,1,\n")
    with pytest.raises(MeasurementError, match="line 2"):
        read_measurements(p)


def test_measurement_round_trip(tmp_path):
    meas = MeasurementSet({"mid": (600.25, 2.0)}, {"in": (10.0, 1.0)}, {("in", "mid"): (1.0, 0.5)})
    write_measurements(meas, tmp_path / "m.csv")
    assert read_measurements(tmp_path / "m.csv") == meas


def test_write_solution_marks_unmeasured(tmp_path):
    meas = MeasurementSet({"mid": (600.0, 1.0)})
    paths = write_solution(calibrate(F.chain(), meas), meas, tmp_path)
    rows = paths[0].read_text().splitlines()
    assert rows[0] == "link,measured_flow,calculated_flow,measured_demand,calculated_demand"
    assert "in,-1,600.000000,-1,600.000000" in rows


def test_qp_matches_generic_solver_on_random_box_qps():
    rng = np.random.default_rng(4)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(0, n))
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.1 * np.eye(n)
        c = rng.normal(size=n) * 5
        lo = np.zeros(n)
        hi = rng.uniform(1, 4, n)
        x0 = rng.uniform(0, 1, n) * hi
        A = rng.normal(size=(m, n))
        b = A @ x0
        res = solve_box_qp(H, c, A, b, lo, hi, x0=x0)
        cons = [{"type": "eq", "fun": lambda x, A=A, b=b: A @ x - b}] if m else []
        ref = minimize(lambda x: 0.5 * x @ H @ x + c @ x, x0, jac=lambda x: H @ x + c, bounds=list(zip(lo, hi)),
                       constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        assert res.objective <= ref.fun + 1e-6 * max(1.0, abs(ref.fun))
        assert np.all(res.x >= lo - 1e-12) and np.all(res.x <= hi + 1e-12)
        if m:
            assert np.abs(A @ res.x - b).max() <= 1e-8


def test_qp_rejects_bad_inputs():
    with pytest.raises(QPError):
        solve_box_qp(np.eye(1), [0.0], np.zeros((0, 1)), [], [1.0], [0.0])
    with pytest.raises(QPError):
        solve_box_qp(np.eye(1), [0.0], np.zeros((0, 1)), [], [0.0], [1.0], x0=[2.0])


def test_noisy_corridor_conserves():
    from test_acceptance import random_corridor
    rng = random.Random(1)
    for _ in range(10):
        g = random_corridor(rng)
        truth = net.steady_state_flows(g, g.demands[0])
        meas = MeasurementSet({l: (v * rng.uniform(0.9, 1.1), 1.0) for l, v in truth.link_flows.items()})
        sol = calibrate(g, meas)
        for n in g.nodes:
            inflow = sum(sol.link_flows[l] for l in g.incoming(n))
            outflow = sum(sol.link_flows[l] for l in g.outgoing(n))
            assert inflow == pytest.approx(outflow, abs=1e-8)


def test_weight_scaling_and_zero_objective_bound():
    g = F.two_approach()
    meas = MeasurementSet({"a": (500.0, 1.0), "d": (300.0, 2.0), "f": (470.0, 1.0), "e": (310.0, 0.5)})
    sol = calibrate(g, meas)
    scaled = calibrate(g, meas.scaled(7.5))
    for l in g.links:
        assert scaled.link_flows[l] == pytest.approx(sol.link_flows[l], abs=1e-7)
    qp = assemble_qp(g, meas)
    assert sol.objective_value <= qp.objective(np.zeros(len(qp.variables)))


def test_solution_independent_of_variable_order():
    from test_acceptance import random_corridor
    g = random_corridor(random.Random(5), k=3)
    truth = net.steady_state_flows(g, g.demands[0])
    meas = MeasurementSet({l: (v * 1.03, 1.0) for l, v in truth.link_flows.items() if l.startswith("X")}
                          | {"M0": (truth.link_flows["M0"], 1.0)},
                          {}, {k: (r, 1.0) for k, r in g.demands[0].turn_ratios.items()})
    qp = assemble_qp(g, meas)
    ref = solve_box_qp(qp.H, qp.c, qp.A, qp.b, qp.lo, qp.hi).x
    perm = np.random.default_rng(0).permutation(len(qp.variables))
    res = solve_box_qp(qp.H[np.ix_(perm, perm)], qp.c[perm], qp.A[:, perm], qp.b, qp.lo[perm], qp.hi[perm])
    assert np.allclose(res.x, ref[perm], atol=1e-7)

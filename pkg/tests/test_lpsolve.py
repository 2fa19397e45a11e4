import numpy as np
import pytest

from oracles import vertex_enumeration
from pointq import fixtures as F
from pointq import network as net
from pointq.lpsolve import (INFEASIBLE, OPTIMAL, UNBOUNDED, DiversionError, LinearProgram,
                            check_retimed_plan, max_retimed_diversion, max_simple_diversion, solve_lp)


def baseline(g):
    return net.steady_state_flows(g, g.demands[0]).movement_flows


def test_textbook_lp():
    # max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18
    lp = LinearProgram([3, 5], A_ub=[[1, 0], [0, 2], [3, 2]], b_ub=[4, 12, 18], sense="max")
    res = solve_lp(lp)
    assert res.status == OPTIMAL
    assert res.value == pytest.approx(36.0, abs=1e-12)
    assert np.allclose(res.x, [2, 6])


def test_equalities_and_free_variables():
    lp = LinearProgram([1, 1], A_eq=[[1, -1]], b_eq=[3], lo=[-np.inf, -5], hi=[np.inf, np.inf])
    res = solve_lp(lp)
    # x = y + 3 so the objective is 2y + 3, smallest at y = -5
    assert res.status == OPTIMAL and res.value == pytest.approx(-7.0)
    assert np.allclose(res.x, [-2, -5])


def test_unbounded_ray_certificate():
    lp = LinearProgram([1, 1], A_ub=[[1, -1]], b_ub=[1], sense="max")
    res = solve_lp(lp)
    assert res.status == UNBOUNDED
    d = res.ray
    assert d @ lp.c > 0
    assert np.all(lp.A_ub @ d <= 1e-12) and np.all(d >= -1e-12)


def test_infeasible_certificate():
    lp = LinearProgram([1, 0], A_ub=[[1, 1]], b_ub=[1], lo=[1, 1])
    res = solve_lp(lp)
    assert res.status == INFEASIBLE
    assert res.farkas is not None
    assert res.infeasibility > 0


def test_lp_input_validation():
    with pytest.raises(ValueError):
        LinearProgram([1], A_ub=[[1]], b_ub=[1, 2])
    with pytest.raises(ValueError):
        LinearProgram([1], lo=[2], hi=[1])
    with pytest.raises(ValueError):
        LinearProgram([1], sense="maximize")


def test_degenerate_lps_agree_with_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(2, 5))
        A_ub = rng.integers(0, 2, (4, n)).astype(float)   # many ties and redundant rows
        b_ub = rng.integers(0, 3, 4).astype(float)
        c = rng.integers(-2, 3, n).astype(float)
        lo, hi = np.zeros(n), np.full(n, 3.0)
        st, val = vertex_enumeration(c, np.zeros((0, n)), [], A_ub, b_ub, lo, hi, "max")
        res = solve_lp(LinearProgram(c, A_ub=A_ub, b_ub=b_ub, lo=lo, hi=hi, sense="max"))
        assert res.status == st
        assert res.value == pytest.approx(val, abs=1e-9)


def test_simple_diversion_is_min_slack():
    g = F.grid()
    res = max_simple_diversion(g, baseline(g), ["W1", "E12", "X2"])
    # capacity 840; W1>E12 carries 280, E12>X2 carries 0.7 * 400 = 280
    assert res.optimal_diversion == pytest.approx(840 - 280)
    assert res.binding_movements == [("E12", "X2"), ("W1", "E12")]


def test_retimed_diversion_dominates_and_checks_out():
    g = F.grid()
    base = baseline(g)
    route = ["W1", "E12", "X2"]
    simple = max_simple_diversion(g, base, route)
    retimed = max_retimed_diversion(g, base, route)
    assert retimed.optimal_diversion >= simple.optimal_diversion
    assert check_retimed_plan(g, base, route, retimed) == []
    # cross streams still need their baseline flow, so the gain is finite
    assert retimed.optimal_diversion < 1800


def test_phase_sum_budget_is_no_looser():
    # phase_sum charges both phases of a stage, so halve the greens to keep the plan feasible
    g = F.grid(demand=150.0, ew_green=14.0, ns_green=14.0)
    base = baseline(g)
    route = ["W1", "E12", "X2"]
    stage = max_retimed_diversion(g, base, route, "stage")
    psum = max_retimed_diversion(g, base, route, "phase_sum")
    assert psum.optimal_diversion <= stage.optimal_diversion + 1e-9


def test_check_retimed_plan_catches_overflow():
    g = F.grid()
    base = baseline(g)
    route = ["W1", "E12", "X2"]
    res = max_retimed_diversion(g, base, route)
    res.optimal_diversion += 50.0
    assert check_retimed_plan(g, base, route, res)


def test_diversion_errors():
    g = F.grid()
    with pytest.raises(DiversionError):
        max_simple_diversion(g, baseline(g), ["W1", "X2"])
    over = {k: 2000.0 for k in g.allowed_movements()}
    with pytest.raises(DiversionError):
        max_simple_diversion(g, over, ["W1", "E12", "X2"])
    with pytest.raises(DiversionError):
        max_retimed_diversion(g, over, ["W1", "E12", "X2"])


def test_result_serialises():
    g = F.grid()
    d = max_retimed_diversion(g, baseline(g), ["W1", "E12", "X2"]).to_dict()
    assert {"optimal_diversion", "binding_movements", "slacks", "timing_plans"} <= set(d)
    assert len(d["timing_plans"]) == 4

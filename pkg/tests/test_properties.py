import random

from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import nullspace_identifiable, random_conserving_flow, random_strong_graph
from pointq import fixtures as F
from pointq import identify as idf
from pointq import metrics as met
from pointq import sim

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(min_value=0.0, max_value=1.0))
def test_identified_set_matches_linear_algebra(seed, density):
    rng = random.Random(seed)
    fg = random_strong_graph(rng)
    measured = [a for a in fg.arcs if rng.random() < density]
    rep = idf.identifiable_links(fg, measured)
    oracle = nullspace_identifiable(fg, measured)
    assert {a: rep.status[a] != idf.UNDETERMINED for a in oracle} == oracle


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_true_flow_lies_inside_its_bounds(seed):
    rng = random.Random(seed)
    fg = random_strong_graph(rng, max_nodes=8, max_arcs=16)
    flow = random_conserving_flow(fg, rng)
    measured = {a: flow[a] for a in fg.arcs if rng.random() < 0.5}
    for a, (lo, hi) in idf.flow_bounds(fg, measured).items():
        assert lo - 1e-6 <= flow[a] <= hi + 1e-6


@settings(max_examples=15, deadline=None)
@given(seeds, st.sampled_from(["deterministic", "poisson"]), st.sampled_from(["constant", "exponential"]))
def test_simulation_bookkeeping(seed, arrivals, travel):
    g = F.grid(demand=500.0, storage=10)
    log = sim.run(g, horizon=900.0, seed=seed % 1000, options=sim.SimOptions(arrivals, travel))
    ms = met.macro_series(log, g, bin=60.0, end=900.0)
    assert all(n >= 0 and w >= 0 for n, w in zip(ms.n, ms.w))
    assert ms.n == ms.n_occupancy
    lengths = {l: g.links[l].length for l in g.links}
    a, b = met.vmt_two_ways(log, lengths)
    assert a == b

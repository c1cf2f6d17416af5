import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import fractional_pcm, root_context
from pcmbnb.bnb import solve
from pcmbnb.milp import build_milp
from pcmbnb.model import generate_instance, tiny_instance
from pcmbnb.rules import (EPS, MostFractional, PseudocostStore, ReliabilityPseudocost,
                          StrongBranching, most_fractional, product_score, pseudocost_score)
from pcmbnb.simplex import INFEASIBLE, LpSolver
from test_simplex import make_lp

fracs = st.lists(st.floats(0.001, 0.999), min_size=1, max_size=30)


def test_most_fractional_examples():
    assert most_fractional([0, 1], np.array([0.5, 0.1])).chosen_column == 0
    assert most_fractional([3, 5], np.array([0, 0, 0, 0.3, 0, 0.3])).chosen_column == 3


@given(fracs)
def test_most_fractional_maximizes_fractionality(x):
    x = np.array(x)
    d = most_fractional(np.arange(len(x)), x)
    f = np.minimum(x, 1 - x)
    assert f[d.chosen_column] == f.max()
    assert d.chosen_column == int(np.flatnonzero(f == f.max())[0])


@given(fracs)
def test_pseudocost_cold_store_is_fractional_product(x):
    x = np.array(x)
    store = PseudocostStore(len(x))
    d = pseudocost_score(np.arange(len(x)), x, store)
    assert np.allclose(d.scores, np.maximum(1 - x, EPS) * np.maximum(x, EPS))
    f = np.minimum(x, 1 - x)
    # x(1-x) is increasing in min(x, 1-x), so the argmax agrees with most-fractional
    assert f[d.chosen_column] == pytest.approx(f.max())


def test_recorded_gains_win():
    x = np.array([0.4, 0.45, 0.3])
    store = PseudocostStore(3)
    store.record(0, "up", 10 * 0.6, 0.6)
    store.record(0, "down", 10 * 0.4, 0.4)
    # hand computation: col 0 -> (10*0.6)*(10*0.4) = 24; col 1 -> 0.55*0.45; col 2 -> 0.7*0.3
    d = pseudocost_score([0, 1, 2], x, store)
    assert d.scores == pytest.approx([24.0, 0.2475, 0.21])
    assert d.chosen_column == 0


@given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=10),
       st.lists(st.floats(0.0, 50.0), min_size=20, max_size=20), st.floats(0.01, 100.0))
@settings(max_examples=60)
def test_pseudocost_argmax_invariant_to_gain_scale(x, gains, c):
    x = np.array(x)
    n = len(x)
    a, b = PseudocostStore(n), PseudocostStore(n)
    for j in range(n):
        for k, direction in enumerate(("up", "down")):
            g = gains[(2 * j + k) % len(gains)] + 1.0
            a.record(j, direction, g, 1.0)
            b.record(j, direction, c * g, 1.0)
    da, db = pseudocost_score(np.arange(n), x, a), pseudocost_score(np.arange(n), x, b)
    assert np.allclose(db.scores, c * c * da.scores, rtol=1e-9)
    assert da.chosen_column == db.chosen_column or \
        np.isclose(da.scores[da.chosen_column], da.scores[db.chosen_column], rtol=1e-12)


def test_store_defaults_and_reliability():
    s = PseudocostStore(4)
    assert np.all(s.avg_up([0, 1]) == 1.0) and np.all(s.avg_down([2]) == 1.0)
    s.record(1, "up", 3.0, 0.5)
    s.record(1, "up", 1.0, 0.5)
    s.record(1, "down", 2.0, 0.25)
    assert s.avg_up([1])[0] == pytest.approx(4.0) and s.avg_down([1])[0] == pytest.approx(8.0)
    assert list(s.reliability([0, 1])) == [0, 1]


def test_product_score_floor():
    assert product_score(0.0, 5.0) == pytest.approx(EPS * 5.0)


KNAP = dict(c=[-5, -4, -3, -6], A=[[2, 3, 1, 4]], sense="L", rhs=[4.5], lb=[0] * 4, ub=[1] * 4,
            binary=[True] * 4)


def test_strong_branching_matches_full_child_resolves():
    lp = make_lp(**KNAP)
    ctx = root_context(lp)
    assert len(ctx.candidates) >= 1
    d = StrongBranching(iter_cap=1000).select(ctx)
    best, best_j = -1.0, None
    for j in ctx.candidates:
        gains = []
        for val in (0.0, 1.0):
            lb, ub = lp.var_lb.copy(), lp.var_ub.copy()
            lb[j] = ub[j] = val
            r = LpSolver(lp).solve(lb, ub)
            gains.append(1e12 if r.status == INFEASIBLE else r.objective - ctx.lp.objective)
        score = max(gains[1], EPS) * max(gains[0], EPS)
        if score > best + 1e-12:
            best, best_j = score, j
    assert d.chosen_column == best_j


def test_single_candidate_strong_branching_records_probes():
    prob = build_milp(tiny_instance(2, 2, 0))
    for seed in range(200):
        prob = build_milp(tiny_instance(2, 2, seed))
        ctx = root_context(prob)
        if len(ctx.candidates) == 1:
            break
    else:
        pytest.skip("no single-candidate root found")
    j = int(ctx.candidates[0])
    d = StrongBranching().select(ctx)
    assert d.chosen_column == j
    s = ctx.store
    assert s.up_count[j] + s.down_count[j] >= 1 or d.prune


def test_double_cutoff_signals_prune():
    # x0 fractional; both x0=0 and x0=1 make the rows infeasible
    lp = make_lp([1, 0], [[1, 0], [1, 1], [-1, 1]], "EGL", [0.5, 0.5, 0.6],
                 [0, 0], [1, 1], [True, False])
    ctx = root_context(lp)
    assert list(ctx.candidates) == [0]
    assert StrongBranching().select(ctx).prune
    assert ReliabilityPseudocost().select(ctx).prune


@pytest.fixture(scope="module")
def pcm24():
    return fractional_pcm(min_candidates=12)


def test_expert_cold_start_probes_most_fractional(pcm24):
    ctx = root_context(pcm24)
    x = ctx.x[ctx.candidates]
    frac = np.minimum(x, 1 - x)
    order = np.lexsort((ctx.candidates, -frac))[:8]
    expected = set(int(c) for c in ctx.candidates[order])
    ReliabilityPseudocost().select(ctx)
    touched = {int(j) for j in range(pcm24.n_vars)
               if ctx.store.up_count[j] + ctx.store.down_count[j] > 0}
    assert touched <= expected
    probes = [e for e in ctx.state.lp_log if e[1] == "probe"]
    assert len(probes) == 16


def test_expert_with_reliable_store_is_pseudocost(pcm24):
    ctx = root_context(pcm24)
    rng = np.random.default_rng(0)
    for j in ctx.candidates:
        for _ in range(4):
            ctx.store.record(int(j), "up", rng.uniform(1, 10), 1.0)
            ctx.store.record(int(j), "down", rng.uniform(1, 10), 1.0)
    before = ctx.state.work_units
    d = ReliabilityPseudocost().select(ctx)
    assert ctx.state.work_units == before  # no probes
    assert d.chosen_column == pseudocost_score(ctx.candidates, ctx.x, ctx.store).chosen_column


def test_rules_are_deterministic(pcm24):
    for rule in (MostFractional, ReliabilityPseudocost):
        a = rule().select(root_context(pcm24))
        b = rule().select(root_context(pcm24))
        assert a.chosen_column == b.chosen_column
        assert np.array_equal(a.scores, b.scores)


def test_expert_vs_mostfrac_nodes_regression():
    """Expert explores no more nodes than most-fractional on most small instances."""
    base = tiny_instance(2, 3, 0)
    wins = 0
    for seed in range(50):
        prob = build_milp(generate_instance(base, 0.1, seed))
        e, _ = solve(prob, ReliabilityPseudocost())
        m, _ = solve(prob, MostFractional())
        wins += e.n_explored <= m.n_explored
    assert wins / 50 >= 0.70

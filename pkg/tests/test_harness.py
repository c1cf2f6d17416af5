import csv
import math

import numpy as np
import pytest

from pcmbnb import harness
from pcmbnb.bnb import OPT, BranchAndBound, Limits
from pcmbnb.milp import build_milp
from pcmbnb.model import generate_instance, pjm5_base, tiny_instance
from pcmbnb.policy import PolicyNetwork, PolicyRule
from pcmbnb.rules import MostFractional, Pseudocost, ReliabilityPseudocost


@pytest.fixture(scope="module")
def pjm():
    return build_milp(generate_instance(pjm5_base(8), 0.1, 42))


def _solo(prob, net):
    return BranchAndBound(prob, PolicyRule(net)).run()


def test_identical_racers_match_solo_and_alpha_wins(pjm):
    net = PolicyNetwork.init(3)
    solo = _solo(pjm, net)
    res = harness.race(pjm, net, net.copy())
    assert res.winner == "alpha"
    assert res.work_units == solo.work_units
    assert res.objective == solo.z_primal


@pytest.mark.parametrize("seed_a,seed_b", [(0, 1), (1, 0), (2, 5)])
def test_winner_is_cheaper_solo(pjm, seed_a, seed_b):
    a, b = PolicyNetwork.init(seed_a), PolicyNetwork.init(seed_b)
    sa, sb = _solo(pjm, a), _solo(pjm, b)
    res = harness.race(pjm, a, b)
    expect = "alpha" if sa.work_units <= sb.work_units else "beta"
    assert res.winner == expect
    assert res.work_units == min(sa.work_units, sb.work_units)
    assert res.work_units <= min(sa.work_units, sb.work_units) + harness.QUANTUM
    loser = sb if expect == "alpha" else sa
    assert res.loser_progress_at_stop[0] <= loser.work_units


def test_race_objective_matches_expert(pjm):
    exp = BranchAndBound(pjm, ReliabilityPseudocost()).run()
    res = harness.race(pjm, PolicyNetwork.init(0), PolicyNetwork.init(1))
    assert abs(res.objective - exp.z_primal) <= 1e-6 * max(1.0, abs(exp.z_primal))
    assert res.winner_state.status == OPT


def test_race_without_winner(pjm):
    res = harness.race(pjm, PolicyNetwork.init(0), PolicyNetwork.init(1), Limits(nodes=1))
    assert res.winner is None and res.winner_state is None
    assert all(s.status != OPT for s in res.states.values())


def test_concurrent_race_objective(pjm):
    a, b = PolicyNetwork.init(0), PolicyNetwork.init(1)
    res = harness.race(pjm, a, b, mode="concurrent")
    det = harness.race(pjm, a, b)
    assert res.winner in ("alpha", "beta") and res.winner_state.status == OPT
    assert abs(res.objective - det.objective) <= 1e-6 * abs(det.objective)
    loser = res.states["beta" if res.winner == "alpha" else "alpha"]
    assert loser.status in (OPT, "stopped")
    with pytest.raises(ValueError):
        harness.race(pjm, a, b, mode="bogus")


def _family(n=4):
    return [(f"t{s}", build_milp(tiny_instance(3, 4, s))) for s in range(n)] + \
        [("p", build_milp(generate_instance(pjm5_base(6), 0.1, 7)))]


RULES = [("mostfrac", MostFractional), ("pscost", Pseudocost), ("expert", ReliabilityPseudocost)]


def test_bench_aggregates_and_objectives(tmp_path):
    rep = harness.bench(_family(), RULES, out=tmp_path / "r")
    assert rep.check_objectives() == []
    for agg in rep.aggregates():
        c = [r.work_units for r in rep.rows if r.rule == agg["rule"]]
        mean = sum(c) / len(c)
        assert agg["mean"] == pytest.approx(mean)
        assert agg["variance"] == pytest.approx(sum((x - mean) ** 2 for x in c) / len(c))
    exp = next(a for a in rep.aggregates() if a["rule"] == "expert")
    assert exp["speedup_vs_ref"] == pytest.approx(1.0) and exp["median_ratio"] == pytest.approx(1.0)
    rows = list(csv.DictReader(open(tmp_path / "r" / "results.csv")))
    assert len(rows) == 5 * 3
    assert [r["rule"] for r in rows[:3]] == ["mostfrac", "pscost", "expert"]
    assert (tmp_path / "r" / "summary.csv").exists() and (tmp_path / "r" / "timing.csv").exists()


def test_single_run_report_matches_trace_tail():
    prob = build_milp(tiny_instance(3, 4, 2))
    rep = harness.bench([("x", prob)], [("pscost", Pseudocost)])
    st = BranchAndBound(prob, Pseudocost()).run()
    (row,) = rep.rows
    tail = st.trace[-1]
    assert (row.work_units, row.n_explored, row.objective) == \
        (tail.work_units, tail.n_explored, tail.z_primal)


def test_bench_bytes_reproducible(tmp_path):
    a = harness.bench(_family(3), RULES, out=tmp_path / "a")
    b = harness.bench(_family(3), RULES, out=tmp_path / "b")
    for name in ("results.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert a.results_csv() == b.results_csv()


def test_bench_race_rule(pjm):
    rule = harness.RaceRule(PolicyNetwork.init(0), PolicyNetwork.init(1))
    rep = harness.bench([("p", pjm)], [("race", lambda: rule), ("expert", ReliabilityPseudocost)])
    assert rep.check_objectives() == [] and rep.rows[0].status == OPT


def test_bound_trace_export(pjm, tmp_path):
    st = BranchAndBound(pjm, Pseudocost()).run()
    harness.bound_trace_export(st, tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "work_units,z_primal,z_dual"
    rows = [ln.split(",") for ln in lines[1:]]
    assert rows[0][1] == "inf"
    work = [int(r[0]) for r in rows]
    assert all(b > a for a, b in zip(work, work[1:]))
    zp, zd = float(rows[-1][1]), float(rows[-1][2])
    assert zp - zd <= 1e-6 * max(1.0, abs(zp))
    assert math.isfinite(zp)


def test_make_rule_names(tmp_path):
    from pcmbnb import policy
    for n in harness.RULE_NAMES:
        assert harness.make_rule(n).select
    policy.save(PolicyNetwork.init(0), tmp_path / "a.net")
    assert isinstance(harness.make_rule(f"policy:{tmp_path / 'a.net'}"), PolicyRule)
    r = harness.make_rule(f"race:{tmp_path / 'a.net'},{tmp_path / 'a.net'}")
    assert isinstance(r, harness.RaceRule)
    with pytest.raises(ValueError):
        harness.make_rule("nope")

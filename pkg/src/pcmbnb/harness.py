"""Racing two policies, benchmark campaigns and trace export.

A race solves one problem with two policy networks and keeps the first
proven-optimal result. In deterministic mode the two solves advance in turns
of ``QUANTUM`` work units on one thread, and the winner is the solve that
proves optimality with fewer work units (ties go to alpha). In concurrent mode
each solve runs on its own thread and the first to finish stops the other.
"""
from __future__ import annotations

import csv
import io
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import policy
from .bnb import LIMIT, OPT, BranchAndBound, Limits, SolveState
from .milp import MilpProblem
from .rules import MostFractional, Pseudocost, ReliabilityPseudocost, StrongBranching

QUANTUM = 256
RULE_NAMES = ("mostfrac", "pscost", "strong", "expert")


@dataclass
class RaceResult:
    winner: str | None  # "alpha", "beta", or None when neither proved optimality
    winner_state: SolveState | None
    loser_progress_at_stop: tuple  # (work_units, gap) of the other solve when it stopped
    objective: float
    states: dict = field(default_factory=dict)  # racer name -> final SolveState

    @property
    def work_units(self) -> int:
        """Cost charged to the race: the winner's work, or the larger spend if no winner."""
        if self.winner_state is not None:
            return self.winner_state.work_units
        return max(s.work_units for s in self.states.values())


def _gap(st: SolveState) -> float:
    return st.z_primal - st.z_dual if math.isfinite(st.z_primal) else math.inf


def _advance(bb: BranchAndBound, target: int) -> None:
    while not bb.done and bb.state.work_units < target:
        bb.step()


def race(prob: MilpProblem, net_alpha, net_beta, limits: Limits | None = None,
         mode: str = "deterministic", quantum: int = QUANTUM) -> RaceResult:
    """Solve ``prob`` with both networks (greedy selection) and keep the first optimal result."""
    bbs = {"alpha": BranchAndBound(prob, policy.PolicyRule(net_alpha), limits),
           "beta": BranchAndBound(prob, policy.PolicyRule(net_beta), limits)}
    if mode == "deterministic":
        winner = _race_lockstep(bbs, quantum)
    elif mode == "concurrent":
        winner = _race_threads(bbs)
    else:
        raise ValueError(f"unknown race mode {mode!r}")
    states = {k: bb.state for k, bb in bbs.items()}
    if winner is None:
        best = min(states.values(), key=lambda s: (s.z_primal, _gap(s)))
        return RaceResult(None, None, (states["beta"].work_units, _gap(states["beta"])),
                          best.z_primal, states)
    loser = states["beta" if winner == "alpha" else "alpha"]
    return RaceResult(winner, states[winner], (loser.work_units, _gap(loser)),
                      states[winner].z_primal, states)


def _race_lockstep(bbs: dict, quantum: int):
    alpha, beta = bbs["alpha"], bbs["beta"]
    target = 0
    while not (alpha.done or beta.done):
        target += quantum
        _advance(alpha, target)
        _advance(beta, target)
    # one racer stopped; let the other catch up to the same work so the cheaper proof wins
    finished = [k for k in ("alpha", "beta") if bbs[k].done and bbs[k].state.status == OPT]
    if finished:
        first = min(finished, key=lambda k: bbs[k].state.work_units)
        other = bbs["beta" if first == "alpha" else "alpha"]
        budget = bbs[first].state.work_units
        while not other.done and other.state.work_units < budget:
            other.step()
    else:
        for bb in bbs.values():  # the stopped racer hit a limit; the other keeps going
            while not bb.done:
                bb.step()
    optimal = [k for k in ("alpha", "beta") if bbs[k].state.status == OPT]
    winner = min(optimal, key=lambda k: (bbs[k].state.work_units, k != "alpha"), default=None)
    for k, bb in bbs.items():
        if k != winner and not bb.done:
            bb._finish("stopped")
    return winner


def _race_threads(bbs: dict):
    stop = threading.Event()
    order: list = []
    lock = threading.Lock()

    def work(name):
        st = bbs[name].run(stop)
        if st.status == OPT:
            with lock:
                order.append(name)
            stop.set()

    threads = [threading.Thread(target=work, args=(k,)) for k in ("alpha", "beta")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return order[0] if order else None


class RaceRule:
    """Placeholder rule carrying two networks; bench runs it through :func:`race`."""

    name = "race"

    def __init__(self, net_alpha, net_beta, quantum: int = QUANTUM):
        self.net_alpha, self.net_beta, self.quantum = net_alpha, net_beta, quantum

    def select(self, ctx):  # pragma: no cover - never used as a per-node rule
        raise TypeError("a race is run with harness.race, not as a branching rule")


def make_rule(spec: str):
    """Build a rule from ``mostfrac|pscost|strong|expert|policy:PATH|race:PATH_A,PATH_B``."""
    name, _, arg = spec.partition(":")
    if name == "mostfrac":
        return MostFractional()
    if name == "pscost":
        return Pseudocost()
    if name == "strong":
        return StrongBranching()
    if name == "expert":
        return ReliabilityPseudocost()
    if name == "policy" and arg:
        return policy.PolicyRule(policy.load(arg))
    if name == "race" and arg.count(",") == 1:
        a, b = arg.split(",")
        return RaceRule(policy.load(a), policy.load(b))
    raise ValueError(f"unknown rule {spec!r}")


@dataclass
class BenchRow:
    instance: str
    rule: str
    work_units: int
    wall_seconds: float
    n_explored: int
    status: str
    objective: float
    gap: float


@dataclass
class BenchReport:
    rows: list
    rules: list

    def costs(self, rule: str) -> np.ndarray:
        return np.array([r.work_units for r in self.rows if r.rule == rule], dtype=float)

    def aggregates(self, reference: str = "expert") -> list:
        """Per rule: mean, population variance, and ratios against ``reference``."""
        out = []
        ref = self.costs(reference) if reference in self.rules else None
        for rule in self.rules:
            c = self.costs(rule)
            mean, var = float(np.mean(c)), float(np.var(c))
            if ref is not None:
                speedup = float(np.mean(ref)) / mean if mean > 0 else math.nan
                ratios = ref / np.maximum(c, 1)
                var_ratio = var / float(np.var(ref)) if np.var(ref) > 0 else math.nan
            else:
                speedup, ratios, var_ratio = math.nan, np.full(c.size, math.nan), math.nan
            out.append({"rule": rule, "n": int(c.size), "mean": mean, "variance": var,
                        "speedup_vs_ref": speedup, "variance_ratio_vs_ref": var_ratio,
                        "median_ratio": float(np.median(ratios)) if c.size else math.nan,
                        "min_ratio": float(np.min(ratios)) if c.size else math.nan,
                        "max_ratio": float(np.max(ratios)) if c.size else math.nan})
        return out

    def check_objectives(self, tol: float = 1e-6) -> list:
        """Instances whose optimal objectives disagree across rules by more than ``tol``."""
        bad = []
        for inst in dict.fromkeys(r.instance for r in self.rows):
            objs = [r.objective for r in self.rows if r.instance == inst and r.status == OPT]
            if objs and max(objs) - min(objs) > tol * max(1.0, abs(min(objs))):
                bad.append(inst)
        return bad

    def results_csv(self) -> str:
        """Per-run table without wall-clock, so identical runs give identical bytes."""
        return _csv(["instance", "rule", "work_units", "n_explored", "status", "objective", "gap"],
                    [[r.instance, r.rule, r.work_units, r.n_explored, r.status,
                      _num(r.objective), _num(r.gap)] for r in self.rows])

    def summary_csv(self) -> str:
        agg = self.aggregates()
        cols = list(agg[0].keys()) if agg else ["rule"]
        return _csv(cols, [[a[c] if isinstance(a[c], (str, int)) else _num(a[c]) for c in cols]
                           for a in agg])

    def timing_csv(self) -> str:
        return _csv(["instance", "rule", "wall_seconds"],
                    [[r.instance, r.rule, f"{r.wall_seconds:.6f}"] for r in self.rows])

    def write(self, out) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.results_csv())
        (out / "summary.csv").write_text(self.summary_csv())
        (out / "timing.csv").write_text(self.timing_csv())


def _num(v: float) -> str:
    return repr(float(v))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def run_rule(prob: MilpProblem, rule, limits: Limits | None = None) -> BenchRow:
    """Solve once with ``rule`` (or race, for a :class:`RaceRule`) and summarize."""
    t0 = time.perf_counter()
    if isinstance(rule, RaceRule):
        res = race(prob, rule.net_alpha, rule.net_beta, limits, quantum=rule.quantum)
        st = res.winner_state or min(res.states.values(), key=lambda s: (s.z_primal, _gap(s)))
        status = OPT if res.winner else LIMIT
        work = res.work_units
    else:
        st = BranchAndBound(prob, rule, limits).run()
        status, work = st.status, st.work_units
    return BenchRow("", getattr(rule, "name", "rule"), work, time.perf_counter() - t0,
                    st.n_explored, status, st.z_primal, _gap(st))


def bench(instances, rules, limits: Limits | None = None, out=None) -> BenchReport:
    """Run every rule on every instance in order.

    ``instances`` is a sequence of ``(name, MilpProblem)``; ``rules`` is a
    sequence of ``(label, factory)`` where ``factory()`` returns a fresh rule.
    """
    rows = []
    for iname, prob in instances:
        for label, factory in rules:
            row = run_rule(prob, factory(), limits)
            row.instance, row.rule = str(iname), label
            rows.append(row)
    report = BenchReport(rows, [label for label, _ in rules])
    if out is not None:
        report.write(out)
    return report


def bound_trace_export(state: SolveState, path) -> None:
    """Write ``work_units,z_primal,z_dual`` rows; infinite bounds appear as ``inf``."""
    rows = [[t.work_units, _num(t.z_primal), _num(t.z_dual)] for t in state.trace]
    Path(path).write_text(_csv(["work_units", "z_primal", "z_dual"], rows))


def full_trace_csv(state: SolveState) -> str:
    return _csv(["work_units", "wall_seconds", "z_primal", "z_dual", "n_open", "n_explored"],
                [[t.work_units, f"{t.wall_seconds:.6f}", _num(t.z_primal), _num(t.z_dual),
                  t.n_open, t.n_explored] for t in state.trace])

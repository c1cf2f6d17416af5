"""Best-bound branch and bound over binary columns with pluggable branching.

Nodes are kept in a heap keyed by (local dual bound, node id). Each processed
node solves its LP relaxation warm-started from the parent's basis, then is
pruned (infeasible or bound at or above the incumbent), fathomed (integral),
or branched on the column the rule picks: the down child (x_j = 0) is created
before the up child. There are no primal heuristics or cuts.

Work units are the deterministic cost measure: every simplex iteration
(node LPs and strong-branch probes alike) counts one, and every processed
node adds ``NODE_WORK``.
"""
from __future__ import annotations

import heapq
import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .milp import MilpProblem, Schedule
from .rules import BranchDecision, PseudocostStore
from .simplex import INFEASIBLE, OPTIMAL, LpSolver, ProbeResult, SimplexConfig, strong_branch_probe

INT_TOL = 1e-6
GAP_TOL = 1e-6
NODE_WORK = 10
TIE_REL = 1e-9

OPT = "optimal"
INFEAS = "infeasible"
LIMIT = "limit"
STOPPED = "stopped"


@dataclass(frozen=True)
class Limits:
    work_units: int | None = None
    time: float | None = None
    nodes: int | None = None
    gap: float = GAP_TOL  # relative to max(1, |z_primal|)


@dataclass
class BnbNode:
    id: int
    parent_id: int | None
    depth: int
    local_dual_bound: float
    bound_changes: tuple = ()  # ((column, lb, ub), ...) root-to-node
    warm_basis: object = None
    branch_col: int | None = None
    branch_dir: str | None = None
    branch_frac: float = 0.0  # distance x_j moved by this branch in the parent LP
    sort_key: tuple = ()

    def __lt__(self, other):
        return self.sort_key < other.sort_key


@dataclass
class TraceRow:
    work_units: int
    wall_seconds: float
    z_primal: float
    z_dual: float
    n_open: int
    n_explored: int


@dataclass
class SolveState:
    z_primal: float = math.inf
    z_dual: float = -math.inf
    incumbent: np.ndarray | None = None
    open_nodes: list = field(default_factory=list)
    n_explored: int = 0
    work_units: int = 0
    wall_time: float = 0.0
    trace: list = field(default_factory=list)
    status: str = "running"
    n_incumbents: int = 0
    max_depth: int = 0
    lp_log: list = field(default_factory=list)  # (node id, "node"|"probe", iterations)
    store: PseudocostStore | None = None
    last_branch_depth: np.ndarray | None = None  # per column, -1 if never branched
    work_limit: int | None = None

    @property
    def gap(self) -> float:
        if not math.isfinite(self.z_primal):
            return math.inf
        return self.z_primal - self.z_dual

    @property
    def n_open(self) -> int:
        return len(self.open_nodes)


def work_units_now(state: SolveState) -> int:
    return state.work_units


def candidate_set(x, is_binary, fixed=None, int_tol: float = INT_TOL) -> np.ndarray:
    """Binary columns whose LP value is fractional and that are not fixed on the path."""
    x = np.asarray(x, dtype=float)
    frac = np.abs(x - np.round(x)) > int_tol
    mask = np.asarray(is_binary, dtype=bool) & frac
    if fixed is not None:
        mask &= ~np.asarray(fixed, dtype=bool)
    return np.flatnonzero(mask)


@dataclass
class BranchContext:
    """What a branching rule sees at one node."""

    engine: "BranchAndBound"
    node: BnbNode
    lp: object
    candidates: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.lp.primal

    @property
    def state(self) -> SolveState:
        return self.engine.state

    @property
    def store(self) -> PseudocostStore:
        return self.engine.state.store

    @property
    def prob(self) -> MilpProblem:
        return self.engine.prob

    def probe(self, j: int, direction: str, iter_cap: int = 100) -> ProbeResult:
        """Strong-branch probe; iterations are charged as work and gains are recorded."""
        res = strong_branch_probe(self.engine.solver, self.lb, self.ub, self.lp.basis, j,
                                  direction, self.x[j], self.lp.objective, iter_cap)
        st = self.engine.state
        st.work_units += res.iterations
        st.lp_log.append((self.node.id, "probe", res.iterations))
        if not res.cutoff and not res.truncated:
            frac = self.x[j] if direction == "down" else 1.0 - self.x[j]
            st.store.record(j, direction, res.delta, frac)
        return res


class BranchAndBound:
    """One solve. ``step`` processes a single node so solves can be interleaved."""

    def __init__(self, prob: MilpProblem, rule, limits: Limits | None = None,
                 solver: LpSolver | None = None, simplex: SimplexConfig | None = None):
        self.prob = prob
        self.rule = rule
        self.limits = limits or Limits()
        self.solver = solver or LpSolver(prob, simplex)
        self.state = SolveState(store=PseudocostStore(prob.n_vars),
                                last_branch_depth=np.full(prob.n_vars, -1, dtype=np.int64),
                                work_limit=self.limits.work_units)
        self._next_id = 0
        self._tie_q = None
        self._t0 = None
        self._elapsed = 0.0
        self.done = False
        self._root_lb = np.asarray(prob.var_lb, dtype=float)
        self._root_ub = np.asarray(prob.var_ub, dtype=float)
        root = self._new_node(None, 0, -math.inf, (), None)
        heapq.heappush(self.state.open_nodes, root)
        self.state.trace.append(TraceRow(0, 0.0, math.inf, -math.inf, 1, 0))

    def _new_node(self, parent, depth, bound, changes, basis, col=None, direction=None, frac=0.0):
        node = BnbNode(self._next_id, parent, depth, bound, changes, basis, col, direction, frac)
        node.sort_key = (self._bucket(bound), -depth, node.id)
        self._next_id += 1
        return node

    def _bucket(self, bound: float) -> float:
        # bounds equal up to TIE_REL are ties; ties go to the deeper node, then the older one
        if not math.isfinite(bound) or self._tie_q is None:
            return bound
        return math.floor(bound / self._tie_q)

    def _tol(self) -> float:
        z = self.state.z_primal
        return self.limits.gap * max(1.0, abs(z)) if math.isfinite(z) else 0.0

    def _clock(self) -> float:
        return self._elapsed + (time.perf_counter() - self._t0 if self._t0 else 0.0)

    def _finish(self, status: str) -> None:
        st = self.state
        st.status = status
        if status == OPT:
            st.z_dual = st.z_primal
        elif status == INFEAS:
            st.z_dual = math.inf
        self.done = True
        self._pause()

    def _pause(self):
        if self._t0 is not None:
            self._elapsed += time.perf_counter() - self._t0
            self._t0 = None
        self.state.wall_time = self._elapsed

    def _limit_hit(self) -> bool:
        st, lim = self.state, self.limits
        if lim.work_units is not None and st.work_units >= lim.work_units:
            return True
        if lim.nodes is not None and st.n_explored >= lim.nodes:
            return True
        if lim.time is not None and self._clock() >= lim.time:
            return True
        return False

    def _update_dual(self) -> None:
        st = self.state
        lowest = st.open_nodes[0].local_dual_bound if st.open_nodes else math.inf
        st.z_dual = max(st.z_dual, min(lowest, st.z_primal))

    def _record(self) -> None:
        st = self.state
        st.wall_time = self._clock()
        st.trace.append(TraceRow(st.work_units, st.wall_time, st.z_primal, st.z_dual,
                                 st.n_open, st.n_explored))

    def _check_done(self) -> bool:
        st = self.state
        if not st.open_nodes:
            self._finish(OPT if st.incumbent is not None else INFEAS)
            return True
        if st.incumbent is not None and st.z_primal - st.z_dual <= self._tol():
            self._finish(OPT)
            return True
        return False

    def step(self) -> bool:
        """Process one node. Returns False once the solve has finished."""
        if self.done:
            return False
        if self._t0 is None:
            self._t0 = time.perf_counter()
        st = self.state
        if self._check_done():
            return False
        if self._limit_hit():
            self._finish(LIMIT)
            return False
        node = heapq.heappop(st.open_nodes)
        if node.local_dual_bound >= st.z_primal - self._tol():
            self._update_dual()
            self._check_done()
            return not self.done
        self._process(node)
        self._update_dual()
        self._record()
        self._check_done()
        if not self.done:
            self._pause()
        return not self.done

    def run(self, stop: threading.Event | None = None) -> SolveState:
        while not self.done:
            if stop is not None and stop.is_set():
                self._finish(STOPPED)
                break
            self.step()
        return self.state

    def _bounds(self, node: BnbNode):
        lb, ub = self._root_lb.copy(), self._root_ub.copy()
        for j, lo, hi in node.bound_changes:
            lb[j], ub[j] = lo, hi
        return lb, ub

    def _process(self, node: BnbNode) -> None:
        st = self.state
        lb, ub = self._bounds(node)
        lp = self.solver.solve(lb, ub, warm=node.warm_basis)
        if lp.status not in (OPTIMAL, INFEASIBLE):
            retry = self.solver.solve(lb, ub)
            if retry.status not in (OPTIMAL, INFEASIBLE):
                raise RuntimeError(f"node {node.id}: LP ended with status {lp.status}")
            retry.iterations += lp.iterations
            lp = retry
        st.n_explored += 1
        st.work_units += lp.iterations + NODE_WORK
        st.lp_log.append((node.id, "node", lp.iterations))
        st.max_depth = max(st.max_depth, node.depth)
        if lp.status == INFEASIBLE:
            return
        if self._tie_q is None:
            self._tie_q = TIE_REL * max(1.0, abs(lp.objective))
        if node.branch_col is not None and math.isfinite(node.local_dual_bound):
            st.store.record(node.branch_col, node.branch_dir,
                            lp.objective - node.local_dual_bound, node.branch_frac)
        node.local_dual_bound = max(node.local_dual_bound, lp.objective)
        if lp.objective >= st.z_primal - self._tol():
            return
        fixed = lb == ub
        cands = candidate_set(lp.primal, self.prob.is_binary, fixed)
        if cands.size == 0:
            st.z_primal = lp.objective
            st.incumbent = lp.primal.copy()
            st.n_incumbents += 1
            tol = self._tol()
            st.open_nodes = [n for n in st.open_nodes if n.local_dual_bound < st.z_primal - tol]
            heapq.heapify(st.open_nodes)
            return
        ctx = BranchContext(self, node, lp, cands, lb, ub)
        decision: BranchDecision = self.rule.select(ctx)
        if decision.prune:
            return
        j = int(decision.chosen_column)
        if j not in set(cands.tolist()):
            raise ValueError(f"rule {self.rule!r} chose non-candidate column {j}")
        st.last_branch_depth[j] = node.depth
        xj = float(lp.primal[j])
        for direction, val, frac in (("down", 0.0, xj), ("up", 1.0, 1.0 - xj)):
            child = self._new_node(node.id, node.depth + 1, lp.objective,
                                   node.bound_changes + ((j, val, val),), lp.basis,
                                   j, direction, frac)
            heapq.heappush(st.open_nodes, child)

    def schedule(self) -> Schedule | None:
        st = self.state
        if st.incumbent is None:
            return None
        return Schedule(values=st.incumbent.copy(), objective_value=float(st.z_primal))


def solve(prob: MilpProblem, rule, limits: Limits | None = None,
          solver: LpSolver | None = None):
    """Run branch and bound to completion or a limit. Returns (state, schedule or None)."""
    bb = BranchAndBound(prob, rule, limits, solver)
    bb.run()
    return bb.state, bb.schedule()

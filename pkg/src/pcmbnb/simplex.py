"""Bounded-variable primal revised simplex with warm starts.

Problems are put in the computational form

    min c.x   s.t.   A x - s = 0,   lb <= x <= ub,   row_lo <= s <= row_hi

so the all-logical basis ``-I`` is always available. The basis is factorized
with a sparse LU and updated in product form; it is refactorized every
``refactor_every`` pivots. A warm basis whose primal values violate the new
bounds is repaired with a composite phase 1 (minimize the sum of bound
violations) before phase 2 resumes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

PIVOT_TOL = 1e-9
DEGENERATE_STREAK = 50


class SingularBasisError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimplexConfig:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    max_iters: int | None = None  # default 50 * (rows + cols)
    pivot_rule: str = "dantzig_with_bland_fallback"
    refactor_every: int = 100

    def __post_init__(self):
        if self.feas_tol <= 0 or self.opt_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.pivot_rule != "dantzig_with_bland_fallback":
            raise ValueError(f"unknown pivot rule {self.pivot_rule!r}")


@dataclass(frozen=True, eq=False)
class Basis:
    """Basic column per row plus the at-upper-bound flag of every column."""

    head: np.ndarray
    at_upper: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, Basis) and np.array_equal(self.head, other.head)
                and np.array_equal(self.at_upper, other.at_upper))


@dataclass(eq=False)
class LpResult:
    status: str
    objective: float
    primal: np.ndarray  # structural columns only
    basis: Basis
    iterations: int
    reduced_costs: np.ndarray | None = None
    in_phase1: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Factor:
    """Sparse LU of the initial basis followed by a list of eta columns."""

    def __init__(self, B: sp.csc_matrix):
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularBasisError(str(exc)) from exc
        d = np.abs(self.lu.U.diagonal())
        if d.size and d.min() < 1e-11 * max(1.0, d.max()):
            raise SingularBasisError("basis is numerically singular")
        self.etas: list = []

    def fresh(self) -> "_Factor":
        """Same LU with the eta file cleared."""
        f = object.__new__(_Factor)
        f.lu, f.etas = self.lu, []
        return f

    def ftran(self, v: np.ndarray) -> np.ndarray:
        w = self.lu.solve(v)
        for p, a in self.etas:
            wp = w[p] / a[p]
            if wp != 0.0:
                w -= a * wp
            w[p] = wp
        return w

    def btran(self, c: np.ndarray) -> np.ndarray:
        z = np.array(c, dtype=float)
        for p, a in reversed(self.etas):
            z[p] = (z[p] - (a @ z - a[p] * z[p])) / a[p]
        return self.lu.solve(z, trans="T")


class LpSolver:
    """Simplex context bound to one constraint matrix.

    Column bounds are passed per call so branch-and-bound nodes can share the
    context. Not thread-safe; create one per concurrent solve.
    """

    def __init__(self, prob, cfg: SimplexConfig | None = None):
        self.prob = prob
        self.cfg = cfg or SimplexConfig()
        A = sp.csc_matrix(prob.A, dtype=float)
        self.m, self.n = A.shape
        m, n = self.m, self.n
        self.N = n + m
        self.A_full = sp.hstack([A, -sp.identity(m, format="csc")], format="csc")
        self.A_full_T = self.A_full.T.tocsr()
        self.cost = np.concatenate([np.asarray(prob.objective, float), np.zeros(m)])
        row_lo, row_hi = prob.row_bounds()
        self.row_lo = np.asarray(row_lo, float)
        self.row_hi = np.asarray(row_hi, float)
        self.max_iters = self.cfg.max_iters or 50 * (m + n)
        self._lu_cache = (None, None)  # (basis head bytes, _Factor) of the last fresh LU

    def column(self, q: int) -> np.ndarray:
        A = self.A_full
        v = np.zeros(self.m)
        s, e = A.indptr[q], A.indptr[q + 1]
        v[A.indices[s:e]] = A.data[s:e]
        return v

    def factorize(self, head: np.ndarray, cache: bool = False) -> _Factor:
        """LU of the basis ``head``; with ``cache`` the last cached start basis is reused."""
        key = head.tobytes() if cache else None
        if cache and self._lu_cache[0] == key:
            return self._lu_cache[1].fresh()
        f = _Factor(self.A_full[:, head].tocsc())
        if cache:
            self._lu_cache = (key, f.fresh())
        return f

    # ------------------------------------------------------------------ api
    def slack_basis(self) -> Basis:
        at_upper = np.zeros(self.N, dtype=bool)
        at_upper[self.n:] = ~np.isfinite(self.row_lo)
        return Basis(head=np.arange(self.n, self.N), at_upper=at_upper)

    def solve(self, lb=None, ub=None, warm: Basis | None = None,
              max_iters: int | None = None) -> LpResult:
        prob = self.prob
        lb = prob.var_lb if lb is None else lb
        ub = prob.var_ub if ub is None else ub
        return _Run(self, np.concatenate([lb, self.row_lo]),
                    np.concatenate([ub, self.row_hi]), warm,
                    self.max_iters if max_iters is None else max_iters).run()


def solve_lp(prob, warm: Basis | None = None, cfg: SimplexConfig | None = None,
             lb=None, ub=None) -> LpResult:
    """Solve the LP relaxation of ``prob`` (integrality ignored)."""
    return LpSolver(prob, cfg).solve(lb, ub, warm)


class _Run:
    def __init__(self, ctx: LpSolver, lo, hi, warm, max_iters):
        self.ctx = ctx
        self.lo, self.hi = lo, hi
        self.max_iters = max_iters
        self.ftol = ctx.cfg.feas_tol
        self.otol = ctx.cfg.opt_tol
        if np.any(lo > hi + 1e-12):
            self.empty_box = True
            return
        self.empty_box = False
        self.iters = 0
        head, at_upper = None, None
        if warm is not None and self._valid(warm):
            head, at_upper = warm.head.copy(), warm.at_upper.copy()
        self.factor = None
        if head is not None:
            self._install(head, at_upper)
            try:
                self._refactor(cache=True)
            except SingularBasisError:
                self.factor = None
        if self.factor is None:
            b = ctx.slack_basis()
            self._install(b.head.copy(), b.at_upper.copy())
            self._refactor()

    def _valid(self, warm: Basis) -> bool:
        ctx = self.ctx
        h = warm.head
        if h.shape != (ctx.m,) or warm.at_upper.shape != (ctx.N,):
            return False
        if h.min(initial=0) < 0 or h.max(initial=0) >= ctx.N:
            return False
        return len(np.unique(h)) == ctx.m

    def _install(self, head, at_upper):
        lo, hi = self.lo, self.hi
        self.head = head
        self.is_basic = np.zeros(self.ctx.N, dtype=bool)
        self.is_basic[head] = True
        # nonbasic variables sit on a finite bound
        at_upper = at_upper & np.isfinite(hi) | ~np.isfinite(lo)
        self.at_upper = at_upper
        x = np.where(at_upper, hi, lo)
        x[~np.isfinite(x)] = 0.0
        x[head] = 0.0
        self.x = x

    def _refactor(self, cache: bool = False):
        ctx = self.ctx
        self.factor = ctx.factorize(self.head, cache)
        xn = self.x.copy()
        xn[self.head] = 0.0
        self.x[self.head] = -self.factor.ftran(ctx.A_full @ xn)

    def _infeasibility(self):
        xb = self.x[self.head]
        below = xb < self.lo[self.head] - self.ftol
        above = xb > self.hi[self.head] + self.ftol
        return below, above

    def run(self) -> LpResult:
        ctx = self.ctx
        if self.empty_box:
            return LpResult(INFEASIBLE, np.inf, np.zeros(ctx.n), ctx.slack_basis(), 0)
        degenerate = 0
        bland = False
        refactored_at_end = False
        while True:
            below, above = self._infeasibility()
            phase1 = bool(below.any() or above.any())
            if self.iters >= self.max_iters:
                return self._result(ITERATION_LIMIT, phase1)
            if phase1:
                cb = np.zeros(ctx.m)
                cb[below] = -1.0
                cb[above] = 1.0
                y = self.factor.btran(cb)
                d = -(ctx.A_full_T @ y)
            else:
                y = self.factor.btran(ctx.cost[self.head])
                d = ctx.cost - ctx.A_full_T @ y
            q = self._price(d, bland)
            if q < 0:
                if not refactored_at_end and self.factor.etas:
                    # confirm with a fresh factorization before concluding
                    self._refactor()
                    refactored_at_end = True
                    continue
                if phase1:
                    return self._result(INFEASIBLE, True)
                return self._result(OPTIMAL, False, d)
            refactored_at_end = False
            sigma = -1.0 if self.at_upper[q] else 1.0
            alpha = self.factor.ftran(ctx.column(q))
            theta, r, leave_upper = self._ratio(alpha, sigma, q, phase1, below, above, bland)
            if theta is None:
                return self._result(UNBOUNDED, phase1)
            self.iters += 1
            if theta <= 1e-12:
                degenerate += 1
                if degenerate >= DEGENERATE_STREAK:
                    bland = True
            else:
                degenerate = 0
                bland = False
            self._pivot(q, sigma, theta, alpha, r, leave_upper)

    def _price(self, d, bland) -> int:
        ctx = self.ctx
        elig = ~self.is_basic & (self.hi > self.lo)
        score = np.where(self.at_upper, d, -d)
        cand = elig & (score > self.otol)
        if not cand.any():
            return -1
        if bland:
            return int(np.flatnonzero(cand)[0])
        idx = np.flatnonzero(cand)
        return int(idx[np.argmax(score[idx])])

    def _ratio(self, alpha, sigma, q, phase1, below, above, bland):
        """Harris two-pass ratio test. Returns (theta, row or -1 for a flip, leave_upper)."""
        delta = -sigma * alpha
        rows = np.flatnonzero(np.abs(delta) > PIVOT_TOL)
        dr = delta[rows]
        hb = self.head[rows]
        xb = self.x[hb]
        lo, hi = self.lo[hb], self.hi[hb]
        if phase1:
            # infeasible basics may travel up to the bound they violate
            bl, ab = below[rows], above[rows]
            lo, hi = np.where(bl, -np.inf, np.where(ab, hi, lo)), np.where(bl, lo, np.where(ab, np.inf, hi))
        inc = dr > 0
        room = np.where(inc, hi - xb, xb - lo)
        step = np.abs(dr)
        relaxed = (room + self.ftol) / step
        exact = np.maximum(room / step, 0.0)
        flip = self.hi[q] - self.lo[q]
        theta_max = relaxed.min(initial=np.inf)
        if not np.isfinite(theta_max) and not np.isfinite(flip):
            return None, -1, False
        if flip <= theta_max:
            return flip, -1, False
        ok = np.flatnonzero(exact <= theta_max)
        if bland:
            # smallest basic column index among ties
            best = exact[ok].min()
            ties = ok[exact[ok] <= best + 1e-12]
            k = int(ties[np.argmin(hb[ties])])
        else:
            k = int(ok[np.argmax(step[ok])])
        r = int(rows[k])
        if phase1 and (below[r] or above[r]):
            return float(exact[k]), r, bool(above[r])
        return float(exact[k]), r, bool(inc[k])

    def _pivot(self, q, sigma, theta, alpha, r, leave_upper):
        head = self.head
        self.x[head] += theta * (-sigma * alpha)
        self.x[q] += sigma * theta
        if r < 0:
            self.at_upper[q] = not self.at_upper[q]
            self.x[q] = self.hi[q] if self.at_upper[q] else self.lo[q]
            return
        out = head[r]
        head[r] = q
        self.is_basic[q] = True
        self.is_basic[out] = False
        self.at_upper[q] = False
        self.at_upper[out] = leave_upper
        self.x[out] = self.hi[out] if leave_upper else self.lo[out]
        self.factor.etas.append((r, alpha))
        if len(self.factor.etas) >= self.ctx.cfg.refactor_every:
            try:
                self._refactor()
            except SingularBasisError:
                # drift made the basis unusable; restart from the logical basis
                b = self.ctx.slack_basis()
                keep = self.at_upper.copy()
                keep[self.ctx.n:] = b.at_upper[self.ctx.n:]
                self._install(b.head.copy(), keep)
                self._refactor()

    def _result(self, status, phase1, d=None) -> LpResult:
        ctx = self.ctx
        x = self.x[:ctx.n].copy()
        obj = float(ctx.cost[:ctx.n] @ x) if status != INFEASIBLE else np.inf
        basis = Basis(head=self.head.copy(), at_upper=self.at_upper.copy())
        rc = None if d is None else np.where(self.is_basic, 0.0, d)[:ctx.n]
        return LpResult(status, obj, x, basis, self.iters, rc, phase1)


@dataclass
class ProbeResult:
    delta: float
    cutoff: bool
    truncated: bool
    iterations: int
    objective: float


def strong_branch_probe(solver: LpSolver, lb, ub, basis: Basis, j: int, direction: str,
                        x_j: float, parent_obj: float, iter_cap: int = 100,
                        int_tol: float = 1e-6) -> ProbeResult:
    """Tentatively fix binary column ``j`` to 0 ("down") or 1 ("up") and re-solve.

    A truncated probe returns the phase-2 objective reached so far, or a zero
    delta if phase 1 had not finished.
    """
    if abs(x_j - round(x_j)) <= int_tol:
        raise ValueError(f"column {j} is integral (x={x_j}); nothing to probe")
    lb2, ub2 = np.array(lb, dtype=float), np.array(ub, dtype=float)
    if direction == "down":
        ub2[j] = 0.0
    elif direction == "up":
        lb2[j] = 1.0
    else:
        raise ValueError("direction must be 'down' or 'up'")
    res = solver.solve(lb2, ub2, warm=basis, max_iters=iter_cap)
    if res.status == INFEASIBLE:
        return ProbeResult(np.inf, True, False, res.iterations, np.inf)
    if res.status == OPTIMAL:
        return ProbeResult(max(0.0, res.objective - parent_obj), False, False,
                           res.iterations, res.objective)
    delta = 0.0 if res.in_phase1 else max(0.0, res.objective - parent_obj)
    return ProbeResult(delta, False, True, res.iterations, res.objective)

"""Translate a PCM instance into a sparse MILP and check schedules against it.

Column order is by kind, then entity, then hour::

    gen_power (G*T), line_flow (L*T), farm_output (F*T), curtailment (F*T),
    commit (G*T), angle (B*T, dc_angle only)

Row families, in emission order, and their counts (T hours, G units, B buses,
L lines, F farms)::

    balance        B*T        power balance per bus and hour
    capacity       2*G*T      p_min*mu <= P and P <= p_max*mu
    ramp           2*G*(T-1)  up and down ramp limits
    min_up         G*(T-1)    minimum on-time windows
    min_down       G*(T-1)    minimum off-time windows
    reserve_up     T          committed capacity covers load plus up reserve
    reserve_down   T          committed minimum leaves room for down reserve
    renewable      F*T        output plus curtailment equals forecast
    flow_def       L*T        dc_angle only: flow equals susceptance * angle diff
    ref_angle      T          dc_angle only: reference bus angle is zero

Line limits are column bounds on ``line_flow``, not rows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import PcmInstance

KINDS = ("gen_power", "line_flow", "farm_output", "curtailment", "commit", "angle")
FLOW_MODELS = ("transport", "dc_angle")

LE, EQ, GE = "L", "E", "G"


class InfeasibleInstanceError(ValueError):
    """The instance cannot have a feasible schedule (detected before solving)."""


@dataclass(eq=False)
class MilpProblem:
    """min c.x  s.t.  A x (sense) rhs,  var_lb <= x <= var_ub,  x_j binary where flagged."""

    objective: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray  # 'L', 'E' or 'G' per row
    rhs: np.ndarray
    var_lb: np.ndarray
    var_ub: np.ndarray
    is_binary: np.ndarray
    col_meta: list  # (kind, entity, t)
    row_meta: list  # (family, entity, t)
    name: str = ""

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A)
        n = len(self.objective)
        if self.A.shape[1] != n:
            raise ValueError("constraint matrix width does not match objective")
        if not np.all(np.isfinite(self.objective)):
            raise ValueError("objective must be finite")
        b = self.is_binary
        if np.any(self.var_lb[b] != 0.0) or np.any(self.var_ub[b] != 1.0):
            raise ValueError("binary columns must have bounds [0, 1]")

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_binary(self) -> int:
        return int(self.is_binary.sum())

    @property
    def n_continuous(self) -> int:
        return self.n_vars - self.n_binary

    @property
    def binary_columns(self) -> np.ndarray:
        return np.flatnonzero(self.is_binary)

    def row_bounds(self):
        """Per-row (lo, hi) with infinities for one-sided rows."""
        lo = np.where(self.sense == LE, -np.inf, self.rhs)
        hi = np.where(self.sense == GE, np.inf, self.rhs)
        return lo, hi

    def family_counts(self) -> dict:
        counts: dict = {}
        for fam, _, _ in self.row_meta:
            counts[fam] = counts.get(fam, 0) + 1
        return counts

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for arr in (self.objective, self.A.indptr, self.A.indices, self.A.data,
                    self.rhs, self.var_lb, self.var_ub, self.is_binary):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("".join(self.sense).encode())
        return h.hexdigest()


@dataclass
class Schedule:
    values: np.ndarray
    objective_value: float

    def to_dict(self) -> dict:
        return {"schema": "pcm-schedule/1", "objective_value": self.objective_value,
                "values": np.asarray(self.values, dtype=float).tolist()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load_file(cls, path) -> "Schedule":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(values=np.asarray(d["values"], dtype=float),
                   objective_value=float(d["objective_value"]))


class _Rows:
    def __init__(self):
        self.ri, self.ci, self.val = [], [], []
        self.sense, self.rhs, self.meta = [], [], []

    def add(self, cols, coefs, sense, rhs, meta):
        r = len(self.rhs)
        for c, v in zip(cols, coefs):
            if v != 0.0:
                self.ri.append(r)
                self.ci.append(c)
                self.val.append(float(v))
        self.sense.append(sense)
        self.rhs.append(float(rhs))
        self.meta.append(meta)


def expected_counts(n_bus, n_gen, n_line, n_farm, T, flow_model="transport"):
    """Closed-form (continuous, binary, rows) for ``build_milp``."""
    cont = (n_gen + n_line + 2 * n_farm) * T
    rows = n_bus * T + 2 * n_gen * T + 4 * n_gen * (T - 1) + 2 * T + n_farm * T
    if flow_model == "dc_angle":
        cont += n_bus * T
        rows += n_line * T + T
    return cont, n_gen * T, rows


def build_milp(inst: PcmInstance, flow_model: str = "transport") -> MilpProblem:
    if flow_model not in FLOW_MODELS:
        raise ValueError(f"flow_model must be one of {FLOW_MODELS}")
    T = inst.horizon_T
    G, L, F = len(inst.generators), len(inst.lines), len(inst.farms)
    B = len(inst.buses)
    bus_index = {b: i for i, b in enumerate(inst.buses)}
    D = inst.system_load

    forecast_total = sum((f.forecast for f in inst.farms), np.zeros(T))
    short = D + inst.reserve_up - (inst.total_capacity + forecast_total)
    bad = np.flatnonzero(short > 1e-9)
    if bad.size:
        t = int(bad[0])
        raise InfeasibleInstanceError(
            f"hour {t + 1}: load plus up-reserve exceeds total capacity by {short[t]:.3f} MW")

    # column offsets
    off_p = 0
    off_l = off_p + G * T
    off_w = off_l + L * T
    off_c = off_w + F * T
    off_u = off_c + F * T
    off_a = off_u + G * T
    n = off_a + (B * T if flow_model == "dc_angle" else 0)

    def p(g, t): return off_p + g * T + t
    def fl(l, t): return off_l + l * T + t
    def w(f, t): return off_w + f * T + t
    def cu(f, t): return off_c + f * T + t
    def u(g, t): return off_u + g * T + t
    def ang(b, t): return off_a + b * T + t

    c = np.zeros(n)
    lb = np.zeros(n)
    ub = np.zeros(n)
    is_bin = np.zeros(n, dtype=bool)
    meta: list = [None] * n
    for g, gen in enumerate(inst.generators):
        for t in range(T):
            c[p(g, t)] = gen.marginal_cost
            ub[p(g, t)] = gen.p_max
            meta[p(g, t)] = ("gen_power", g, t)
            ub[u(g, t)] = 1.0
            is_bin[u(g, t)] = True
            meta[u(g, t)] = ("commit", g, t)
    for l, ln in enumerate(inst.lines):
        for t in range(T):
            lb[fl(l, t)] = ln.p_min
            ub[fl(l, t)] = ln.p_max
            meta[fl(l, t)] = ("line_flow", l, t)
    for f, farm in enumerate(inst.farms):
        for t in range(T):
            ub[w(f, t)] = farm.forecast[t]
            meta[w(f, t)] = ("farm_output", f, t)
            c[cu(f, t)] = farm.curtail_penalty
            ub[cu(f, t)] = farm.forecast[t]
            meta[cu(f, t)] = ("curtailment", f, t)
    if flow_model == "dc_angle":
        for b in range(B):
            for t in range(T):
                lb[ang(b, t)] = -np.pi
                ub[ang(b, t)] = np.pi
                meta[ang(b, t)] = ("angle", b, t)

    rows = _Rows()
    # balance: injections from units, lines (+1 at to_bus, -1 at from_bus), farms
    for bi, bus in enumerate(inst.buses):
        gens = [g for g, gen in enumerate(inst.generators) if gen.bus_id == bus]
        inc = [(l, 1.0) for l, ln in enumerate(inst.lines) if ln.to_bus == bus]
        inc += [(l, -1.0) for l, ln in enumerate(inst.lines) if ln.from_bus == bus]
        inc.sort()
        farms = [f for f, farm in enumerate(inst.farms) if farm.bus_id == bus]
        for t in range(T):
            cols = [p(g, t) for g in gens] + [fl(l, t) for l, _ in inc] + [w(f, t) for f in farms]
            coefs = [1.0] * len(gens) + [s for _, s in inc] + [1.0] * len(farms)
            rows.add(cols, coefs, EQ, inst.load[bi, t], ("balance", bus, t))
    for g, gen in enumerate(inst.generators):
        for t in range(T):
            rows.add([p(g, t), u(g, t)], [1.0, -gen.p_min], GE, 0.0, ("capacity", g, t))
            rows.add([p(g, t), u(g, t)], [1.0, -gen.p_max], LE, 0.0, ("capacity", g, t))
    for g, gen in enumerate(inst.generators):
        for t in range(T - 1):
            # P[t+1] - P[t] - p_min*(mu[t+1] - mu[t]) <= ramp_up
            rows.add([p(g, t + 1), p(g, t), u(g, t + 1), u(g, t)],
                     [1.0, -1.0, -gen.p_min, gen.p_min], LE, gen.ramp_up, ("ramp", g, t))
            rows.add([p(g, t), p(g, t + 1), u(g, t), u(g, t + 1)],
                     [1.0, -1.0, -gen.p_min, gen.p_min], LE, gen.ramp_down, ("ramp", g, t))
    for g, gen in enumerate(inst.generators):
        for t in range(T - 1):
            # sum_{k=t+1}^{min(t+T_on, T)} mu[k] >= T_on*(mu[t+1] - mu[t]), hours 1-based
            k_end = min(t + 1 + gen.t_on, T)  # exclusive, 0-based
            cols = [u(g, k) for k in range(t + 1, k_end)]
            coefs = [1.0] * len(cols)
            cols, coefs = _merge(cols + [u(g, t + 1), u(g, t)],
                                 coefs + [-float(gen.t_on), float(gen.t_on)])
            rows.add(cols, coefs, GE, 0.0, ("min_up", g, t))
    for g, gen in enumerate(inst.generators):
        for t in range(T - 1):
            # sum_{k=t+1}^{min(t+T_off, T)} mu[k] <= T_off*(mu[t+1] - mu[t] + 1)
            k_end = min(t + 1 + gen.t_off, T)
            cols = [u(g, k) for k in range(t + 1, k_end)]
            coefs = [1.0] * len(cols)
            cols, coefs = _merge(cols + [u(g, t + 1), u(g, t)],
                                 coefs + [-float(gen.t_off), float(gen.t_off)])
            rows.add(cols, coefs, LE, float(gen.t_off), ("min_down", g, t))
    for t in range(T):
        cols = [u(g, t) for g in range(G)] + [w(f, t) for f in range(F)]
        coefs = [gen.p_max for gen in inst.generators] + [1.0] * F
        rows.add(cols, coefs, GE, D[t] + inst.reserve_up[t], ("reserve_up", -1, t))
    for t in range(T):
        cols = [u(g, t) for g in range(G)] + [w(f, t) for f in range(F)]
        coefs = [gen.p_min for gen in inst.generators] + [1.0] * F
        rows.add(cols, coefs, LE, D[t] - inst.reserve_down[t], ("reserve_down", -1, t))
    for f, farm in enumerate(inst.farms):
        for t in range(T):
            rows.add([w(f, t), cu(f, t)], [1.0, 1.0], EQ, farm.forecast[t], ("renewable", f, t))
    if flow_model == "dc_angle":
        for l, ln in enumerate(inst.lines):
            a, b = bus_index[ln.from_bus], bus_index[ln.to_bus]
            for t in range(T):
                rows.add([fl(l, t), ang(a, t), ang(b, t)],
                         [1.0, -ln.susceptance, ln.susceptance], EQ, 0.0, ("flow_def", l, t))
        for t in range(T):
            rows.add([ang(0, t)], [1.0], EQ, 0.0, ("ref_angle", 0, t))

    A = sp.csr_matrix((rows.val, (rows.ri, rows.ci)), shape=(len(rows.rhs), n))
    A.sum_duplicates()
    A.sort_indices()
    return MilpProblem(
        objective=c, A=A, sense=np.array(rows.sense), rhs=np.array(rows.rhs),
        var_lb=lb, var_ub=ub, is_binary=is_bin, col_meta=meta, row_meta=rows.meta,
        name=f"{inst.name or 'pcm'}_T{T}_s{inst.seed}",
    )


def _merge(cols, coefs):
    acc: dict = {}
    for c, v in zip(cols, coefs):
        acc[c] = acc.get(c, 0.0) + v
    keys = sorted(acc)
    return keys, [acc[k] for k in keys]


@dataclass
class FeasibilityReport:
    violations: dict = field(default_factory=dict)  # family -> max violation
    tol: float = 1e-6

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    def failing(self) -> dict:
        return {k: v for k, v in self.violations.items() if v > self.tol}

    def __str__(self) -> str:
        lines = [f"{fam:14s} {v:.3e}{'  FAIL' if v > self.tol else ''}"
                 for fam, v in self.violations.items()]
        lines.append(f"{'result':14s} {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})")
        return "\n".join(lines)


def check_problem(prob: MilpProblem, x, tol: float = 1e-6) -> FeasibilityReport:
    """Maximum violation per constraint family for the point ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (prob.n_vars,):
        raise ValueError(f"schedule has {x.size} values, problem has {prob.n_vars} columns")
    ax = prob.A @ x
    lo, hi = prob.row_bounds()
    row_viol = np.maximum(np.maximum(lo - ax, ax - hi), 0.0)
    report = FeasibilityReport(tol=tol)
    for r, (fam, _, _) in enumerate(prob.row_meta):
        report.violations[fam] = max(report.violations.get(fam, 0.0), float(row_viol[r]))
    col_viol = np.maximum(np.maximum(prob.var_lb - x, x - prob.var_ub), 0.0)
    is_line = np.array([m[0] == "line_flow" for m in prob.col_meta], dtype=bool)
    report.violations["line_limit"] = float(col_viol[is_line].max(initial=0.0))
    report.violations["bounds"] = float(col_viol[~is_line].max(initial=0.0))
    xb = x[prob.is_binary]
    report.violations["integrality"] = float(np.abs(xb - np.round(xb)).max(initial=0.0))
    return report


def check_feasibility(inst: PcmInstance, sched: Schedule, tol: float = 1e-6,
                      flow_model: str = "transport") -> FeasibilityReport:
    prob = build_milp(inst, flow_model)
    return check_problem(prob, sched.values, tol)


def _mps_num(v: float) -> str:
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    return s


def write_mps(prob: MilpProblem, path) -> None:
    """Write the problem in fixed-layout MPS (names are at most 8 characters)."""
    ncol, nrow = prob.n_vars, prob.n_rows
    if ncol > 9_999_999 or nrow > 9_999_999:
        raise ValueError("problem too large for 8-character MPS names")
    cname = [f"C{j:07d}" for j in range(ncol)]
    rname = [f"R{i:07d}" for i in range(nrow)]
    out = [f"NAME          {(prob.name or 'PCM')[:8]}", "ROWS", " N  COST"]
    for i in range(nrow):
        out.append(f" {prob.sense[i]}  {rname[i]}")
    out.append("COLUMNS")
    At = prob.A.tocsc()
    in_int = False
    for j in range(ncol):
        if prob.is_binary[j] and not in_int:
            out.append("    MARKER                 'MARKER'                 'INTORG'")
            in_int = True
        elif not prob.is_binary[j] and in_int:
            out.append("    MARKER                 'MARKER'                 'INTEND'")
            in_int = False
        entries = []
        if prob.objective[j] != 0.0:
            entries.append(("COST", prob.objective[j]))
        for k in range(At.indptr[j], At.indptr[j + 1]):
            entries.append((rname[At.indices[k]], At.data[k]))
        if not entries:
            entries.append(("COST", 0.0))
        for rn, v in entries:
            out.append(f"    {cname[j]:<8s}  {rn:<8s}  {_mps_num(v):>12s}")
    if in_int:
        out.append("    MARKER                 'MARKER'                 'INTEND'")
    out.append("RHS")
    for i in range(nrow):
        if prob.rhs[i] != 0.0:
            out.append(f"    {'RHS':<8s}  {rname[i]:<8s}  {_mps_num(prob.rhs[i]):>12s}")
    out.append("BOUNDS")
    for j in range(ncol):
        lo, hi = prob.var_lb[j], prob.var_ub[j]
        if prob.is_binary[j]:
            out.append(f" BV BND       {cname[j]:<8s}")
            continue
        if lo == hi:
            out.append(f" FX BND       {cname[j]:<8s}  {_mps_num(lo):>12s}")
            continue
        if lo != 0.0:
            out.append(f" LO BND       {cname[j]:<8s}  {_mps_num(lo):>12s}")
        out.append(f" UP BND       {cname[j]:<8s}  {_mps_num(hi):>12s}")
    out.append("ENDATA")
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")

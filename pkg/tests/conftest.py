"""Shared oracles: HiGHS through scipy, and exhaustive commitment enumeration."""
import itertools

import numpy as np
import pytest
from scipy.optimize import Bounds, LinearConstraint, milp


def highs(prob, lb=None, ub=None, relax=False):
    """(objective, x) from HiGHS, or (None, None) when infeasible."""
    lo, hi = prob.row_bounds()
    lb = prob.var_lb if lb is None else lb
    ub = prob.var_ub if ub is None else ub
    res = milp(prob.objective, constraints=[LinearConstraint(prob.A, lo, hi)],
               bounds=Bounds(lb, ub), integrality=None if relax else prob.is_binary.astype(int))
    return (res.fun, res.x) if res.status == 0 else (None, None)


def enumerate_optimum(prob):
    """Best objective over every 0/1 commitment, each completed by an LP solve."""
    cols = prob.binary_columns
    best, best_x = np.inf, None
    for bits in itertools.product((0.0, 1.0), repeat=len(cols)):
        lb, ub = prob.var_lb.copy(), prob.var_ub.copy()
        lb[cols] = bits
        ub[cols] = bits
        obj, x = highs(prob, lb, ub, relax=True)
        if obj is not None and obj < best:
            best, best_x = obj, x
    return best, best_x


def tiny_case(seed):
    n_gen = 2 + seed % 2
    T = (2, 3, 4)[seed % 3]
    return n_gen, T


@pytest.fixture(scope="session")
def tiny_family():
    """50 seeded tiny instances: 2-3 generators, T in {2,3,4}, at most 12 binaries."""
    from pcmbnb.milp import build_milp
    from pcmbnb.model import tiny_instance
    out = []
    for seed in range(50):
        inst = tiny_instance(*tiny_case(seed), seed)
        out.append((inst, build_milp(inst)))
    return out


@pytest.fixture(scope="session")
def tiny_optima(tiny_family):
    return [enumerate_optimum(p) for _, p in tiny_family]

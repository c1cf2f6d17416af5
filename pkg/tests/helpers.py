"""Test helpers shared by several modules."""
import numpy as np

from pcmbnb.bnb import BranchAndBound, BranchContext, candidate_set


def root_context(prob, rule=None):
    """BranchContext at the root node of ``prob`` (root LP solved, nothing charged)."""
    bb = BranchAndBound(prob, rule)
    node = bb.state.open_nodes[0]
    lb, ub = prob.var_lb.copy(), prob.var_ub.copy()
    lp = bb.solver.solve(lb, ub)
    cands = candidate_set(lp.primal, prob.is_binary, lb == ub)
    return BranchContext(bb, node, lp, cands, lb, ub)


def fractional_pcm(min_candidates=3, T=24, sigma=0.05):
    """First seeded PJM instance whose root LP has at least ``min_candidates`` candidates."""
    from pcmbnb.milp import build_milp
    from pcmbnb.model import generate_instance, pjm5_base
    for seed in range(100):
        prob = build_milp(generate_instance(pjm5_base(T), sigma, seed))
        ctx = root_context(prob)
        if len(ctx.candidates) >= min_candidates:
            return prob
    raise RuntimeError("no fractional instance found")

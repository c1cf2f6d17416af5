"""Branching rules: most-fractional, pseudo-cost, strong branching and a
reliability pseudo-cost expert.

A rule is any object with ``select(ctx) -> BranchDecision`` where ``ctx`` is
the engine's :class:`~pcmbnb.bnb.BranchContext`. Rules keep no cross-node
state of their own; the pseudo-cost store lives in the solve state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-6
INFEASIBLE_GAIN = 1e12  # stands in for an infinite bound gain from a cutoff probe


@dataclass
class BranchDecision:
    chosen_column: int
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prune: bool = False


class PseudocostStore:
    """Per-column sums of per-unit bound gains and observation counts."""

    def __init__(self, n: int):
        self.up_sum = np.zeros(n)
        self.up_count = np.zeros(n, dtype=np.int64)
        self.down_sum = np.zeros(n)
        self.down_count = np.zeros(n, dtype=np.int64)

    def record(self, j: int, direction: str, gain: float, frac: float) -> None:
        """Record a bound gain for a branch that moved x_j by ``frac``."""
        if frac <= 0 or not np.isfinite(gain):
            return
        per_unit = max(gain, 0.0) / frac
        if direction == "up":
            self.up_sum[j] += per_unit
            self.up_count[j] += 1
        else:
            self.down_sum[j] += per_unit
            self.down_count[j] += 1

    def avg_up(self, cols) -> np.ndarray:
        cnt = self.up_count[cols]
        return np.where(cnt > 0, self.up_sum[cols] / np.maximum(cnt, 1), 1.0)

    def avg_down(self, cols) -> np.ndarray:
        cnt = self.down_count[cols]
        return np.where(cnt > 0, self.down_sum[cols] / np.maximum(cnt, 1), 1.0)

    def reliability(self, cols) -> np.ndarray:
        return np.minimum(self.up_count[cols], self.down_count[cols])

    def snapshot(self) -> tuple:
        return (self.up_sum.copy(), self.up_count.copy(),
                self.down_sum.copy(), self.down_count.copy())


def product_score(gain_up, gain_down):
    return np.maximum(gain_up, EPS) * np.maximum(gain_down, EPS)


def _argmax(scores: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest candidate position
    return int(np.argmax(scores))


def most_fractional(candidates, x) -> BranchDecision:
    candidates = np.asarray(candidates)
    xv = np.asarray(x)[candidates]
    scores = np.minimum(xv, 1.0 - xv)
    return BranchDecision(int(candidates[_argmax(scores)]), scores)


def pseudocost_score(candidates, x, store: PseudocostStore) -> BranchDecision:
    candidates = np.asarray(candidates)
    xv = np.asarray(x)[candidates]
    scores = product_score(store.avg_up(candidates) * (1.0 - xv),
                           store.avg_down(candidates) * xv)
    return BranchDecision(int(candidates[_argmax(scores)]), scores)


class MostFractional:
    name = "mostfrac"

    def select(self, ctx) -> BranchDecision:
        return most_fractional(ctx.candidates, ctx.x)


class Pseudocost:
    name = "pscost"

    def select(self, ctx) -> BranchDecision:
        return pseudocost_score(ctx.candidates, ctx.x, ctx.store)


def _probe_pair(ctx, j, iter_cap):
    down = ctx.probe(j, "down", iter_cap)
    up = ctx.probe(j, "up", iter_cap)
    return down, up


class StrongBranching:
    """Full strong branching: probe every candidate in both directions."""

    name = "strong"

    def __init__(self, iter_cap: int = 100):
        self.iter_cap = iter_cap

    def select(self, ctx) -> BranchDecision:
        cands = np.asarray(ctx.candidates)
        scores = np.empty(len(cands))
        for k, j in enumerate(cands):
            down, up = _probe_pair(ctx, int(j), self.iter_cap)
            if down.cutoff and up.cutoff:
                return BranchDecision(int(j), scores[:k], prune=True)
            scores[k] = product_score(INFEASIBLE_GAIN if up.cutoff else up.delta,
                                      INFEASIBLE_GAIN if down.cutoff else down.delta)
        return BranchDecision(int(cands[_argmax(scores)]), scores)


class ReliabilityPseudocost:
    """Pseudo-cost branching with strong-branch probes on unreliable columns.

    A column is unreliable while its smaller up/down observation count is below
    ``reliability``. At most ``max_probes`` unreliable candidates, the most
    fractional first, are probed per node; their results feed the store before
    every candidate is scored with :func:`pseudocost_score`.
    """

    name = "expert"

    def __init__(self, reliability: int = 4, max_probes: int = 8, iter_cap: int = 100):
        self.reliability = reliability
        self.max_probes = max_probes
        self.iter_cap = iter_cap

    def select(self, ctx) -> BranchDecision:
        cands = np.asarray(ctx.candidates)
        store = ctx.store
        unreliable = cands[store.reliability(cands) < self.reliability]
        if unreliable.size:
            xv = ctx.x[unreliable]
            frac = np.minimum(xv, 1.0 - xv)
            order = np.lexsort((unreliable, -frac))[: self.max_probes]
            for j in unreliable[order]:
                down, up = _probe_pair(ctx, int(j), self.iter_cap)
                if down.cutoff and up.cutoff:
                    return BranchDecision(int(j), np.zeros(0), prune=True)
        return pseudocost_score(cands, ctx.x, store)

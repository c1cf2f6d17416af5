"""Imitation learning from the expert rule and REINFORCE fine-tuning.

Imitation: record (features, expert choice) at every branching step of expert
solves, then fit the policy by minibatch SGD on the mean negative
log-probability of the expert's choices.

Reinforcement: solve problems with the current policy in sampling mode, give
every step of a solve the same return ``lam * (baseline - work) / baseline``
where ``baseline`` is the expert's work on that problem, and take one
gradient-ascent step per minibatch of problems.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import policy
from .bnb import OPT, BranchAndBound, Limits
from .milp import MilpProblem
from .rules import ReliabilityPseudocost

STORE_SCHEMA = "pcm-trajectories/1"


@dataclass(frozen=True)
class IlConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("need epochs >= 1, batch_size >= 1 and lr > 0")


@dataclass(frozen=True)
class RlConfig:
    epochs: int = 1
    iterations: int = 4
    batch_size: int = 8
    lam: float = 1.0
    step: float = 1e-4
    seed: int = 0
    gamma: float = 1.0
    mode: str = "sample"
    time_metric: str = "work_units"

    def __post_init__(self):
        if not self.lam > 0 or self.batch_size < 1 or self.epochs < 1 or self.iterations < 1:
            raise ValueError("need lam > 0, batch_size >= 1, epochs >= 1, iterations >= 1")
        if self.gamma != 1.0:
            raise ValueError("only gamma = 1 is supported (all steps share the terminal return)")
        if self.mode not in ("sample", "greedy"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.time_metric not in ("work_units", "wall"):
            raise ValueError(f"unknown time metric {self.time_metric!r}")


@dataclass
class Step:
    features: np.ndarray  # (candidates, N_FEATURES)
    action: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if not 0 <= self.action < self.features.shape[0]:
            raise ValueError(f"action {self.action} outside {self.features.shape[0]} candidates")


@dataclass
class Trajectory:
    problem_id: str
    steps: list
    work_units: int
    baseline: int | None = None
    status: str = OPT
    wall_seconds: float = 0.0

    @property
    def complete(self) -> bool:
        return self.status == OPT

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "status": self.status,
            "work_units": int(self.work_units),
            "baseline": None if self.baseline is None else int(self.baseline),
            "steps": [{"action": s.action, "features": s.features.tolist()} for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        steps = [Step(np.array(s["features"], dtype=np.float64).reshape(-1, policy.N_FEATURES),
                      int(s["action"])) for s in d["steps"]]
        return cls(d["problem_id"], steps, int(d["work_units"]), d.get("baseline"), d["status"])


class TrajectoryStore:
    """Append-only list of trajectories; one JSON object per line on disk."""

    def __init__(self, records=None):
        self.records: list[Trajectory] = list(records or [])

    def append(self, traj: Trajectory) -> None:
        self.records.append(traj)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def baselines(self) -> dict:
        return {r.problem_id: r.baseline for r in self.records if r.baseline is not None}

    def pairs(self, include_partial: bool = False) -> list:
        return [s for r in self.records if include_partial or r.complete for s in r.steps]

    def dumps(self) -> str:
        head = json.dumps({"schema": STORE_SCHEMA, "n_features": policy.N_FEATURES,
                           "feature_hash": policy.FEATURE_HASH.hex()})
        return "\n".join([head] + [json.dumps(r.to_dict(), separators=(",", ":"))
                                   for r in self.records]) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "TrajectoryStore":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise ValueError(f"{path}: empty trajectory file")
        head = json.loads(lines[0])
        if head.get("schema") != STORE_SCHEMA:
            raise ValueError(f"{path}: not a trajectory store")
        if head.get("feature_hash") != policy.FEATURE_HASH.hex():
            raise ValueError(f"{path}: recorded with a different feature list")
        return cls(Trajectory.from_dict(json.loads(ln)) for ln in lines[1:] if ln.strip())


class _Recorder:
    """Wraps a rule and logs the pre-decision features with the chosen row."""

    def __init__(self, rule):
        self.rule = rule
        self.name = getattr(rule, "name", "rule")
        self.steps: list[Step] = []

    def select(self, ctx):
        feats = policy.featurize(ctx)  # before the rule's probes touch the store
        d = self.rule.select(ctx)
        if not d.prune:
            idx = int(np.searchsorted(ctx.candidates, d.chosen_column))
            self.steps.append(Step(feats, idx))
        return d


def collect_expert(problems, limits: Limits | None = None, rule_factory=ReliabilityPseudocost
                   ) -> TrajectoryStore:
    """Solve each ``(problem_id, MilpProblem)`` with the expert and record its choices.

    The expert's terminal work units become the problem's baseline. Solves that
    stop at a limit are kept with ``status`` set accordingly.
    """
    store = TrajectoryStore()
    for pid, prob in problems:
        rec = _Recorder(rule_factory())
        bb = BranchAndBound(prob, rec, limits)
        st = bb.run()
        store.append(Trajectory(str(pid), rec.steps, st.work_units, st.work_units, st.status,
                                st.wall_time))
    return store


def nll(net: policy.PolicyNetwork, step: Step) -> float:
    z = net.logits(step.features)
    m = z.max()
    return float(m + math.log(np.exp(z - m).sum()) - z[step.action])


def il_gradient(net: policy.PolicyNetwork, batch) -> np.ndarray:
    """Gradient of the mean negative log-probability over ``batch``."""
    g = np.zeros_like(net.flat())
    for s in batch:
        g -= policy.grad_log_prob(net, s.features, s.action)
    return g / len(batch)


@dataclass
class IlResult:
    net: policy.PolicyNetwork
    losses: list  # mean training loss per epoch
    store_digest: str


def train_il(store: TrajectoryStore, cfg: IlConfig = IlConfig(),
             net: policy.PolicyNetwork | None = None, pairs=None) -> IlResult:
    """Minibatch SGD on the expert's negative log-likelihood."""
    pairs = store.pairs() if pairs is None else list(pairs)
    if not pairs:
        raise ValueError("no expert state-action pairs to train on")
    net = policy.PolicyNetwork.init(cfg.seed) if net is None else net.copy()
    w = net.flat()
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            total += sum(nll(net, s) for s in batch)
            w = w - cfg.lr * il_gradient(net, batch)
            net = net.with_flat(w)
        losses.append(total / len(pairs))
    return IlResult(net, losses, store.digest())


def top1_accuracy(net: policy.PolicyNetwork, pairs) -> float:
    pairs = list(pairs)
    if not pairs:
        return math.nan
    hits = sum(int(np.argmax(net.logits(s.features))) == s.action for s in pairs)
    return hits / len(pairs)


def random_baseline(pairs) -> float:
    """Accuracy of a uniform guess measured as ``1 / mean candidate count``."""
    sizes = [s.features.shape[0] for s in pairs]
    return 1.0 / float(np.mean(sizes))


def rl_reward(work: float, baseline: float, lam: float = 1.0, n_steps: int = 1) -> np.ndarray:
    """Return shared by every step of one solve."""
    if not baseline > 0:
        raise ValueError("baseline must be positive")
    return np.full(n_steps, lam * (baseline - work) / baseline)


def reinforce_update(net: policy.PolicyNetwork, episodes, step: float) -> policy.PolicyNetwork:
    """One ascent step from ``episodes`` = [(steps, returns), ...]."""
    n = sum(len(steps) for steps, _ in episodes)
    if n == 0 or all(not np.any(u) for _, u in episodes):
        return net.copy()
    g = np.zeros_like(net.flat())
    for steps, u in episodes:
        for s, uk in zip(steps, u):
            if uk != 0.0:
                g += uk * policy.grad_log_prob(net, s.features, s.action)
    return net.with_flat(net.flat() + step * g / n)


def recycle_schedule(pool, epoch: int, iteration: int, seed: int = 0,
                     batch_size: int = 8) -> list:
    """Problems for one minibatch: a seeded shuffle per epoch, read round-robin."""
    pool = list(pool)
    if not pool:
        raise ValueError("empty problem pool")
    perm = np.random.default_rng([seed, epoch]).permutation(len(pool))
    start = iteration * batch_size
    return [pool[perm[(start + k) % len(pool)]] for k in range(batch_size)]


@dataclass
class RlResult:
    net: policy.PolicyNetwork
    curve: list = field(default_factory=list)  # (epoch, iteration, mean return, n truncated)


def train_rl(problems, net_alpha: policy.PolicyNetwork, cfg: RlConfig,
             baselines: dict, limits: Limits | None = None) -> RlResult:
    """REINFORCE fine-tuning starting from ``net_alpha``.

    ``problems`` maps problem ids to MILPs and ``baselines`` maps the same ids
    to the expert's work units. Solves that hit a limit keep their truncated
    cost, so blow-ups are penalized rather than dropped.
    """
    problems = dict(problems)
    missing = [pid for pid in problems if pid not in baselines]
    if missing:
        raise KeyError(f"no expert baseline for problems {missing}")
    ids = sorted(problems)
    net = net_alpha.copy()
    result = RlResult(net)
    for epoch in range(cfg.epochs):
        for it in range(cfg.iterations):
            batch = recycle_schedule(ids, epoch, it, cfg.seed, cfg.batch_size)
            episodes, rets, n_trunc = [], [], 0
            for slot, pid in enumerate(batch):
                rec = []
                rule = policy.PolicyRule(net, cfg.mode, seed=[cfg.seed, epoch, it, slot],
                                         recorder=rec)
                st = BranchAndBound(problems[pid], rule, limits).run()
                n_trunc += st.status != OPT
                cost = st.work_units if cfg.time_metric == "work_units" else st.wall_time
                u = rl_reward(cost, baselines[pid], cfg.lam, len(rec))
                episodes.append(([Step(f, a) for f, a in rec], u))
                rets.append(cfg.lam * (baselines[pid] - cost) / baselines[pid])
            net = reinforce_update(net, episodes, cfg.step)
            result.curve.append((epoch, it, float(np.mean(rets)), n_trunc))
    result.net = net
    return result

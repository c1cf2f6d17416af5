"""Candidate featurization and the shared-weight scoring network.

Each candidate column is described by 18 numbers: 12 about the variable and 6
about the node (identical across the rows of one node). One small MLP maps a
row to a logit; a softmax over the rows gives the branching distribution, so
the network handles candidate sets of any size.
"""
from __future__ import annotations

import hashlib
import math
import struct
from pathlib import Path

import numpy as np

from .rules import BranchDecision

VARIABLE_FEATURES = (
    "lp_value",
    "fractionality",
    "objective_coef",
    "pseudo_gain_up",
    "pseudo_gain_down",
    "count_up",
    "count_down",
    "ever_branched",
    "reduced_cost_sign",
    "last_branch_depth",
    "path_share_same_unit",
    "time_position",
)
NODE_FEATURES = (
    "depth",
    "gap",
    "local_bound_excess",
    "candidate_share",
    "incumbents",
    "explored",
)
FEATURE_NAMES = VARIABLE_FEATURES + NODE_FEATURES
N_FEATURES = len(FEATURE_NAMES)
FEATURE_HASH = hashlib.sha256(",".join(FEATURE_NAMES).encode()).digest()

ARCH_VERSION = 1
HIDDEN = (64, 32)
MAGIC = b"PCMPOLNT"

COUNT_CAP = 32
INCUMBENT_CAP = 64
DEFAULT_WORK_REF = 100_000


class PolicyFormatError(ValueError):
    """Weights file is truncated or not a policy file."""


class PolicyVersionError(PolicyFormatError):
    """Weights file was written for another architecture or feature list."""


def featurize(ctx) -> np.ndarray:
    """Feature matrix (one row per candidate) for a branching context.

    ``ctx`` needs ``candidates``, ``x``, ``lp``, ``node``, ``state``, ``store``
    and ``prob`` as provided by :class:`pcmbnb.bnb.BranchContext`.
    """
    cands = np.asarray(ctx.candidates)
    k = len(cands)
    prob, st, store, node = ctx.prob, ctx.state, ctx.store, ctx.node
    x = ctx.x[cands]
    F = np.zeros((k, N_FEATURES))
    F[:, 0] = x
    F[:, 1] = np.minimum(x, 1.0 - x)
    cmax = np.abs(prob.objective).max(initial=0.0)
    if cmax > 0:
        F[:, 2] = prob.objective[cands] / cmax
    up, down = store.avg_up(cands), store.avg_down(cands)
    F[:, 3] = up / max(up.max(), 1e-12)
    F[:, 4] = down / max(down.max(), 1e-12)
    scale = math.log1p(COUNT_CAP)
    F[:, 5] = np.log1p(store.up_count[cands]) / scale
    F[:, 6] = np.log1p(store.down_count[cands]) / scale
    last = st.last_branch_depth[cands]
    F[:, 7] = last >= 0
    rc = ctx.lp.reduced_costs
    if rc is not None:
        F[:, 8] = np.sign(rc[cands])
    max_depth = max(st.max_depth, node.depth)
    F[:, 9] = np.where(last >= 0, (last + 1) / (1.0 + max_depth), 0.0)
    meta = prob.col_meta
    if node.bound_changes:
        units = [meta[j][1] for j, _, _ in node.bound_changes]
        share = {}
        for u in units:
            share[u] = share.get(u, 0) + 1
        F[:, 10] = [share.get(meta[j][1], 0) / len(units) for j in cands]
    T = 1 + max(m[2] for m in meta)
    F[:, 11] = [(meta[j][2] + 1) / T for j in cands]

    F[:, 12] = node.depth / (1.0 + max_depth)
    zp, zd = st.z_primal, st.z_dual
    F[:, 13] = 1.0 if not math.isfinite(zp) or not math.isfinite(zd) else \
        (zp - zd) / max(1.0, abs(zp))
    if math.isfinite(zd):
        F[:, 14] = (ctx.lp.objective - zd) / max(1.0, abs(zd))
    F[:, 15] = k / max(1, prob.n_binary)
    F[:, 16] = math.log1p(st.n_incumbents) / math.log1p(INCUMBENT_CAP)
    ref = st.work_limit or DEFAULT_WORK_REF
    F[:, 17] = st.n_explored * 10.0 / ref
    np.clip(F, -1.0, 1.0, out=F)
    return F


class PolicyNetwork:
    """Per-row MLP ``18 -> 64 -> 32 -> 1`` with ReLU between layers."""

    def __init__(self, layers, version: int = ARCH_VERSION, feature_hash: bytes = FEATURE_HASH):
        self.layers = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for W, b in layers]
        self.version = version
        self.feature_hash = feature_hash
        for W, b in self.layers:
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("network weights must be finite")

    @classmethod
    def init(cls, seed: int = 0, dims=(N_FEATURES, *HIDDEN, 1)) -> "PolicyNetwork":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            layers.append((rng.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros(fan_out)))
        return cls(layers)

    @property
    def dims(self) -> tuple:
        return (self.layers[0][0].shape[0],) + tuple(W.shape[1] for W, _ in self.layers)

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork([(W.copy(), b.copy()) for W, b in self.layers],
                             self.version, self.feature_hash)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def with_flat(self, v: np.ndarray) -> "PolicyNetwork":
        layers, pos = [], 0
        for W, b in self.layers:
            nw = W.size
            layers.append((v[pos:pos + nw].reshape(W.shape).copy(),
                           v[pos + nw:pos + nw + b.size].copy()))
            pos += nw + b.size
        return PolicyNetwork(layers, self.version, self.feature_hash)

    def logits(self, F: np.ndarray) -> np.ndarray:
        h = np.asarray(F, dtype=np.float64)
        for W, b in self.layers[:-1]:
            h = np.maximum(h @ W + b, 0.0)
        W, b = self.layers[-1]
        return (h @ W + b)[:, 0]


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def forward(net: PolicyNetwork, feats: np.ndarray) -> np.ndarray:
    """Probability of each candidate row."""
    return softmax(net.logits(feats))


def grad_log_prob(net: PolicyNetwork, feats: np.ndarray, action: int) -> np.ndarray:
    """Gradient of ``log p(action)`` with respect to the flattened weights."""
    feats = np.asarray(feats, dtype=np.float64)
    k = feats.shape[0]
    if not 0 <= action < k:
        raise IndexError(f"action {action} out of range for {k} candidates")
    pre, acts = [], [feats]
    h = feats
    for W, b in net.layers[:-1]:
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    W, b = net.layers[-1]
    s = (h @ W + b)[:, 0]
    g = -softmax(s)
    g[action] += 1.0
    g = g[:, None]
    grads = []
    for i in range(len(net.layers) - 1, -1, -1):
        W, _ = net.layers[i]
        a = acts[i]
        grads.append((a.T @ g, g.sum(axis=0)))
        if i > 0:
            g = (g @ W.T) * (pre[i - 1] > 0)
    grads.reverse()
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])


def select(net: PolicyNetwork, feats: np.ndarray, mode: str = "greedy",
           rng: np.random.Generator | None = None, candidates=None) -> BranchDecision:
    """Pick a row greedily (first maximum) or by a categorical draw from ``rng``."""
    p = forward(net, feats)
    if mode == "greedy":
        i = int(np.argmax(p))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs a random generator")
        c = np.cumsum(p)
        i = int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(p) - 1))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    col = i if candidates is None else int(np.asarray(candidates)[i])
    return BranchDecision(col, p)


class PolicyRule:
    """Branching rule backed by a policy network.

    With ``recorder`` set, every decision appends ``(features, row index)``.
    """

    name = "policy"

    def __init__(self, net: PolicyNetwork, mode: str = "greedy", seed: int | None = None,
                 recorder: list | None = None):
        self.net = net
        self.mode = mode
        self.rng = np.random.default_rng(seed) if mode == "sample" else None
        self.recorder = recorder

    def select(self, ctx) -> BranchDecision:
        F = featurize(ctx)
        d = select(self.net, F, self.mode, self.rng)
        if self.recorder is not None:
            self.recorder.append((F, d.chosen_column))
        return BranchDecision(int(ctx.candidates[d.chosen_column]), d.scores)


def save(net: PolicyNetwork, path) -> None:
    dims = net.dims
    out = [MAGIC, struct.pack("<I", net.version), net.feature_hash,
           struct.pack("<I", len(net.layers)), struct.pack(f"<{len(dims)}I", *dims)]
    for W, b in net.layers:
        out.append(W.astype("<f8").tobytes(order="C"))
        out.append(b.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load(path) -> PolicyNetwork:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise PolicyFormatError(f"{path}: truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise PolicyFormatError(f"{path}: not a policy weights file")
    (version,) = struct.unpack("<I", take(4))
    if version != ARCH_VERSION:
        raise PolicyVersionError(f"{path}: architecture version {version}, expected {ARCH_VERSION}")
    fhash = take(32)
    if fhash != FEATURE_HASH:
        raise PolicyVersionError(f"{path}: feature list does not match this build")
    (n_layers,) = struct.unpack("<I", take(4))
    dims = struct.unpack(f"<{n_layers + 1}I", take(4 * (n_layers + 1)))
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = np.frombuffer(take(8 * fan_in * fan_out), dtype="<f8").reshape(fan_in, fan_out)
        b = np.frombuffer(take(8 * fan_out), dtype="<f8")
        layers.append((W.astype(np.float64), b.astype(np.float64)))
    if pos != len(data):
        raise PolicyFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return PolicyNetwork(layers, version, fhash)

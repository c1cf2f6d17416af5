import numpy as np
import pytest

from pcmbnb import policy, training
from pcmbnb.bnb import Limits
from pcmbnb.milp import build_milp
from pcmbnb.model import Generator, PcmInstance, tiny_instance
from pcmbnb.policy import N_FEATURES, PolicyNetwork, forward, grad_log_prob
from pcmbnb.training import (IlConfig, RlConfig, Step, Trajectory, TrajectoryStore,
                             collect_expert, il_gradient, nll, recycle_schedule,
                             reinforce_update, rl_reward, train_il, train_rl)


def _forced_problem():
    g = Generator(100.0, 10.0, 100.0, 100.0, 1, 1, 20.0, 0)
    return build_milp(PcmInstance(2, [0], [g], [], [], [[40.0, 70.0]], [60.0, 30.0], [0, 0]))


@pytest.fixture(scope="module")
def tiny_store():
    probs = [(f"t{s}", build_milp(tiny_instance(2 + s % 2, 3 + s % 2, s))) for s in range(8)]
    return collect_expert(probs)


def test_rl_reward_examples():
    assert np.all(rl_reward(1000, 1000, 1.0, 3) == 0.0)
    assert rl_reward(500, 1000, 1.0)[0] == pytest.approx(0.5)
    assert rl_reward(1500, 1000, 1.0)[0] == pytest.approx(-0.5)
    assert np.all(rl_reward(700, 1000, 2.0, 4) == 2 * rl_reward(700, 1000, 1.0, 4))
    with pytest.raises(ValueError):
        rl_reward(10, 0)


def test_configs_validate():
    with pytest.raises(ValueError):
        IlConfig(epochs=0)
    with pytest.raises(ValueError):
        IlConfig(lr=0)
    with pytest.raises(ValueError):
        RlConfig(lam=0)
    with pytest.raises(ValueError):
        RlConfig(gamma=0.9)
    d = IlConfig()
    assert (d.lr, d.batch_size, d.epochs) == (1e-3, 32, 50)
    r = RlConfig()
    assert (r.step, r.batch_size, r.lam, r.mode) == (1e-4, 8, 1.0, "sample")


def test_root_solved_problem_gives_empty_trajectory():
    store = collect_expert([("forced", _forced_problem())])
    (traj,) = store.records
    assert traj.steps == [] and traj.baseline == traj.work_units > 0
    assert store.baselines == {"forced": traj.work_units}


def test_recorded_actions_replay(tiny_store):
    assert any(r.steps for r in tiny_store)
    for r in tiny_store:
        assert r.complete
        for s in r.steps:
            assert 0 <= s.action < s.features.shape[0]
            assert s.features.shape[1] == N_FEATURES


def test_recollection_is_byte_identical(tiny_store, tmp_path):
    probs = [(f"t{s}", build_milp(tiny_instance(2 + s % 2, 3 + s % 2, s))) for s in range(8)]
    again = collect_expert(probs)
    assert again.dumps() == tiny_store.dumps()
    tiny_store.save(tmp_path / "s.jsonl")
    back = TrajectoryStore.load(tmp_path / "s.jsonl")
    assert back.dumps() == tiny_store.dumps()


def test_partial_trajectories_excluded_by_default():
    store = TrajectoryStore([
        Trajectory("a", [Step(np.zeros((2, N_FEATURES)), 1)], 100, 100, "optimal"),
        Trajectory("b", [Step(np.zeros((3, N_FEATURES)), 2)], 100, 100, "limit"),
    ])
    assert len(store.pairs()) == 1 and len(store.pairs(include_partial=True)) == 2
    with pytest.raises(ValueError):
        Step(np.zeros((2, N_FEATURES)), 2)


def test_il_gradient_is_mean_negative_score(tiny_store):
    pairs = tiny_store.pairs()[:6]
    net = PolicyNetwork.init(1)
    g = il_gradient(net, pairs)
    manual = -np.mean([grad_log_prob(net, s.features, s.action) for s in pairs], axis=0)
    assert np.allclose(g, manual)
    # central differences of the mean loss along a random direction
    rng = np.random.default_rng(0)
    v = rng.normal(size=g.size)
    h = 1e-5
    w = net.flat()
    loss = lambda ww: np.mean([nll(net.with_flat(ww), s) for s in pairs])
    num = (loss(w + h * v) - loss(w - h * v)) / (2 * h)
    assert num == pytest.approx(g @ v, rel=1e-5)


def test_memorizes_single_pair():
    rng = np.random.default_rng(3)
    s = Step(rng.uniform(-1, 1, (5, N_FEATURES)), 3)
    store = TrajectoryStore([Trajectory("p", [s] * 4, 1, 1)])
    res = train_il(store, IlConfig(epochs=200, lr=0.1, batch_size=4))
    assert res.losses[-1] < 0.01


def test_default_training_descends(tiny_store):
    res = train_il(tiny_store)
    assert len(res.losses) == 50
    assert res.losses[-1] <= res.losses[0]
    assert res.store_digest == tiny_store.digest()
    again = train_il(tiny_store)
    assert np.array_equal(again.net.flat(), res.net.flat())


def test_empty_store_rejected():
    with pytest.raises(ValueError):
        train_il(TrajectoryStore())


def test_zero_returns_leave_weights_bit_identical(tiny_store):
    net = PolicyNetwork.init(2)
    eps = [(r.steps, np.zeros(len(r.steps))) for r in tiny_store]
    out = reinforce_update(net, eps, 0.5)
    assert out.flat().tobytes() == net.flat().tobytes()


def test_update_scales_with_lambda(tiny_store):
    net = PolicyNetwork.init(4)
    steps = tiny_store.pairs()[:5]
    w = net.flat()
    d1 = reinforce_update(net, [(steps, rl_reward(600, 1000, 1.0, 5))], 1e-3).flat() - w
    d2 = reinforce_update(net, [(steps, rl_reward(600, 1000, 2.0, 5))], 1e-3).flat() - w
    assert np.allclose(d2, 2 * d1, rtol=1e-6, atol=1e-15)


def test_equal_returns_follow_il_direction(tiny_store):
    net = PolicyNetwork.init(5)
    steps = tiny_store.pairs()[:7]
    u = 0.3
    d = reinforce_update(net, [(steps, np.full(7, u))], 1.0).flat() - net.flat()
    ascent = -il_gradient(net, steps)
    assert np.allclose(d, u * ascent, rtol=1e-9, atol=1e-12)


def test_two_action_bandit_improves_monotonically():
    net = PolicyNetwork.init(0)
    rng = np.random.default_rng(7)
    feats = rng.uniform(-1, 1, (2, N_FEATURES))
    reward = {0: 1.0, 1: -1.0}
    p0 = [forward(net, feats)[0]]
    for _ in range(50):
        a = policy.select(net, feats, "sample", rng).chosen_column
        net = reinforce_update(net, [([Step(feats, a)], np.array([reward[a]]))], 0.05)
        p0.append(forward(net, feats)[0])
    assert all(b > a for a, b in zip(p0, p0[1:]))
    assert p0[-1] > p0[0] + 0.1


def test_recycle_schedule_contract():
    pool = list(range(8))
    assert sorted(recycle_schedule(pool, 0, 0, seed=1, batch_size=8)) == pool
    e0 = recycle_schedule(pool, 0, 0, seed=1, batch_size=8)
    e1 = recycle_schedule(pool, 1, 0, seed=1, batch_size=8)
    assert e0 != e1 and sorted(e1) == pool
    assert recycle_schedule(pool, 0, 0, seed=1, batch_size=8) == e0


@pytest.mark.parametrize("pool_size,bs,iters", [(5, 3, 4), (8, 8, 1), (7, 2, 3), (3, 4, 5)])
def test_recycle_coverage_counts(pool_size, bs, iters):
    pool = [f"p{i}" for i in range(pool_size)]
    for epoch in range(3):
        seen = [pid for it in range(iters) for pid in recycle_schedule(pool, epoch, it, 9, bs)]
        counts = [seen.count(p) for p in pool]
        lo, hi = (iters * bs) // pool_size, -(-(iters * bs) // pool_size)
        assert all(lo <= c <= hi for c in counts)
        if pool_size <= bs * iters:
            assert min(counts) >= 1


def test_train_rl_runs_and_is_reproducible(tiny_store):
    probs = {f"t{s}": build_milp(tiny_instance(2 + s % 2, 3 + s % 2, s)) for s in range(8)}
    alpha = train_il(tiny_store, IlConfig(epochs=5)).net
    cfg = RlConfig(epochs=1, iterations=2, batch_size=4, step=1e-3, seed=3)
    a = train_rl(probs, alpha, cfg, tiny_store.baselines)
    b = train_rl(probs, alpha, cfg, tiny_store.baselines)
    assert a.net.flat().tobytes() == b.net.flat().tobytes()
    assert len(a.curve) == 2 and a.curve == b.curve
    with pytest.raises(KeyError):
        train_rl(probs, alpha, cfg, {})


def test_truncated_solves_are_flagged(tiny_store):
    probs = {f"t{s}": build_milp(tiny_instance(2 + s % 2, 3 + s % 2, s)) for s in range(8)}
    alpha = PolicyNetwork.init(0)
    cfg = RlConfig(iterations=1, batch_size=8, step=1e-3)
    res = train_rl(probs, alpha, cfg, tiny_store.baselines, Limits(nodes=1))
    assert res.curve[0][3] > 0

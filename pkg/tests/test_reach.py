import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atara_lab.atara.ppo import PpoConfig
from atara_lab.atara.reach import (
    ReachEnv,
    ReachEnvConfig,
    TrainingDiverged,
    _diverging,
    apply_action,
    child_rng,
    load_policy,
    reward,
    rollout_policy,
    save_policy,
    solve_ik_rl,
    train_reach_policy,
)
from atara_lab.kinematics import LEFT_WORKSPACE, default_chain, eef_positions

TINY = PpoConfig(actor_hidden=[32, 32], critic_hidden=[32, 32])
TINY_ENV = ReachEnvConfig(num_envs=16, horizon=20)


def test_reward_is_negative_squared_distance(chains):
    chain = chains[0]
    e = eef_positions(chain, chain.home)
    assert reward(chain, chain.home, e) == pytest.approx(0.0, abs=1e-15)
    assert reward(chain, chain.home, e + [0.03, 0.04, 0.0]) == pytest.approx(-0.0025)
    with pytest.raises(ValueError):
        reward(chain, chain.home, [np.nan, 0, 0])


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_action_step_is_bounded(a):
    chain = default_chain("left")
    q0 = chain.joint_limits.mean(1)
    q1 = apply_action(chain, q0, np.array(a), 0.05)
    assert np.all(np.abs(q1 - q0) <= 0.05 + 1e-12)
    np.testing.assert_array_equal(q1[3:], q0[3:])
    assert np.all((q1 >= chain.lo) & (q1 <= chain.hi))


def test_action_clamps_at_limits(chains):
    chain = chains[0]
    q = apply_action(chain, chain.hi, np.ones(3), 0.05)
    np.testing.assert_array_equal(q, chain.hi)


def test_env_terminates_within_radius(chains):
    env = ReachEnv(chains[0], LEFT_WORKSPACE, ReachEnvConfig(num_envs=2, horizon=5), seed=0)
    env.w[0] = eef_positions(env.chain, env.q[0])
    r, term, tout, fin, _ = env.step(np.zeros((2, 3)))
    assert term[0] and not tout[0]
    assert fin[0] < 0.01 and np.isnan(fin[1])
    assert r[0] > -1e-4


def test_env_times_out(chains):
    env = ReachEnv(chains[0], LEFT_WORKSPACE, ReachEnvConfig(num_envs=3, horizon=4), seed=0)
    for _ in range(3):
        *_, tout, _, _ = env.step(np.zeros((3, 3)))
        assert not tout.any()
    _, term, tout, _, _ = env.step(np.zeros((3, 3)))
    assert (term | tout).all()


def test_env_streams_are_per_index(chains):
    a = ReachEnv(chains[0], LEFT_WORKSPACE, ReachEnvConfig(num_envs=3), seed=9)
    b = ReachEnv(chains[0], LEFT_WORKSPACE, ReachEnvConfig(num_envs=6), seed=9)
    np.testing.assert_array_equal(a.w, b.w[:3])
    assert child_rng(9, 1).random() == child_rng(9, 1).random()
    assert child_rng(9, 1).random() != child_rng(9, 2).random()


def test_targets_stay_in_workspace(chains):
    env = ReachEnv(chains[0], LEFT_WORKSPACE, ReachEnvConfig(num_envs=64), seed=3)
    assert LEFT_WORKSPACE.contains(env.w).all()


def test_divergence_detector():
    assert not _diverging([1.0] * 10, patience=3, factor=1.5)
    assert _diverging([1.0] * 6 + [2.0] * 3, patience=3, factor=1.5)
    assert not _diverging([5.0, 5.0, 1.0, 1.0, 1.0, 1.0], patience=2, factor=1.5, warmup=2)
    assert not _diverging([1.0, 2.0], patience=0, factor=1.5)


def test_training_is_reproducible(chains):
    budget = TINY_ENV.num_envs * TINY.steps_per_env * 3
    p1 = train_reach_policy(chains[0], LEFT_WORKSPACE, TINY, budget, seed=4, env_cfg=TINY_ENV)
    p2 = train_reach_policy(chains[0], LEFT_WORKSPACE, TINY, budget, seed=4, env_cfg=TINY_ENV)
    assert len(p1.meta["curve"]) == 3
    assert np.array_equal(np.array(p1.meta["curve"]), np.array(p2.meta["curve"]), equal_nan=True)
    for a, b in zip(p1.parameters(), p2.parameters()):
        assert (a == b).all()


def test_nonfinite_loss_raises_training_diverged(chains, tmp_path, monkeypatch):
    from atara_lab.atara import reach
    from atara_lab.atara.ppo import PpoDivergenceError

    def boom(*args, **kwargs):
        raise PpoDivergenceError("non-finite PPO loss")

    monkeypatch.setattr(reach, "ppo_update", boom)
    budget = TINY_ENV.num_envs * TINY.steps_per_env * 3
    with pytest.raises(TrainingDiverged) as err:
        train_reach_policy(chains[0], LEFT_WORKSPACE, TINY, budget, seed=0, env_cfg=TINY_ENV,
                           save_path=tmp_path / "p.pt")
    assert err.value.report.diverged
    assert (tmp_path / "p.pt").exists()


def test_save_load_roundtrip(chains, tmp_path, rng):
    pol = train_reach_policy(chains[0], LEFT_WORKSPACE, TINY, 0, seed=0, env_cfg=TINY_ENV)
    path = save_policy(pol, tmp_path / "pol.pt")
    again = load_policy(path)
    obs = np.concatenate([LEFT_WORKSPACE.sample(rng, 4), rng.uniform(chains[0].lo, chains[0].hi, (4, 6))], 1)
    np.testing.assert_array_equal(pol.act_deterministic(obs), again.act_deterministic(obs))
    assert (tmp_path / "pol_curve.json").exists()


def test_rollout_freezes_on_success(chains):
    pol = train_reach_policy(chains[0], LEFT_WORKSPACE, TINY, 0, seed=0, env_cfg=TINY_ENV)
    e = eef_positions(chains[0], chains[0].home)
    q, err, steps = rollout_policy(pol, chains[0], e[None], chains[0].home, 10, 0.05)
    assert steps[0] == 0 and err[0] < 1e-12
    np.testing.assert_array_equal(q[0], chains[0].home)


def test_solve_ik_rejects_outside_target(chains):
    pol = train_reach_policy(chains[0], LEFT_WORKSPACE, TINY, 0, seed=0, env_cfg=TINY_ENV)
    with pytest.raises(ValueError):
        solve_ik_rl(pol, chains[0], [2.0, 0.0, 0.8], workspace=LEFT_WORKSPACE)
    q = solve_ik_rl(pol, chains[0], [0.5, 0.1, 0.8], horizon=5)
    assert q.shape == (6,)

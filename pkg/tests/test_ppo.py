import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from atara_lab.atara.ppo import (
    EmpiricalNormalizer,
    PpoConfig,
    PpoDivergenceError,
    ReachPolicy,
    RolloutBuffer,
    adapt_learning_rate,
    clipped_surrogate,
    gae_advantages,
    gaussian_kl,
    ppo_update,
)
from atara_lab.kinematics import eef_positions

from oracles import gae_oracle


def test_default_hyperparameters():
    cfg = PpoConfig()
    assert (cfg.clip, cfg.value_clip, cfg.value_coeff) == (0.2, True, 1.0)
    assert (cfg.desired_kl, cfg.entropy_coeff) == (0.01, 0.01)
    assert (cfg.gamma, cfg.gae_lambda, cfg.grad_clip, cfg.lr) == (0.98, 0.95, 1.0, 1e-3)
    assert cfg.schedule == "adaptive"
    assert (cfg.minibatches, cfg.steps_per_env, cfg.epochs) == (4, 24, 5)
    assert cfg.actor_hidden == cfg.critic_hidden == [512, 256, 128]
    assert cfg.activation == "elu" and cfg.empirical_normalization


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="bogus"):
        PpoConfig.from_dict({"bogus": 1})
    assert PpoConfig.from_dict(PpoConfig(lr=3e-4).to_dict()).lr == 3e-4


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=20), st.floats(-1, 1), st.floats(0.5, 1.0), st.floats(0, 1))
def test_gae_matches_direct_sum(rewards, boot, gamma, lam):
    r = np.array(rewards)
    v = np.linspace(-1, 1, len(r))
    adv, ret = gae_advantages(r, v, gamma, lam, bootstrap=boot)
    np.testing.assert_allclose(adv, gae_oracle(r, v, boot, gamma, lam), atol=1e-9)
    np.testing.assert_allclose(ret, adv + v)


def test_gae_stops_at_terminal():
    r = np.array([1.0, 1.0, 1.0])
    v = np.zeros(3)
    adv, _ = gae_advantages(r, v, 0.9, 1.0, dones=[0, 1, 0], bootstrap=10.0)
    np.testing.assert_allclose(adv, [1.0 + 0.9, 1.0, 1.0 + 9.0])


def test_gae_rejects_length_mismatch():
    with pytest.raises(ValueError):
        gae_advantages(np.zeros(3), np.zeros(5), 0.9, 0.9)


def test_learning_rate_adaptation():
    cfg = PpoConfig()
    assert adapt_learning_rate(1e-3, 0.03, cfg) == pytest.approx(5e-4)
    assert adapt_learning_rate(1e-3, 0.004, cfg) == pytest.approx(1.5e-3)
    assert adapt_learning_rate(1e-3, 0.01, cfg) == pytest.approx(1e-3)
    assert adapt_learning_rate(cfg.lr_max, 0.0, cfg) == cfg.lr_max


def test_clipped_surrogate_values():
    ratio = torch.tensor([1.5, 0.5, 1.5, 0.5, 1.1])
    adv = torch.tensor([1.0, 1.0, -1.0, -1.0, 2.0])
    np.testing.assert_allclose(clipped_surrogate(ratio, adv, 0.2).numpy(), [1.2, 0.5, -1.5, -0.8, 2.2], rtol=1e-6)


def test_gaussian_kl_closed_form():
    mu0, s0 = torch.tensor([[0.1, -0.3]]), torch.tensor([[0.5, 1.0]])
    mu1, s1 = torch.tensor([[0.0, 0.2]]), torch.tensor([[0.7, 0.8]])
    p = torch.distributions.Normal(mu0, s0)
    q = torch.distributions.Normal(mu1, s1)
    expected = torch.distributions.kl_divergence(p, q).sum(-1)
    torch.testing.assert_close(gaussian_kl(mu0, s0, mu1, s1), expected, atol=1e-4, rtol=0)


def test_normalizer_matches_batch_statistics(rng):
    norm = EmpiricalNormalizer(3)
    data = rng.normal([1, -2, 5], [0.5, 2, 3], size=(1000, 3))
    for chunk in np.array_split(data, 7):
        norm.update(torch.as_tensor(chunk))
    np.testing.assert_allclose(norm.mean.numpy(), data.mean(0), atol=1e-10)
    np.testing.assert_allclose(norm.var.numpy(), data.var(0), atol=1e-10)


def _small_policy(chain, **kw):
    cfg = PpoConfig(actor_hidden=[16], critic_hidden=[16], **kw)
    return ReachPolicy(9, 3, cfg, chain), cfg


def test_feature_layout(chains, rng):
    chain = chains[0]
    pol, _ = _small_policy(chain, error_direction_feature=True)
    q = rng.uniform(chain.lo, chain.hi, (5, 6))
    w = rng.uniform(0.4, 0.6, (5, 3))
    f = pol.features(np.concatenate([w, q], 1)).numpy().astype(float)
    assert f.shape == (5, 16)
    err = w - eef_positions(chain, q)
    np.testing.assert_allclose(f[:, 9:12], err, atol=1e-6)
    np.testing.assert_allclose(f[:, 15], np.linalg.norm(err, axis=1), atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(f[:, 12:15], axis=1), 1.0, atol=1e-5)


def test_error_feature_needs_chain():
    with pytest.raises(ValueError):
        ReachPolicy(9, 3, PpoConfig(), None)


def _buffer(pol, n=64):
    g = torch.Generator().manual_seed(0)
    obs = torch.randn(n, pol.actor[0].in_features, generator=g)
    with torch.no_grad():
        d = pol.distribution(obs)
        act = d.sample()
        return RolloutBuffer(obs, act, d.log_prob(act).sum(-1), d.mean, d.stddev, pol.value(obs),
                             torch.randn(n, generator=g), torch.randn(n, generator=g))


def test_ppo_update_runs_and_reports(chains):
    pol, cfg = _small_policy(chains[0])
    opt = torch.optim.Adam(pol.parameters(), lr=cfg.lr)
    stats = ppo_update(pol, _buffer(pol), opt, cfg, torch.Generator().manual_seed(1))
    assert set(stats) == {"surrogate", "value", "entropy", "kl", "lr"}
    assert all(math.isfinite(v) for v in stats.values())


def test_nan_loss_restores_parameters(chains):
    pol, cfg = _small_policy(chains[0])
    opt = torch.optim.Adam(pol.parameters(), lr=cfg.lr)
    buf = _buffer(pol)
    buf.returns[3] = float("nan")
    before = {k: v.clone() for k, v in pol.state_dict().items()}
    with pytest.raises(PpoDivergenceError):
        ppo_update(pol, buf, opt, cfg)
    for k, v in pol.state_dict().items():
        torch.testing.assert_close(v, before[k], rtol=0, atol=0)


def test_update_is_reproducible(chains):
    outs = []
    for _ in range(2):
        torch.manual_seed(5)
        pol, cfg = _small_policy(chains[0])
        opt = torch.optim.Adam(pol.parameters(), lr=cfg.lr)
        ppo_update(pol, _buffer(pol), opt, cfg, torch.Generator().manual_seed(2))
        outs.append(torch.cat([p.detach().flatten() for p in pol.parameters()]))
    torch.testing.assert_close(outs[0], outs[1], rtol=0, atol=0)

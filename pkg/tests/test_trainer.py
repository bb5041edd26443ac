"""PPO trainer: advantage estimation, clip objective, update mechanics."""

import copy

import numpy as np
import pytest
import torch

from dronenav import trainer as T
from dronenav.policy import init_policy
from dronenav.trainer import (
    Hyperparams,
    RolloutBuffer,
    compute_gae,
    ppo_clip_objective,
    ppo_loss,
    update,
)


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------


def _gae_reference(rewards, values, dones, gamma, lam, bootstrap):
    """Independent forward-sum oracle: A_t = sum_k (gamma*lam)^k delta_{t+k}."""
    n = len(rewards)
    vals = list(values) + [bootstrap]
    deltas = [
        rewards[t] + gamma * vals[t + 1] * (1.0 - float(dones[t])) - vals[t]
        for t in range(n)
    ]
    adv = np.zeros(n)
    for t in range(n):
        acc, scale = 0.0, 1.0
        for k in range(t, n):
            acc += scale * deltas[k]
            if dones[k]:
                break
            scale *= gamma * lam
        adv[t] = acc
    return adv, adv + np.asarray(values)


def test_gae_matches_forward_sum_oracle():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n = int(rng.integers(1, 40))
        rewards = rng.normal(size=n)
        values = rng.normal(size=n)
        dones = rng.random(n) < 0.15
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
        boot = float(rng.normal())
        adv, ret = compute_gae(rewards, values, dones, gamma, lam, bootstrap_value=boot)
        want_adv, want_ret = _gae_reference(rewards, values, dones, gamma, lam, boot)
        assert np.allclose(adv, want_adv, atol=1e-12)
        assert np.allclose(ret, want_ret, atol=1e-12)


def test_gae_lambda_one_gamma_one_telescopes():
    # with gamma = lam = 1 and no dones, advantage = sum future rewards
    # + bootstrap - v_t
    rewards = [1.0, -2.0, 0.5, 3.0]
    values = [0.3, -0.1, 0.7, 0.2]
    adv, ret = compute_gae(rewards, values, [False] * 4, 1.0, 1.0, bootstrap_value=0.4)
    tails = np.cumsum(rewards[::-1])[::-1] + 0.4
    assert np.allclose(adv, tails - np.asarray(values), atol=1e-12)
    assert np.allclose(ret, tails, atol=1e-12)


def test_gae_lambda_zero_is_td_error():
    rewards = [1.0, 2.0]
    values = [0.5, 1.5]
    adv, _ = compute_gae(rewards, values, [False, False], 0.9, 0.0, bootstrap_value=2.0)
    assert adv[0] == pytest.approx(1.0 + 0.9 * 1.5 - 0.5)
    assert adv[1] == pytest.approx(2.0 + 0.9 * 2.0 - 1.5)


def test_gae_done_cuts_bootstrap():
    adv, _ = compute_gae([1.0], [0.0], [True], 0.99, 0.95, bootstrap_value=100.0)
    assert adv[0] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# clip objective
# ---------------------------------------------------------------------------


def test_clip_objective_hand_values():
    assert ppo_clip_objective(1.0, 2.0, 0.3) == pytest.approx(2.0)
    assert ppo_clip_objective(1.5, 1.0, 0.3) == pytest.approx(1.3)
    assert ppo_clip_objective(0.5, -1.0, 0.3) == pytest.approx(-0.7)
    assert ppo_clip_objective(0.5, 1.0, 0.3) == pytest.approx(0.5)
    assert ppo_clip_objective(2.0, -1.0, 0.3) == pytest.approx(-2.0)


def test_clip_objective_never_exceeds_unclipped_for_positive_advantage():
    rng = np.random.default_rng(5)
    for _ in range(200):
        r = float(rng.uniform(0.0, 3.0))
        a = float(rng.uniform(0.0, 2.0))
        assert ppo_clip_objective(r, a, 0.2) <= r * a + 1e-12


# ---------------------------------------------------------------------------
# loss and update
# ---------------------------------------------------------------------------


def _toy_buffer(rng, n=64, n_actions=5, side=20):
    return RolloutBuffer(
        observations=rng.uniform(-1, 1, (n, 1, side, side)).astype(np.float32),
        actions=rng.integers(0, n_actions, n).astype(np.int64),
        log_probs=np.log(np.full(n, 1.0 / n_actions, dtype=np.float32)),
        values=rng.normal(size=n).astype(np.float32),
        advantages=rng.normal(size=n).astype(np.float32),
        returns=rng.normal(size=n).astype(np.float32),
    )


def test_loss_gradient_matches_finite_differences():
    torch.manual_seed(0)
    net = init_policy(3, side=4, seed=0).to(torch.float64)
    rng = np.random.default_rng(7)
    hp = Hyperparams(minibatch_size=8)
    obs = torch.from_numpy(rng.uniform(-1, 1, (8, 1, 4, 4)))
    actions = torch.from_numpy(rng.integers(0, 3, 8))
    old_logp = torch.from_numpy(np.log(rng.uniform(0.2, 0.4, 8)))
    adv = torch.from_numpy(rng.normal(size=8))
    ret = torch.from_numpy(rng.normal(size=8))

    total, _ = ppo_loss(net, obs, actions, old_logp, adv, ret, hp)
    net.zero_grad()
    total.backward()

    param = net.action_head.bias
    grad = param.grad.clone()
    eps = 1e-6
    for k in range(3):
        with torch.no_grad():
            param[k] += eps
        up, _ = ppo_loss(net, obs, actions, old_logp, adv, ret, hp)
        with torch.no_grad():
            param[k] -= 2 * eps
        down, _ = ppo_loss(net, obs, actions, old_logp, adv, ret, hp)
        with torch.no_grad():
            param[k] += eps
        fd = (up.item() - down.item()) / (2 * eps)
        assert fd == pytest.approx(float(grad[k]), abs=1e-4)


def test_infinite_clip_range_equals_plain_surrogate():
    torch.manual_seed(1)
    net = init_policy(5, side=6, seed=1).to(torch.float64)
    rng = np.random.default_rng(11)
    hp = Hyperparams()
    obs = torch.from_numpy(rng.uniform(-1, 1, (16, 1, 6, 6)))
    actions = torch.from_numpy(rng.integers(0, 5, 16))
    old_logp = torch.from_numpy(np.log(rng.uniform(0.1, 0.3, 16)))
    adv = torch.from_numpy(rng.normal(size=16))
    ret = torch.from_numpy(rng.normal(size=16))
    total, report = ppo_loss(net, obs, actions, old_logp, adv, ret, hp, clip_range=1e9)
    logits, values = net(obs)
    logp = torch.log_softmax(logits, -1).gather(1, actions.unsqueeze(1)).squeeze(1)
    ratio = torch.exp(logp - old_logp)
    plain = (
        -(ratio * adv).mean()
        + hp.value_coef * ((values - ret) ** 2).mean()
        - hp.entropy_coef
        * (-(torch.softmax(logits, -1) * torch.log_softmax(logits, -1)).sum(-1).mean())
    )
    assert total.item() == pytest.approx(plain.item(), abs=1e-9)
    assert report.clip_fraction == 0.0


def test_update_zero_lr_leaves_params_unchanged():
    net = init_policy(5, seed=2)
    rng = np.random.default_rng(13)
    before = copy.deepcopy(net.state_dict())
    hp = Hyperparams(learning_rate=0.0, epochs_per_update=2, minibatch_size=32)
    update(net, _toy_buffer(rng), hp, rng=np.random.default_rng(0))
    after = net.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)


def test_update_moves_params_and_is_deterministic():
    rng = np.random.default_rng(17)
    buffer = _toy_buffer(rng)
    hp = Hyperparams(epochs_per_update=2, minibatch_size=32)

    def run():
        net = init_policy(5, seed=3)
        update(net, buffer, hp, rng=np.random.default_rng(1))
        return net.state_dict()

    a, b = run(), run()
    init = init_policy(5, seed=3).state_dict()
    assert any(not torch.equal(a[k], init[k]) for k in a)
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(clip_range=0.0)
    with pytest.raises(ValueError):
        Hyperparams(gamma=1.5)
    hp = Hyperparams()
    assert hp.learning_rate == pytest.approx(3e-4)
    assert hp.clip_range == pytest.approx(0.3)
    assert hp.gamma == pytest.approx(0.99)
    assert hp.gae_lambda == pytest.approx(0.95)


def test_train_zero_cycles_returns_initial_policy(tmp_path):
    from dronenav.env import GridConfig, ScenarioSpec
    from dronenav.policy import forward

    config = GridConfig(width=40, height=40)
    scenario = ScenarioSpec(
        task="reach", n_agents=2, n_targets=2, n_obstacles=0, max_cycles=50,
        metric="manhattan", rules_enabled=False, policy_source="trained",
    )
    hp = Hyperparams(total_cycles=0, rollout_length=64, minibatch_size=32)
    run = T.train(config, scenario, hp, seed=7)
    assert run.cycles_consumed == 0
    assert run.curve == [] or len(run.curve) == 0
    dist = forward(run.params, np.zeros((20, 20), dtype=np.float32))
    assert np.sum(dist.probs) == pytest.approx(1.0, abs=1e-6)


def test_train_same_seed_identical_curves():
    from dronenav.env import GridConfig, ScenarioSpec

    config = GridConfig(width=40, height=40)
    scenario = ScenarioSpec(
        task="reach", n_agents=2, n_targets=2, n_obstacles=0, max_cycles=50,
        metric="manhattan", rules_enabled=False, policy_source="trained",
    )
    hp = Hyperparams(total_cycles=512, rollout_length=256, minibatch_size=64,
                     epochs_per_update=2)
    a = T.train(config, scenario, hp, seed=9, log_every_cycles=256)
    b = T.train(config, scenario, hp, seed=9, log_every_cycles=256)
    assert a.curve == b.curve
    sa, sb = a.params.state_dict(), b.params.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)


def test_write_curve_format(tmp_path):
    path = tmp_path / "curve.csv"
    T.write_curve([(2048, 0.25, -1.5), (4096, 0.5, 0.75)], str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("cycles")
    assert lines[1].startswith("2048,")
    assert len(lines) == 3

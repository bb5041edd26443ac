"""Policy network: inference purity, sampling, parameter files."""

import numpy as np
import pytest
import torch

from dronenav.policy import (
    ActionDistribution,
    ParamsFileError,
    forward,
    greedy_action,
    init_policy,
    load_params,
    sample_action,
    save_params,
)


def _obs(rng=None, side=20):
    if rng is None:
        return np.zeros((side, side), dtype=np.float32)
    return rng.uniform(-1, 1, (side, side)).astype(np.float32)


def test_zero_head_gives_uniform_probs():
    net = init_policy(5, seed=0)
    with torch.no_grad():
        net.action_head.weight.zero_()
        net.action_head.bias.zero_()
    dist = forward(net, _obs())
    assert np.allclose(dist.probs, 0.2, atol=1e-7)


def test_probs_normalized_and_positive(rng):
    net = init_policy(5, seed=1)
    for _ in range(20):
        dist = forward(net, _obs(rng))
        assert dist.probs.shape == (5,)
        assert np.all(dist.probs > 0)
        assert np.sum(dist.probs) == pytest.approx(1.0, abs=1e-6)
        assert np.isfinite(dist.value)


def test_forward_is_pure(rng):
    net = init_policy(5, seed=2)
    obs = _obs(rng)
    a = forward(net, obs)
    b = forward(net, obs)
    assert np.array_equal(a.probs, b.probs)
    assert a.value == b.value
    # params untouched
    before = [p.clone() for p in net.parameters()]
    forward(net, _obs(rng))
    assert all(torch.equal(p, q) for p, q in zip(net.parameters(), before))


def test_shape_mismatch_rejected():
    net = init_policy(5, seed=0)
    with pytest.raises(ValueError):
        forward(net, np.zeros((10, 10), dtype=np.float32))


def test_sampling_frequencies_match_probs(rng):
    dist = ActionDistribution(probs=np.array([0.1, 0.2, 0.3, 0.25, 0.15]), value=0.0)
    n = 20000
    counts = np.zeros(5)
    for _ in range(n):
        counts[int(sample_action(dist, rng))] += 1
    # 4 sigma bound on each binomial frequency
    for k in range(5):
        p = dist.probs[k]
        assert abs(counts[k] / n - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_sampling_deterministic_given_rng_state():
    dist = ActionDistribution(probs=np.full(5, 0.2), value=0.0)
    a = [sample_action(dist, np.random.default_rng(9)) for _ in range(10)]
    b = [sample_action(dist, np.random.default_rng(9)) for _ in range(10)]
    assert a == b


def test_greedy_tie_breaks_lowest_index():
    dist = ActionDistribution(probs=np.array([0.2, 0.3, 0.3, 0.2, 0.0]), value=0.0)
    assert int(greedy_action(dist)) == 1


def test_save_load_roundtrip(tmp_path, rng):
    net = init_policy(5, seed=3)
    path = tmp_path / "params.bin"
    save_params(net, path)
    clone = load_params(path, expected_actions=5)
    obs = _obs(rng)
    a, b = forward(net, obs), forward(clone, obs)
    assert np.allclose(a.probs, b.probs, atol=1e-7)
    assert a.value == pytest.approx(b.value, abs=1e-6)


def test_load_rejects_action_count_mismatch(tmp_path):
    net = init_policy(5, seed=0)
    path = tmp_path / "params.bin"
    save_params(net, path)
    with pytest.raises(ParamsFileError):
        load_params(path, expected_actions=7)


def test_load_rejects_truncation(tmp_path):
    net = init_policy(5, seed=0)
    path = tmp_path / "params.bin"
    save_params(net, path)
    blob = path.read_bytes()
    (tmp_path / "cut.bin").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(ParamsFileError):
        load_params(tmp_path / "cut.bin")
    (tmp_path / "junk.bin").write_bytes(b"\x00" * 64)
    with pytest.raises(ParamsFileError):
        load_params(tmp_path / "junk.bin")


def test_3d_observation_uses_depth_channels(rng):
    net = init_policy(7, in_channels=20, side=20, seed=4)
    obs = rng.uniform(-1, 1, (20, 20, 20)).astype(np.float32)
    dist = forward(net, obs)
    assert dist.probs.shape == (7,)
    assert np.sum(dist.probs) == pytest.approx(1.0, abs=1e-6)


def test_relu_trunk_produces_sparse_activations(rng):
    net = init_policy(5, seed=5)
    x = torch.from_numpy(_obs(rng)[None, None, :, :])
    with torch.no_grad():
        h = net.trunk(x)
    assert torch.all(h >= 0)
    assert (h == 0).float().mean() > 0.05

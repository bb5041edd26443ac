"""From-scratch PPO-Clip trainer over vectorized environments.

Rollouts are collected per (environment, agent) stream so generalized
advantage estimation stays correct when agents die mid-episode. Both agents
share one policy and fill one buffer. Optimization uses the clipped
surrogate plus a value MSE and an entropy bonus, with Adam and gradient
clipping.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import deque
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import env as envm
from . import policy as policym
from .env import Action, EnvState, GridConfig, ScenarioSpec, advance_cycle, create_environment, observation
from .policy import PolicyNet, observation_to_input

logger = logging.getLogger(__name__)


@dataclass
class Hyperparams:
    learning_rate: float = 3e-4
    clip_range: float = 0.3
    clip_range_decay: bool = False     # linear decay with progress remaining
    gamma: float = 0.99
    gae_lambda: float = 0.95
    rollout_length: int = 2048         # cycles per env per rollout
    minibatch_size: int = 256
    epochs_per_update: int = 10
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    total_cycles: int = 400_000
    n_envs: int = 4

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_range <= 0 or self.learning_rate < 0:
            raise ValueError("clip_range must be positive, learning_rate non-negative")


class NonFiniteLossError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Advantage estimation
# ---------------------------------------------------------------------------


def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    gamma: float,
    lam: float,
    bootstrap_value: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """GAE advantages and returns for one stream.

    advantage_t = sum_k (gamma*lam)^k * delta_{t+k}, cut at done flags, with
    delta_t = r_t + gamma * v_{t+1} * (1 - done_t) - v_t. The value after
    the last step is bootstrap_value.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("rewards, values and dones must have equal length")
    n = len(rewards)
    advantages = np.zeros(n, dtype=np.float64)
    last = 0.0
    next_value = bootstrap_value
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        advantages[t] = last
        next_value = values[t]
    return advantages, advantages + values


def ppo_clip_objective(ratio: float, advantage: float, clip_range: float) -> float:
    """min(ratio * A, clamp(ratio, 1-eps, 1+eps) * A)."""
    clipped = min(max(ratio, 1.0 - clip_range), 1.0 + clip_range)
    return min(ratio * advantage, clipped * advantage)


# ---------------------------------------------------------------------------
# Rollout buffer
# ---------------------------------------------------------------------------


@dataclass
class RolloutBuffer:
    observations: np.ndarray   # (N, C, H, W) float32
    actions: np.ndarray        # (N,) int64
    log_probs: np.ndarray      # (N,) float32
    values: np.ndarray         # (N,) float32
    advantages: np.ndarray     # (N,) float32
    returns: np.ndarray        # (N,) float32

    def __len__(self) -> int:
        return len(self.actions)


class _Stream:
    """Per (env, agent) trajectory fragment within one rollout."""

    def __init__(self) -> None:
        self.obs: List[np.ndarray] = []
        self.actions: List[int] = []
        self.log_probs: List[float] = []
        self.values: List[float] = []
        self.rewards: List[float] = []
        self.dones: List[bool] = []
        self.bootstrap: float = 0.0


def build_buffer(streams: Sequence[_Stream], hp: Hyperparams) -> RolloutBuffer:
    obs, actions, logps, values, advs, rets = [], [], [], [], [], []
    for stream in streams:
        if not stream.actions:
            continue
        adv, ret = compute_gae(
            stream.rewards,
            stream.values,
            stream.dones,
            hp.gamma,
            hp.gae_lambda,
            bootstrap_value=stream.bootstrap,
        )
        obs.extend(stream.obs)
        actions.extend(stream.actions)
        logps.extend(stream.log_probs)
        values.extend(stream.values)
        advs.extend(adv.tolist())
        rets.extend(ret.tolist())
    return RolloutBuffer(
        observations=np.stack(obs).astype(np.float32),
        actions=np.asarray(actions, dtype=np.int64),
        log_probs=np.asarray(logps, dtype=np.float32),
        values=np.asarray(values, dtype=np.float32),
        advantages=np.asarray(advs, dtype=np.float32),
        returns=np.asarray(rets, dtype=np.float32),
    )


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


@dataclass
class LossReport:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    total_loss: float


def ppo_loss(
    net: PolicyNet,
    observations: torch.Tensor,
    actions: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    hp: Hyperparams,
    clip_range: Optional[float] = None,
) -> Tuple[torch.Tensor, LossReport]:
    """Total minibatch loss: -clip surrogate + value MSE - entropy bonus."""
    eps = hp.clip_range if clip_range is None else clip_range
    logits, values = net(observations)
    log_probs_all = torch.log_softmax(logits, dim=-1)
    log_probs = log_probs_all.gather(1, actions.unsqueeze(1)).squeeze(1)
    ratio = torch.exp(log_probs - old_log_probs)
    clipped_ratio = torch.clamp(ratio, 1.0 - eps, 1.0 + eps)
    surrogate = torch.minimum(ratio * advantages, clipped_ratio * advantages)
    policy_loss = -surrogate.mean()
    value_loss = torch.mean((values - returns) ** 2)
    entropy = -(log_probs_all.exp() * log_probs_all).sum(dim=-1).mean()
    total = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy
    with torch.no_grad():
        clip_fraction = float(((ratio - 1.0).abs() > eps).float().mean())
    report = LossReport(
        policy_loss=float(policy_loss.detach()),
        value_loss=float(value_loss.detach()),
        entropy=float(entropy.detach()),
        clip_fraction=clip_fraction,
        total_loss=float(total.detach()),
    )
    return total, report


def update(
    net: PolicyNet,
    buffer: RolloutBuffer,
    hp: Hyperparams,
    optimizer: Optional[torch.optim.Optimizer] = None,
    rng: Optional[np.random.Generator] = None,
    clip_range: Optional[float] = None,
) -> LossReport:
    """PPO epochs over shuffled minibatches; returns the mean loss report.

    Advantages are normalized per minibatch before the surrogate.
    """
    if optimizer is None:
        optimizer = torch.optim.Adam(
            net.parameters(), lr=hp.learning_rate, betas=(0.9, 0.999), eps=1e-8
        )
    if rng is None:
        rng = np.random.default_rng(0)
    dtype = next(net.parameters()).dtype
    obs_t = torch.from_numpy(buffer.observations).to(dtype)
    act_t = torch.from_numpy(buffer.actions)
    logp_t = torch.from_numpy(buffer.log_probs).to(dtype)
    adv_t = torch.from_numpy(buffer.advantages).to(dtype)
    ret_t = torch.from_numpy(buffer.returns).to(dtype)
    n = len(buffer)
    reports: List[LossReport] = []
    for _ in range(hp.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, hp.minibatch_size):
            idx = torch.from_numpy(order[start : start + hp.minibatch_size].copy())
            adv = adv_t[idx]
            adv = (adv - adv.mean()) / (adv.std(unbiased=False) + 1e-8)
            total, report = ppo_loss(
                net, obs_t[idx], act_t[idx], logp_t[idx], adv, ret_t[idx], hp,
                clip_range=clip_range,
            )
            if not math.isfinite(report.total_loss):
                raise NonFiniteLossError(
                    f"non-finite loss: policy={report.policy_loss} "
                    f"value={report.value_loss} entropy={report.entropy}"
                )
            optimizer.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(net.parameters(), hp.max_grad_norm)
            optimizer.step()
            reports.append(report)
    return LossReport(
        policy_loss=float(np.mean([r.policy_loss for r in reports])),
        value_loss=float(np.mean([r.value_loss for r in reports])),
        entropy=float(np.mean([r.entropy for r in reports])),
        clip_fraction=float(np.mean([r.clip_fraction for r in reports])),
        total_loss=float(np.mean([r.total_loss for r in reports])),
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainingRun:
    params: PolicyNet
    curve: List[Tuple[int, float, float]]  # (cycles, mean episode reward, success rate)
    cycles_consumed: int
    checkpoints: List[str] = field(default_factory=list)

    @property
    def final_success_rate(self) -> float:
        return self.curve[-1][2] if self.curve else 0.0


class _EnvSlot:
    def __init__(self, index: int) -> None:
        self.index = index
        self.state: Optional[EnvState] = None
        self.episode_reward = 0.0
        self.seed = 0


def train(
    config: GridConfig,
    scenario: ScenarioSpec,
    hp: Hyperparams,
    seed: int,
    checkpoint_dir: Optional[str] = None,
    checkpoint_every: int = 0,
    log_every_cycles: int = 2000,
) -> TrainingRun:
    """Seeded PPO training until total_cycles environment cycles consumed."""
    torch.manual_seed(seed)
    net = PolicyNet(
        config.n_actions, in_channels=config.depth if config.is_3d else 1
    )
    optimizer = torch.optim.Adam(
        net.parameters(), lr=hp.learning_rate, betas=(0.9, 0.999), eps=1e-8
    )
    sample_rng = np.random.default_rng(seed)
    shuffle_rng = np.random.default_rng(seed + 1)
    episode_seed = seed * 1_000_003

    slots = [_EnvSlot(i) for i in range(hp.n_envs)]

    def reset(slot: _EnvSlot) -> None:
        nonlocal episode_seed
        slot.seed = episode_seed
        episode_seed += 1
        slot.state = create_environment(config, scenario, slot.seed)
        slot.episode_reward = 0.0

    for slot in slots:
        reset(slot)

    recent_success: deque = deque(maxlen=100)
    recent_reward: deque = deque(maxlen=100)
    curve: List[Tuple[int, float, float]] = []
    checkpoints: List[str] = []
    cycles = 0
    next_log = 0

    def log_point() -> None:
        curve.append(
            (
                cycles,
                float(np.mean(recent_reward)) if recent_reward else 0.0,
                float(np.mean(recent_success)) if recent_success else 0.0,
            )
        )
        logger.info(
            "cycles=%d mean_episode_reward=%.3f success_rate=%.3f",
            *curve[-1],
        )

    while cycles < hp.total_cycles:
        streams: Dict[Tuple[int, int], _Stream] = {
            (slot.index, agent.id): _Stream()
            for slot in slots
            for agent in slot.state.agents
        }
        remaining = hp.total_cycles - cycles
        rollout_cycles = min(hp.rollout_length, max(1, math.ceil(remaining / hp.n_envs)))
        for _ in range(rollout_cycles):
            # batch all live agents across envs through one forward pass
            keys: List[Tuple[int, int]] = []
            inputs: List[np.ndarray] = []
            for slot in slots:
                for agent in slot.state.live_agents:
                    keys.append((slot.index, agent.id))
                    inputs.append(
                        observation_to_input(observation(slot.state, agent.id))
                    )
            probs, values = policym.forward_batch(net, np.stack(inputs))
            chosen: Dict[Tuple[int, int], Tuple[int, float, float, np.ndarray]] = {}
            for k, key in enumerate(keys):
                p = probs[k].astype(np.float64)
                p = p / p.sum()
                action = int(
                    np.searchsorted(np.cumsum(p), sample_rng.random(), side="right")
                )
                action = min(action, len(p) - 1)
                chosen[key] = (action, math.log(max(p[action], 1e-12)), float(values[k]), inputs[k])
            for slot in slots:
                live = slot.state.live_agents
                actions = [Action(chosen[(slot.index, a.id)][0]) for a in live]
                rewards = advance_cycle(slot.state, actions)
                terminal = slot.state.status() != "running"
                for agent, reward in zip(live, rewards):
                    key = (slot.index, agent.id)
                    action, logp, value, obs_input = chosen[key]
                    stream = streams[key]
                    stream.obs.append(obs_input)
                    stream.actions.append(action)
                    stream.log_probs.append(logp)
                    stream.values.append(value)
                    stream.rewards.append(reward.total)
                    stream.dones.append(terminal or not agent.alive)
                    slot.episode_reward += reward.total
                if terminal:
                    recent_success.append(
                        1.0 if slot.state.status() == "success" else 0.0
                    )
                    recent_reward.append(slot.episode_reward)
                    reset(slot)
            cycles += hp.n_envs
            if cycles >= next_log:
                log_point()
                next_log += log_every_cycles
        # bootstrap values for unfinished streams
        keys = []
        inputs = []
        for slot in slots:
            for agent in slot.state.live_agents:
                keys.append((slot.index, agent.id))
                inputs.append(observation_to_input(observation(slot.state, agent.id)))
        if inputs:
            _, boot_values = policym.forward_batch(net, np.stack(inputs))
            for key, value in zip(keys, boot_values):
                stream = streams.get(key)
                if stream is not None and stream.actions and not stream.dones[-1]:
                    stream.bootstrap = float(value)
        buffer = build_buffer(list(streams.values()), hp)
        progress_remaining = max(0.0, 1.0 - cycles / hp.total_cycles)
        clip = (
            hp.clip_range * progress_remaining if hp.clip_range_decay else hp.clip_range
        )
        update(net, buffer, hp, optimizer=optimizer, rng=shuffle_rng, clip_range=max(clip, 1e-3))
        if checkpoint_dir and checkpoint_every and cycles // checkpoint_every > (
            (cycles - rollout_cycles * hp.n_envs) // checkpoint_every
        ):
            checkpoints.append(save_checkpoint(net, hp, cycles, seed, checkpoint_dir))

    if hp.total_cycles > 0:
        log_point()
    if checkpoint_dir:
        checkpoints.append(save_checkpoint(net, hp, cycles, seed, checkpoint_dir))
    return TrainingRun(params=net, curve=curve, cycles_consumed=cycles, checkpoints=checkpoints)


def save_checkpoint(
    net: PolicyNet, hp: Hyperparams, cycles: int, seed: int, directory: str
) -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"checkpoint_{cycles:010d}.params")
    policym.save_params(net, path)
    with open(path + ".json", "w") as fh:
        json.dump(
            {"hyperparams": asdict(hp), "cycles": cycles, "seed": seed},
            fh,
            indent=2,
            sort_keys=True,
        )
    return path


def write_curve(curve: Sequence[Tuple[int, float, float]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycles", "mean_episode_reward", "success_rate"])
        for row in curve:
            writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}"])

"""Policy network: observation in, action distribution and value out.

Actor-critic with a shared trunk: two 3x3 conv layers (32 kernels, ReLU,
stride 1, same padding), two dense layers of 128 units (ReLU), a softmax
action head with P outputs and a scalar value head. 3D observations are fed
as depth slices stacked on the channel axis of the 2D convolutions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn

from .env import Action, Observation

PARAMS_MAGIC = b"DRONENAV-PPOL\x00\x00\x00"
PARAMS_VERSION = 1


class ParamsFileError(Exception):
    """Parameter file is malformed, truncated or shape-incompatible."""


@dataclass
class ActionDistribution:
    probs: np.ndarray
    value: float


class PolicyNet(nn.Module):
    """Shared-trunk actor-critic over a square observation window."""

    def __init__(
        self,
        n_actions: int,
        in_channels: int = 1,
        side: int = 20,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        self.n_actions = n_actions
        self.in_channels = in_channels
        self.side = side
        self.conv1 = nn.Conv2d(in_channels, 32, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(32, 32, kernel_size=3, padding=1)
        self.fc1 = nn.Linear(32 * side * side, 128)
        self.fc2 = nn.Linear(128, 128)
        self.action_head = nn.Linear(128, n_actions)
        self.value_head = nn.Linear(128, 1)
        self.to(dtype)
        self._init_weights()

    def _init_weights(self) -> None:
        for conv in (self.conv1, self.conv2):
            nn.init.trunc_normal_(conv.weight, std=0.1)
            nn.init.zeros_(conv.bias)
        for dense in (self.fc1, self.fc2, self.action_head, self.value_head):
            nn.init.orthogonal_(dense.weight, gain=float(np.sqrt(2.0)))
            nn.init.zeros_(dense.bias)

    def trunk(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.conv1(x))
        h = torch.relu(self.conv2(h))
        h = h.flatten(start_dim=1)
        h = torch.relu(self.fc1(h))
        return torch.relu(self.fc2(h))

    def forward(self, x: torch.Tensor):
        h = self.trunk(x)
        logits = self.action_head(h)
        value = self.value_head(h).squeeze(-1)
        return logits, value


def init_policy(n_actions: int, in_channels: int = 1, side: int = 20, seed: int = 0) -> PolicyNet:
    torch.manual_seed(seed)
    return PolicyNet(n_actions, in_channels, side)


def observation_to_input(obs: Union[Observation, np.ndarray]) -> np.ndarray:
    """Channel-first float32 input: (1, S, S) for 2D, (S, S, S) for 3D."""
    values = obs.values if isinstance(obs, Observation) else obs
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 2:
        return values[None, :, :]
    if values.ndim == 3:
        return np.moveaxis(values, 2, 0)  # depth slices become channels
    raise ValueError(f"unsupported observation rank {values.ndim}")


def forward(params: PolicyNet, obs: Union[Observation, np.ndarray]) -> ActionDistribution:
    """Pure inference on one observation."""
    x = observation_to_input(obs)
    if x.shape[0] != params.in_channels or x.shape[1] != params.side:
        raise ValueError(
            f"observation shape {x.shape} does not match policy "
            f"({params.in_channels} channels, side {params.side})"
        )
    dtype = next(params.parameters()).dtype
    with torch.no_grad():
        logits, value = params(torch.from_numpy(x).to(dtype).unsqueeze(0))
        probs = torch.softmax(logits, dim=-1)
    return ActionDistribution(
        probs=probs[0].numpy().astype(np.float64), value=float(value[0])
    )


def forward_batch(params: PolicyNet, batch: np.ndarray):
    """Batched logits and values for training; no grad."""
    dtype = next(params.parameters()).dtype
    with torch.no_grad():
        logits, values = params(torch.from_numpy(batch).to(dtype))
        probs = torch.softmax(logits, dim=-1)
    return probs.numpy(), values.numpy()


def sample_action(dist: ActionDistribution, rng: np.random.Generator) -> Action:
    """Inverse-CDF draw over the fixed action order."""
    u = rng.random()
    cdf = np.cumsum(dist.probs)
    index = int(np.searchsorted(cdf, u, side="right"))
    return Action(min(index, len(dist.probs) - 1))


def greedy_action(dist: ActionDistribution) -> Action:
    """Argmax with lowest-index tie-break (np.argmax semantics)."""
    return Action(int(np.argmax(dist.probs)))


# ---------------------------------------------------------------------------
# Parameter file: versioned little-endian binary
# ---------------------------------------------------------------------------

_TENSOR_ORDER = (
    "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
    "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias",
    "action_head.weight", "action_head.bias",
    "value_head.weight", "value_head.bias",
)


def save_params(params: PolicyNet, path) -> None:
    state = params.state_dict()
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<III", PARAMS_VERSION, params.n_actions, params.in_channels))
        fh.write(struct.pack("<II", params.side, len(_TENSOR_ORDER)))
        for name in _TENSOR_ORDER:
            tensor = state[name].detach().to(torch.float32).numpy()
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ParamsFileError("truncated parameter file")
    return data


def load_params(path, expected_actions: Optional[int] = None) -> PolicyNet:
    with open(path, "rb") as fh:
        if _read_exact(fh, 16) != PARAMS_MAGIC:
            raise ParamsFileError("bad parameter file magic")
        version, n_actions, in_channels = struct.unpack("<III", _read_exact(fh, 12))
        if version != PARAMS_VERSION:
            raise ParamsFileError(f"unsupported parameter file version {version}")
        side, n_tensors = struct.unpack("<II", _read_exact(fh, 8))
        if n_tensors != len(_TENSOR_ORDER):
            raise ParamsFileError("unexpected tensor count")
        if expected_actions is not None and n_actions != expected_actions:
            raise ParamsFileError(
                f"parameter file has {n_actions} actions, session needs {expected_actions}"
            )
        net = PolicyNet(n_actions, in_channels, side)
        state = net.state_dict()
        for name in _TENSOR_ORDER:
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            expected = tuple(state[name].shape)
            if tuple(shape) != expected:
                raise ParamsFileError(
                    f"tensor {name} has shape {shape}, expected {expected}"
                )
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
            state[name] = torch.from_numpy(data.copy())
        net.load_state_dict(state)
        net.eval()
    return net

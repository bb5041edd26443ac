"""Simulated multi-agent grid world: agents, targets, obstacles, rewards.

The world is a dense cell grid (2D, or 3D with a depth axis). Cells inside
obstacle footprints or the border margin are forbidden and valued -1.0.
Agents move one cell per action; entering a forbidden cell kills the agent.
Per-step reward combines target capture, obstacle hits and the change in
distance to the agent's current navigation reference (reward shaping).
"""

from __future__ import annotations

import hashlib
import json
import zlib
from collections import deque
from dataclasses import dataclass, field, asdict
from enum import IntEnum
from typing import Deque, Iterable, List, Optional, Sequence, Tuple

import numpy as np

Coord = Tuple[int, ...]

OBSERVATION_HALF = 10          # window spans offsets [-10, +9] per axis
OBSERVATION_SIDE = 20
STUCK_WINDOW = 8               # ring-buffer length for oscillation detection

SNAPSHOT_MAGIC = b"DRONENAV-SNAP\x00\x00\x00"
SNAPSHOT_VERSION = 1


class DronenavError(Exception):
    """Base class for simulator errors."""


class UnsatisfiableScenarioError(DronenavError):
    """Entity placement failed after the rejection-sampling budget."""


class InvalidAgentError(DronenavError):
    """Operation referenced a dead or unknown agent."""


class InvalidActionError(DronenavError):
    """Action not valid for the grid dimensionality or episode state."""


class SnapshotError(DronenavError):
    """Snapshot payload is malformed or of the wrong version."""


class Action(IntEnum):
    FORWARD = 0    # y - 1 (toward the top of the screen)
    BACKWARD = 1   # y + 1 (toward the bottom, where moving targets escape)
    LEFT = 2       # x - 1
    RIGHT = 3      # x + 1
    UP = 4         # z + 1 (3D only)
    DOWN = 5       # z - 1 (3D only)


ACTION_DELTAS = {
    Action.FORWARD: (0, -1, 0),
    Action.BACKWARD: (0, 1, 0),
    Action.LEFT: (-1, 0, 0),
    Action.RIGHT: (1, 0, 0),
    Action.UP: (0, 0, 1),
    Action.DOWN: (0, 0, -1),
}


def valid_actions(depth: int) -> List[Action]:
    if depth > 1:
        return list(Action)
    return [Action.FORWARD, Action.BACKWARD, Action.LEFT, Action.RIGHT]


@dataclass
class GridConfig:
    width: int = 200
    height: int = 200
    depth: int = 1
    margin: int = 2
    obstacle_half_extent: int = 3
    obstacle_safety_margin: int = 1

    def __post_init__(self) -> None:
        if self.width < 2 * (self.margin + OBSERVATION_HALF):
            raise ValueError("grid width too small for margin + observation window")
        if self.height < 2 * (self.margin + OBSERVATION_HALF):
            raise ValueError("grid height too small for margin + observation window")
        if self.depth != 1 and self.depth < 2 * OBSERVATION_HALF:
            raise ValueError("3D depth must be at least twice the window half-width")
        if self.obstacle_half_extent <= 0 or self.obstacle_safety_margin < 0:
            raise ValueError("obstacle extents must be positive")

    @property
    def is_3d(self) -> bool:
        return self.depth > 1

    @property
    def n_actions(self) -> int:
        return 6 if self.is_3d else 4


@dataclass
class ScenarioSpec:
    """Everything that defines an episode family besides the grid itself."""

    task: str = "reach"                 # "reach" | "search"
    n_agents: int = 2
    n_targets: int = 4
    n_obstacles: int = 0
    targets_moving: bool = False
    n_groups: int = 1                   # search task: target group count
    group_zone_fraction: float = 0.2
    max_cycles: int = 200
    metric: str = "manhattan"           # "manhattan" | "euclidean"
    rules_enabled: bool = True
    target_coef: float = 1.0
    obstacle_coef: float = 1.0
    shaping_coef: float = 1.0
    local_search_budget: int = 60
    policy_source: str = "greedy_oracle"  # "greedy_oracle" | "rules_only" | checkpoint path

    def __post_init__(self) -> None:
        if self.task not in ("reach", "search"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.metric not in ("manhattan", "euclidean"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.task == "search" and (self.n_groups < 1 or self.n_targets < self.n_groups):
            raise ValueError("search task needs n_groups >= 1 and n_targets >= n_groups")


@dataclass
class Agent:
    id: int
    position: Coord
    alive: bool = True
    assigned_target: Optional[int] = None
    reference: Optional[Coord] = None      # fictitious / zone-mean override
    target_override: bool = False          # manual assignment, skip auto reassign
    unswept_side: int = 0                  # x-direction of unswept lanes at the
                                           # sweep -> local-search handoff
    recent_history: Deque[Tuple[Coord, float]] = field(
        default_factory=lambda: deque(maxlen=STUCK_WINDOW)
    )


@dataclass
class Target:
    id: int
    position: Coord
    seen: bool = False
    moving: bool = False
    escaped: bool = False


@dataclass
class Obstacle:
    id: int
    center: Coord
    half_extent: int
    safety_margin: int

    @property
    def reach(self) -> int:
        """Chebyshev radius of the forbidden footprint."""
        return self.half_extent + self.safety_margin

    def contains(self, pos: Coord) -> bool:
        return all(abs(p - c) <= self.reach for p, c in zip(pos, self.center))


@dataclass
class StepReward:
    targets_reached: int = 0
    obstacles_hit: int = 0
    distance_delta: float = 0.0
    total: float = 0.0


@dataclass
class Observation:
    values: np.ndarray
    center: Coord


def euclidean_distance(a: Sequence[int], b: Sequence[int]) -> float:
    return float(np.sqrt(sum((ai - bi) ** 2 for ai, bi in zip(a, b))))


def manhattan_distance(a: Sequence[int], b: Sequence[int]) -> int:
    return int(sum(abs(ai - bi) for ai, bi in zip(a, b)))


def _as3(pos: Sequence[int]) -> Tuple[int, int, int]:
    if len(pos) == 2:
        return (int(pos[0]), int(pos[1]), 0)
    return (int(pos[0]), int(pos[1]), int(pos[2]))


class EnvState:
    """Full mutable scene. Single sequential owner; snapshot to share."""

    def __init__(
        self,
        config: GridConfig,
        scenario: ScenarioSpec,
        agents: List[Agent],
        targets: List[Target],
        obstacles: List[Obstacle],
        rng: np.random.Generator,
        cycle: int = 0,
    ) -> None:
        self.config = config
        self.scenario = scenario
        self.agents = agents
        self.targets = targets
        self.obstacles = obstacles
        self.rng = rng
        self.cycle = cycle
        self.forbidden = build_forbidden_mask(config, obstacles)

    # -- geometry ----------------------------------------------------------

    def in_grid(self, pos: Coord) -> bool:
        x, y, z = _as3(pos)
        c = self.config
        return 0 <= x < c.width and 0 <= y < c.height and 0 <= z < c.depth

    def is_forbidden(self, pos: Coord) -> bool:
        if not self.in_grid(pos):
            return True
        x, y, z = _as3(pos)
        return bool(self.forbidden[x, y, z])

    def distance(self, a: Sequence[int], b: Sequence[int]) -> float:
        if self.scenario.metric == "euclidean":
            return euclidean_distance(a, b)
        return float(manhattan_distance(a, b))

    # -- derived views -----------------------------------------------------

    @property
    def cells(self) -> np.ndarray:
        """Dense cell values: -1.0 forbidden, 0.0 elsewhere."""
        values = np.zeros(self.forbidden.shape, dtype=np.float32)
        values[self.forbidden] = -1.0
        return values

    @property
    def live_agents(self) -> List[Agent]:
        return [a for a in self.agents if a.alive]

    @property
    def unseen_targets(self) -> List[Target]:
        return [t for t in self.targets if not t.seen and not t.escaped]

    def reference_of(self, agent: Agent) -> Optional[Coord]:
        """Navigation reference: fictitious/zone override, else assigned target."""
        if agent.reference is not None:
            return agent.reference
        if agent.assigned_target is not None:
            target = self.targets[agent.assigned_target]
            if not target.seen and not target.escaped:
                return target.position
        return None

    def status(self) -> str:
        """'running' | 'success' | 'failure'."""
        if all(t.seen for t in self.targets):
            return "success"
        if not self.live_agents:
            return "failure"
        if not self.unseen_targets:
            return "failure"  # remaining targets escaped
        if self.cycle >= self.scenario.max_cycles:
            return "failure"
        return "running"


def build_forbidden_mask(config: GridConfig, obstacles: Iterable[Obstacle]) -> np.ndarray:
    mask = np.zeros((config.width, config.height, config.depth), dtype=bool)
    m = config.margin
    if m > 0:
        mask[:m, :, :] = True
        mask[-m:, :, :] = True
        mask[:, :m, :] = True
        mask[:, -m:, :] = True
        if config.is_3d:
            mask[:, :, :m] = True
            mask[:, :, -m:] = True
    for obstacle in obstacles:
        cx, cy, cz = _as3(obstacle.center)
        r = obstacle.reach
        x0, x1 = max(cx - r, 0), min(cx + r + 1, config.width)
        y0, y1 = max(cy - r, 0), min(cy + r + 1, config.height)
        if config.is_3d:
            z0, z1 = max(cz - r, 0), min(cz + r + 1, config.depth)
        else:
            z0, z1 = 0, 1
        mask[x0:x1, y0:y1, z0:z1] = True
    return mask


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------

REJECTION_BUDGET = 10_000


def _random_cell(config: GridConfig, rng: np.random.Generator) -> Coord:
    x = int(rng.integers(0, config.width))
    y = int(rng.integers(0, config.height))
    if config.is_3d:
        return (x, y, int(rng.integers(0, config.depth)))
    return (x, y)


def _place_obstacles(
    config: GridConfig, n: int, rng: np.random.Generator
) -> List[Obstacle]:
    obstacles: List[Obstacle] = []
    reach = config.obstacle_half_extent + config.obstacle_safety_margin
    for i in range(n):
        for _ in range(REJECTION_BUDGET):
            center = _as3(_random_cell(config, rng))
            lo_ok = all(c - reach >= 0 for c in center[: 3 if config.is_3d else 2])
            hi = (config.width, config.height, config.depth)
            hi_ok = all(
                c + reach < h for c, h in zip(center[: 3 if config.is_3d else 2], hi)
            )
            if not (lo_ok and hi_ok):
                continue
            candidate = Obstacle(
                id=i,
                center=center if config.is_3d else center[:2],
                half_extent=config.obstacle_half_extent,
                safety_margin=config.obstacle_safety_margin,
            )
            overlap = any(
                all(
                    abs(a - b) <= candidate.reach + other.reach
                    for a, b in zip(_as3(candidate.center), _as3(other.center))
                )
                for other in obstacles
            )
            if not overlap:
                obstacles.append(candidate)
                break
        else:
            raise UnsatisfiableScenarioError(
                f"could not place obstacle {i} after {REJECTION_BUDGET} samples"
            )
    return obstacles


def _place_free_cells(
    config: GridConfig,
    forbidden: np.ndarray,
    n: int,
    rng: np.random.Generator,
    taken: set,
    what: str,
) -> List[Coord]:
    cells: List[Coord] = []
    for i in range(n):
        for _ in range(REJECTION_BUDGET):
            pos = _random_cell(config, rng)
            key = _as3(pos)
            if forbidden[key[0], key[1], key[2]] or key in taken:
                continue
            taken.add(key)
            cells.append(pos)
            break
        else:
            raise UnsatisfiableScenarioError(
                f"could not place {what} {i} after {REJECTION_BUDGET} samples"
            )
    return cells


def generate_search_layout(
    config: GridConfig,
    scenario: ScenarioSpec,
    rng: np.random.Generator,
    forbidden: np.ndarray,
) -> List[Coord]:
    """Group-zone target placement for the search task.

    Zones are squares whose side is a fraction of the smaller grid extent,
    placed uniformly inside the non-margin interior. Targets are dealt to
    zones round-robin (remainder goes to earlier zones) and placed uniformly
    inside their zone, outside obstacle footprints.
    """
    side = int(round(scenario.group_zone_fraction * min(config.width, config.height)))
    m = config.margin
    zones = []
    for g in range(scenario.n_groups):
        for _ in range(REJECTION_BUDGET):
            x0 = int(rng.integers(m, config.width - m - side + 1))
            y0 = int(rng.integers(m, config.height - m - side + 1))
            zones.append((x0, y0))
            break
        else:
            raise UnsatisfiableScenarioError(f"could not place search zone {g}")
    counts = [scenario.n_targets // scenario.n_groups] * scenario.n_groups
    for g in range(scenario.n_targets % scenario.n_groups):
        counts[g] += 1
    taken: set = set()
    positions: List[Coord] = []
    for (x0, y0), count in zip(zones, counts):
        for t in range(count):
            for _ in range(REJECTION_BUDGET):
                x = int(rng.integers(x0, x0 + side))
                y = int(rng.integers(y0, y0 + side))
                pos: Coord = (x, y) if not config.is_3d else (
                    x,
                    y,
                    int(rng.integers(m, config.depth - m)),
                )
                key = _as3(pos)
                if forbidden[key[0], key[1], key[2]] or key in taken:
                    continue
                taken.add(key)
                positions.append(pos)
                break
            else:
                raise UnsatisfiableScenarioError(
                    "could not place a search target inside its zone"
                )
    return positions


def create_environment(
    config: GridConfig, scenario: ScenarioSpec, seed: int
) -> EnvState:
    """Seeded random scene. Identical inputs produce identical states."""
    rng = np.random.default_rng(seed)
    obstacles = _place_obstacles(config, scenario.n_obstacles, rng)
    forbidden = build_forbidden_mask(config, obstacles)
    taken: set = set()
    if scenario.task == "search":
        target_cells = generate_search_layout(config, scenario, rng, forbidden)
        for pos in target_cells:
            taken.add(_as3(pos))
    else:
        target_cells = _place_free_cells(
            config, forbidden, scenario.n_targets, rng, taken, "target"
        )
    agent_cells = _place_free_cells(
        config, forbidden, scenario.n_agents, rng, taken, "agent"
    )
    targets = [
        Target(id=i, position=pos, moving=scenario.targets_moving)
        for i, pos in enumerate(target_cells)
    ]
    agents = [Agent(id=i, position=pos) for i, pos in enumerate(agent_cells)]
    state = EnvState(config, scenario, agents, targets, obstacles, rng)
    if scenario.task == "reach":
        assign_targets(state)
    return state


# ---------------------------------------------------------------------------
# Observation
# ---------------------------------------------------------------------------


def observation(state: EnvState, agent_id: int) -> Observation:
    """Agent-centered value window fed to the policy.

    Forbidden or out-of-grid cells read exactly -1.0. The navigation
    reference cell reads +1.0. Every other cell reads the reward the agent
    would collect by moving there (the shaping term times shaping_coef),
    scaled by the window half-width and clamped to [-1, 1]; with no
    reference, or with shaping disabled, the neutral value is 0.0.
    """
    agent = state.agents[agent_id]
    if not agent.alive:
        raise InvalidAgentError(f"agent {agent_id} is dead")
    config = state.config
    ax, ay, az = _as3(agent.position)
    lo, hi = -OBSERVATION_HALF, OBSERVATION_HALF  # offsets lo .. hi-1
    xs = np.arange(ax + lo, ax + hi)
    ys = np.arange(ay + lo, ay + hi)
    if config.is_3d:
        zs = np.arange(az + lo, az + hi)
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    else:
        zs = np.array([0])
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        gz = np.zeros_like(gx)

    inside = (
        (gx >= 0)
        & (gx < config.width)
        & (gy >= 0)
        & (gy < config.height)
        & (gz >= 0)
        & (gz < config.depth)
    )
    values = np.zeros(gx.shape, dtype=np.float32)
    reference = state.reference_of(agent)
    if reference is not None:
        rx, ry, rz = _as3(reference)
        if state.scenario.metric == "euclidean":
            d_cell = np.sqrt((gx - rx) ** 2 + (gy - ry) ** 2 + (gz - rz) ** 2)
            d_cur = euclidean_distance(_as3(agent.position), (rx, ry, rz))
        else:
            d_cell = np.abs(gx - rx) + np.abs(gy - ry) + np.abs(gz - rz)
            d_cur = manhattan_distance(_as3(agent.position), (rx, ry, rz))
        values = np.clip(
            state.scenario.shaping_coef * (d_cur - d_cell) / OBSERVATION_HALF,
            -1.0,
            1.0,
        ).astype(np.float32)
        ref_hit = (gx == rx) & (gy == ry) & (gz == rz)
        values[ref_hit] = 1.0

    # forbidden / out-of-grid override everything
    fx = np.clip(gx, 0, config.width - 1)
    fy = np.clip(gy, 0, config.height - 1)
    fz = np.clip(gz, 0, config.depth - 1)
    forbidden = state.forbidden[fx, fy, fz] | ~inside
    values[forbidden] = -1.0
    return Observation(values=values, center=agent.position)


def in_window(center: Coord, pos: Coord) -> bool:
    """True if pos lies inside the observation window centered at center."""
    for c, p in zip(_as3(center), _as3(pos)):
        if not (-OBSERVATION_HALF <= p - c <= OBSERVATION_HALF - 1):
            return False
    return True


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def _shift(pos: Coord, action: Action) -> Coord:
    dx, dy, dz = ACTION_DELTAS[action]
    p = _as3(pos)
    new = (p[0] + dx, p[1] + dy, p[2] + dz)
    return new if len(pos) == 3 else new[:2]


def step_agent(state: EnvState, agent_id: int, action: Action) -> StepReward:
    agent = state.agents[agent_id]
    if not agent.alive:
        raise InvalidAgentError(f"agent {agent_id} is dead")
    if action not in valid_actions(state.config.depth):
        raise InvalidActionError(f"{action.name} invalid for this grid")
    scenario = state.scenario
    reward = StepReward()
    reference = state.reference_of(agent)
    new_pos = _shift(agent.position, action)
    if state.is_forbidden(new_pos):
        agent.alive = False
        reward.obstacles_hit = 1
    else:
        if reference is not None:
            d_before = state.distance(agent.position, reference)
            d_after = state.distance(new_pos, reference)
            reward.distance_delta = d_after - d_before
        agent.position = new_pos
        if agent.assigned_target is not None:
            target = state.targets[agent.assigned_target]
            if not target.seen and not target.escaped and _as3(new_pos) == _as3(
                target.position
            ):
                reward.targets_reached = 1
                target.seen = True
                agent.target_override = False
                if scenario.task == "reach":
                    assign_targets(state)
    reward.total = (
        scenario.target_coef * reward.targets_reached
        - scenario.obstacle_coef * reward.obstacles_hit
        - scenario.shaping_coef * reward.distance_delta
    )
    if agent.alive:
        ref_now = state.reference_of(agent)
        d_now = state.distance(agent.position, ref_now) if ref_now is not None else 0.0
        agent.recent_history.append((agent.position, d_now))
    return reward


def advance_cycle(
    state: EnvState, actions: Sequence[Optional[Action]]
) -> List[Optional[StepReward]]:
    """One cycle: every live agent acts in id order, then targets move.

    An action of None means the agent holds position this cycle (used by
    agents whose sweep is complete).
    """
    live = state.live_agents
    if not live:
        raise InvalidActionError("no live agents: episode is terminal")
    if len(actions) != len(live):
        raise InvalidActionError(
            f"expected {len(live)} actions, got {len(actions)}"
        )
    rewards: List[Optional[StepReward]] = []
    for agent, action in zip(live, actions):
        if not agent.alive or action is None:
            rewards.append(None)
            continue
        rewards.append(step_agent(state, agent.id, action))
    move_targets(state)
    state.cycle += 1
    return rewards


def move_targets(state: EnvState) -> None:
    """Moving targets step one cell toward the bottom row and escape there.

    In the search task, movement only activates once any target was seen.
    """
    if state.scenario.task == "search" and not any(t.seen for t in state.targets):
        return
    height = state.config.height
    for target in state.targets:
        if target.seen or target.escaped or not target.moving:
            continue
        pos = _as3(target.position)
        new_y = pos[1] + 1
        new = (pos[0], new_y, pos[2]) if len(target.position) == 3 else (pos[0], new_y)
        target.position = new
        if new_y >= height - 1:
            target.escaped = True


def assign_targets(state: EnvState) -> None:
    """Greedy nearest-unseen-target assignment, one round of claims.

    Agents claim in id order; when unseen targets are scarcer than live
    agents, the leftover agents share the nearest unseen target. Ties break
    toward the lowest target id. Manual overrides are left untouched until
    their target is seen.
    """
    unseen = state.unseen_targets
    claimed: set = set()
    for agent in state.agents:
        if not agent.alive:
            continue
        if agent.target_override and agent.assigned_target is not None:
            target = state.targets[agent.assigned_target]
            if not target.seen and not target.escaped:
                claimed.add(target.id)
                continue
            agent.target_override = False
        if not unseen:
            agent.assigned_target = None
            continue
        available = [t for t in unseen if t.id not in claimed]
        pool = available if available else unseen
        best = min(
            pool, key=lambda t: (state.distance(agent.position, t.position), t.id)
        )
        agent.assigned_target = best.id
        claimed.add(best.id)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def state_to_dict(state: EnvState) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "config": asdict(state.config),
        "scenario": asdict(state.scenario),
        "cycle": state.cycle,
        "agents": [
            {
                "id": a.id,
                "position": list(a.position),
                "alive": a.alive,
                "assigned_target": a.assigned_target,
                "reference": list(a.reference) if a.reference is not None else None,
                "target_override": a.target_override,
                "unswept_side": a.unswept_side,
                "recent_history": [
                    [list(p), d] for p, d in a.recent_history
                ],
            }
            for a in state.agents
        ],
        "targets": [
            {
                "id": t.id,
                "position": list(t.position),
                "seen": t.seen,
                "moving": t.moving,
                "escaped": t.escaped,
            }
            for t in state.targets
        ],
        "obstacles": [
            {
                "id": o.id,
                "center": list(o.center),
                "half_extent": o.half_extent,
                "safety_margin": o.safety_margin,
            }
            for o in state.obstacles
        ],
        "rng_state": state.rng.bit_generator.state,
    }


def state_from_dict(payload: dict) -> EnvState:
    if payload.get("version") != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {payload.get('version')}")
    config = GridConfig(**payload["config"])
    scenario = ScenarioSpec(**payload["scenario"])
    agents = []
    for a in payload["agents"]:
        agent = Agent(
            id=a["id"],
            position=tuple(a["position"]),
            alive=a["alive"],
            assigned_target=a["assigned_target"],
            reference=tuple(a["reference"]) if a["reference"] is not None else None,
            target_override=a["target_override"],
            unswept_side=a.get("unswept_side", 0),
        )
        for p, d in a["recent_history"]:
            agent.recent_history.append((tuple(p), d))
        agents.append(agent)
    targets = [
        Target(
            id=t["id"],
            position=tuple(t["position"]),
            seen=t["seen"],
            moving=t["moving"],
            escaped=t["escaped"],
        )
        for t in payload["targets"]
    ]
    obstacles = [
        Obstacle(
            id=o["id"],
            center=tuple(o["center"]),
            half_extent=o["half_extent"],
            safety_margin=o["safety_margin"],
        )
        for o in payload["obstacles"]
    ]
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["rng_state"]
    return EnvState(
        config, scenario, agents, targets, obstacles, rng, cycle=payload["cycle"]
    )


def _canonical_json(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def state_to_json(state: EnvState) -> str:
    """Human-readable dump; round-trips exactly through state_from_dict."""
    return json.dumps(state_to_dict(state), indent=2, sort_keys=True)


def state_from_json(text: str) -> EnvState:
    return state_from_dict(json.loads(text))


def state_to_bytes(state: EnvState) -> bytes:
    body = zlib.compress(_canonical_json(state_to_dict(state)))
    header = SNAPSHOT_MAGIC + SNAPSHOT_VERSION.to_bytes(4, "little")
    return header + len(body).to_bytes(8, "little") + body


def state_from_bytes(blob: bytes) -> EnvState:
    if blob[:16] != SNAPSHOT_MAGIC:
        raise SnapshotError("bad snapshot magic")
    version = int.from_bytes(blob[16:20], "little")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    length = int.from_bytes(blob[20:28], "little")
    body = blob[28 : 28 + length]
    if len(body) != length:
        raise SnapshotError("truncated snapshot")
    return state_from_dict(json.loads(zlib.decompress(body)))


def state_hash(state: EnvState) -> str:
    return hashlib.sha256(_canonical_json(state_to_dict(state))).hexdigest()

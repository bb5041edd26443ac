"""Expert rule engine: line of sight, stuck detection, obstacle circling
via fictitious targets, and the boustrophedon sweep planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np

from .env import (
    OBSERVATION_HALF,
    STUCK_WINDOW,
    Action,
    Agent,
    Coord,
    DronenavError,
    EnvState,
    GridConfig,
    _as3,
    valid_actions,
)

ANGLE_STEP = math.pi / 4           # 45 degrees between fictitious targets
CIRCLE_EXTRA = 2                   # circle radius = footprint reach + this
LOS_SAMPLE_STEP = 0.1              # cells between samples along a segment


class AvoidanceImpossible(DronenavError):
    """No non-forbidden cell exists on the avoidance circle."""


class AvoidanceFailed(DronenavError):
    """A full revolution was traversed without a clear line of sight."""


FINISHED = "finished"


# ---------------------------------------------------------------------------
# Line of sight
# ---------------------------------------------------------------------------


def line_of_sight(state: EnvState, a: Coord, b: Coord) -> Optional[int]:
    """First obstacle whose footprint the discretized segment a->b enters.

    The segment is sampled densely (sub-cell step) and rounded to cells;
    the obstacle hit nearest to a wins. Returns None when the line is clear.
    """
    pa = np.array(_as3(a), dtype=float)
    pb = np.array(_as3(b), dtype=float)
    length = float(np.linalg.norm(pb - pa))
    if not state.obstacles:
        return None
    if length == 0.0:
        for obstacle in state.obstacles:
            if obstacle.contains(a):
                return obstacle.id
        return None
    n = int(math.ceil(length / LOS_SAMPLE_STEP)) + 1
    t = np.linspace(0.0, 1.0, n)[:, None]
    cells = np.rint(pa + t * (pb - pa)).astype(int)
    best: Tuple[float, int] = (math.inf, -1)
    for obstacle in state.obstacles:
        center = np.array(_as3(obstacle.center))
        inside = np.all(np.abs(cells - center) <= obstacle.reach, axis=1)
        idx = np.argmax(inside)
        if inside[idx]:
            d = float(np.linalg.norm(cells[idx] - pa))
            if d < best[0]:
                best = (d, obstacle.id)
    return best[1] if best[1] >= 0 else None


# ---------------------------------------------------------------------------
# Stuck detection
# ---------------------------------------------------------------------------


def detect_stuck(history: Sequence[Tuple[Coord, float]]) -> bool:
    """True when the window is full, a position repeats, and the distance to
    the reference never dropped below its value at the window start."""
    if len(history) < STUCK_WINDOW:
        return False
    positions = [p for p, _ in history]
    if len(set(positions)) == len(positions):
        return False
    distances = [d for _, d in history]
    return min(distances) >= distances[0]


# ---------------------------------------------------------------------------
# Obstacle avoidance by fictitious targets
# ---------------------------------------------------------------------------


@dataclass
class AvoidancePlan:
    obstacle_id: int
    circle_radius: float
    current_angle: float
    rotation_direction: int          # +1 CCW, -1 CW
    fictitious_target: Coord
    turned: float = 0.0              # cumulative |angle| advanced


def _circle_cell(
    state: EnvState, center: Coord, radius: float, angle: float, z: int
) -> Optional[Coord]:
    """Cell at (radius, angle) from center in the XY plane, snapped to the
    nearest non-forbidden cell in its immediate neighborhood."""
    cx, cy, _ = _as3(center)
    ideal = (cx + radius * math.cos(angle), cy + radius * math.sin(angle))
    candidates = []
    bx, by = int(round(ideal[0])), int(round(ideal[1]))
    for dx in (0, -1, 1):
        for dy in (0, -1, 1):
            pos3 = (bx + dx, by + dy, z)
            pos: Coord = pos3 if state.config.is_3d else pos3[:2]
            if not state.is_forbidden(pos):
                d = (pos3[0] - ideal[0]) ** 2 + (pos3[1] - ideal[1]) ** 2
                candidates.append((d, pos))
    if not candidates:
        return None
    return min(candidates, key=lambda c: c[0])[1]


def begin_avoidance(state: EnvState, agent: Agent, obstacle_id: int) -> AvoidancePlan:
    """Start circling the obstacle that blocks the line to the target.

    The rotation side whose first fictitious target lies closer to the real
    target wins; ties go counter-clockwise.
    """
    obstacle = state.obstacles[obstacle_id]
    radius = float(obstacle.reach + CIRCLE_EXTRA)
    ax, ay, az = _as3(agent.position)
    cx, cy, _ = _as3(obstacle.center)
    angle = math.atan2(ay - cy, ax - cx)
    reference = state.reference_of(agent)
    sides = []
    for direction in (1, -1):
        cell = _first_free_cell(state, obstacle.center, radius, angle, direction, az)
        if cell is None:
            continue
        next_angle, pos = cell
        d = (
            state.distance(pos, reference)
            if reference is not None
            else 0.0
        )
        sides.append((d, -direction, direction, next_angle, pos))
    if not sides:
        raise AvoidanceImpossible(
            f"no non-forbidden cell on the circle around obstacle {obstacle_id}"
        )
    # sort key: closer to target first; tie prefers CCW (direction +1)
    _, _, direction, next_angle, pos = min(sides)
    return AvoidancePlan(
        obstacle_id=obstacle_id,
        circle_radius=radius,
        current_angle=next_angle,
        rotation_direction=direction,
        fictitious_target=pos,
        turned=abs(next_angle - angle),
    )


def _first_free_cell(
    state: EnvState,
    center: Coord,
    radius: float,
    angle: float,
    direction: int,
    z: int,
) -> Optional[Tuple[float, Coord]]:
    """First angle step (skipping blocked ones) with a free circle cell."""
    for k in range(1, int(2 * math.pi / ANGLE_STEP) + 1):
        candidate = angle + direction * k * ANGLE_STEP
        cell = _circle_cell(state, center, radius, candidate, z)
        if cell is not None:
            return candidate, cell
    return None


def advance_avoidance(
    state: EnvState,
    agent: Agent,
    plan: AvoidancePlan,
    reference: Optional[Coord] = None,
):
    """Called when the agent reached the current fictitious target.

    Returns FINISHED when the line to the real goal cleared, else the plan
    advanced to the next waypoint. Raises AvoidanceFailed after a full
    revolution. The goal defaults to the agent's assigned target.
    """
    if reference is None and agent.assigned_target is not None:
        reference = state.targets[agent.assigned_target].position
    if reference is None:
        return FINISHED
    if line_of_sight(state, agent.position, reference) is None:
        return FINISHED
    obstacle = state.obstacles[plan.obstacle_id]
    _, _, az = _as3(agent.position)
    nxt = _first_free_cell(
        state,
        obstacle.center,
        plan.circle_radius,
        plan.current_angle,
        plan.rotation_direction,
        az,
    )
    if nxt is None:
        raise AvoidanceFailed("no free cell remains on the avoidance circle")
    next_angle, pos = nxt
    turned = plan.turned + abs(next_angle - plan.current_angle)
    if turned > 2 * math.pi + 1e-9:
        raise AvoidanceFailed("full revolution without a clear line of sight")
    return replace(
        plan, current_angle=next_angle, fictitious_target=pos, turned=turned
    )


def greedy_step_toward(
    state: EnvState, pos: Coord, goal: Coord
) -> Optional[Action]:
    """Safe greedy step: best distance reduction among non-forbidden moves,
    ties toward the lowest action index. None when every neighbor is
    forbidden."""
    best: Optional[Tuple[float, int]] = None
    chosen: Optional[Action] = None
    for action in valid_actions(state.config.depth):
        nxt = _next_cell(pos, action)
        if state.is_forbidden(nxt):
            continue
        d = state.distance(nxt, goal)
        key = (d, int(action))
        if best is None or key < best:
            best = key
            chosen = action
    return chosen


def _next_cell(pos: Coord, action: Action) -> Coord:
    from .env import ACTION_DELTAS

    dx, dy, dz = ACTION_DELTAS[action]
    p = _as3(pos)
    out = (p[0] + dx, p[1] + dy, p[2] + dz)
    return out if len(pos) == 3 else out[:2]


# ---------------------------------------------------------------------------
# Exhaustive sweep
# ---------------------------------------------------------------------------

LANE_SPACING = 2 * OBSERVATION_HALF   # adjacent windows tile exactly


@dataclass
class SweepPlan:
    lanes: List[int]
    region: Tuple[int, int, int, int]   # x0, x1, y0, y1 inclusive
    lane_index: int = 0
    heading: int = 1                     # +1 down (y+), -1 up (y-)
    approach: Optional[Coord] = None     # waypoint to (re)join the sweep
    detour_goal: Optional[Coord] = None  # free lane cell past an obstacle
    complete: bool = False

    @property
    def lane_x(self) -> int:
        return self.lanes[self.lane_index]


def partition_search_region(
    config: GridConfig, n_agents: int
) -> List[Tuple[int, int, int, int]]:
    """Vertical strips of near-equal width tiling the non-margin interior."""
    if n_agents < 1:
        raise ValueError("need at least one agent")
    m = config.margin
    x0, x1 = m, config.width - m - 1
    y0, y1 = m, config.height - m - 1
    width = x1 - x0 + 1
    base, remainder = divmod(width, n_agents)
    strips = []
    cursor = x0
    for i in range(n_agents):
        w = base + (1 if i < remainder else 0)
        strips.append((cursor, cursor + w - 1, y0, y1))
        cursor += w
    return strips


def lane_positions(x0: int, x1: int) -> List[int]:
    """Lane abscissas whose 20-cell windows tile [x0, x1]."""
    lanes = list(range(x0 + OBSERVATION_HALF, x1 + 1, LANE_SPACING))
    if not lanes:
        lanes = [min(x0 + OBSERVATION_HALF, x1)]
    if lanes[-1] + OBSERVATION_HALF - 1 < x1:
        lanes.append(x1 - OBSERVATION_HALF + 1)
    return lanes


def run_bounds(region: Tuple[int, int, int, int]) -> Tuple[int, int]:
    """Vertical extent a lane must traverse so its windows cover the region.

    The window spans [-10, +9] rows around the agent, so runs stop short of
    the region edges by the covered overhang.
    """
    _, _, y0, y1 = region
    top = y0 + OBSERVATION_HALF
    bottom = y1 - OBSERVATION_HALF + 1
    if bottom < top:
        top = bottom = (y0 + y1) // 2
    return top, bottom


def make_sweep_plan(
    region: Tuple[int, int, int, int], start: Coord
) -> SweepPlan:
    x0, x1, y0, y1 = region
    lanes = lane_positions(x0, x1)
    s = _as3(start)
    # fewest approach moves: nearest side first, enter at the nearest end
    if abs(s[0] - lanes[-1]) < abs(s[0] - lanes[0]):
        lanes = lanes[::-1]
    top, bottom = run_bounds(region)
    heading = 1 if abs(s[1] - top) <= abs(s[1] - bottom) else -1
    plan = SweepPlan(lanes=lanes, region=region, heading=heading)
    plan.approach = _lane_entry(plan, start)
    return plan


def _lane_entry(plan: SweepPlan, start: Coord) -> Coord:
    top, bottom = run_bounds(plan.region)
    entry_y = top if plan.heading == 1 else bottom
    entry = (plan.lane_x, entry_y)
    return entry if len(start) == 2 else (entry[0], entry[1], _as3(start)[2])


def sweep_next_action(
    state: EnvState, agent: Agent, plan: SweepPlan
) -> Tuple[Optional[Action], SweepPlan]:
    """One sweep step. Lane first, then the transition to the next lane.

    Forbidden cells on the path are bypassed by setting a detour goal past
    the blockage; the controller drives the agent there with the avoidance
    machinery and the lane resumes. A complete plan yields no action.
    """
    if plan.complete:
        return None, plan
    pos = _as3(agent.position)
    x0, x1, y0, y1 = plan.region

    if plan.approach is not None:
        target = _as3(plan.approach)
        if (pos[0], pos[1]) == (target[0], target[1]):
            plan.approach = None
        else:
            action = greedy_step_toward(state, agent.position, plan.approach)
            if action is None:
                return None, plan
            nxt = _next_cell(agent.position, action)
            if state.distance(nxt, plan.approach) >= state.distance(
                agent.position, plan.approach
            ):
                # approach is blocked head-on; let the controller detour
                plan.detour_goal = plan.approach
                plan.approach = None
                return None, plan
            return action, plan

    if pos[0] != plan.lane_x:
        action = Action.RIGHT if pos[0] < plan.lane_x else Action.LEFT
        nxt = _next_cell(agent.position, action)
        if state.is_forbidden(nxt):
            plan.detour_goal = _detour_point(state, plan, agent.position, action)
            return None, plan
        return action, plan

    top, bottom = run_bounds(plan.region)
    end_y = bottom if plan.heading == 1 else top
    reached_end = pos[1] >= end_y if plan.heading == 1 else pos[1] <= end_y
    if reached_end:
        if plan.lane_index + 1 >= len(plan.lanes):
            plan.complete = True
            return None, plan
        plan.lane_index += 1
        plan.heading = -plan.heading
        return sweep_next_action(state, agent, plan)

    action = Action.BACKWARD if plan.heading == 1 else Action.FORWARD
    nxt = _next_cell(agent.position, action)
    if state.is_forbidden(nxt):
        plan.detour_goal = _detour_point(state, plan, agent.position, action)
        return None, plan
    return action, plan


def _detour_point(
    state: EnvState, plan: SweepPlan, pos: Coord, action: Action
) -> Optional[Coord]:
    """Next free cell along the intended direction past the blockage."""
    cursor = pos
    x0, x1, y0, y1 = plan.region
    top, bottom = run_bounds(plan.region)
    while True:
        cursor = _next_cell(cursor, action)
        c = _as3(cursor)
        if not (x0 <= c[0] <= x1 and top <= c[1] <= bottom):
            # blockage runs to the region edge: skip to the next lane
            if plan.lane_index + 1 >= len(plan.lanes):
                plan.complete = True
            else:
                plan.lane_index += 1
                plan.heading = -plan.heading
                plan.approach = _lane_entry(plan, pos)
            return None
        if not state.is_forbidden(cursor):
            return cursor

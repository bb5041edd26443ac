"""Per-agent hybrid state machine combining the learned policy with the
rule engine, plus the episode runner that produces traces and metrics.

Reach task modes: NORMAL (policy) and AVOIDING (rule-driven circling).
Search task modes: SWEEP (rule-driven lanes), LOCAL (policy around the mean
of the targets found in the zone) and LOCAL_AVOIDING.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import env as envm
from . import policy as policym
from . import rules as rulesm
from .env import (
    Action,
    Agent,
    Coord,
    EnvState,
    InvalidActionError,
    OBSERVATION_HALF,
    advance_cycle,
    in_window,
    observation,
    state_hash,
)
from .rules import (
    FINISHED,
    AvoidanceFailed,
    AvoidanceImpossible,
    AvoidancePlan,
    SweepPlan,
    begin_avoidance,
    advance_avoidance,
    detect_stuck,
    greedy_step_toward,
    line_of_sight,
    make_sweep_plan,
    partition_search_region,
    sweep_next_action,
)

NORMAL = "normal"
AVOIDING = "avoiding"
SWEEP = "sweep"
LOCAL = "local"
LOCAL_AVOIDING = "local_avoiding"

DL = "DL"
RB = "RB"


@dataclass
class AgentMode:
    name: str
    avoidance: Optional[AvoidancePlan] = None
    sweep: Optional[SweepPlan] = None
    detour_goal: Optional[Coord] = None
    zone_finds: List[Coord] = field(default_factory=list)
    cycles_without_find: int = 0
    ever_local: bool = False


@dataclass
class ActionRecord:
    agent_id: int
    cycle: int
    action: Optional[int]
    source: str
    mode_before: str
    mode_after: str
    reward: float


@dataclass
class EpisodeMetrics:
    success: bool = False
    outcome: str = "running"
    any_agent_hit: bool = False
    all_agents_hit: bool = False
    episode_cycles: int = 0
    total_cycles: int = 0          # agent-cycles: actions actually taken
    cycles_dl: int = 0
    cycles_rb: int = 0
    cycles_initial_sweep: int = 0
    cycles_rl_search: int = 0
    cycles_posterior_sweep: int = 0


@dataclass
class EpisodeTrace:
    records: List[ActionRecord] = field(default_factory=list)
    cycle_hashes: List[Tuple[int, str]] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            lines.append(
                json.dumps(
                    {
                        "type": "action",
                        "cycle": r.cycle,
                        "agent": r.agent_id,
                        "action": r.action,
                        "source": r.source,
                        "mode_before": r.mode_before,
                        "mode_after": r.mode_after,
                        "reward": r.reward,
                    },
                    sort_keys=True,
                )
            )
        for cycle, digest in self.cycle_hashes:
            lines.append(
                json.dumps({"type": "cycle", "cycle": cycle, "hash": digest}, sort_keys=True)
            )
        return "\n".join(lines) + "\n"


def local_search_reference(zone_finds: Sequence[Coord]) -> Coord:
    """Component-wise mean of the zone finds, ties rounding down."""
    if not zone_finds:
        raise ValueError("no finds to average")
    dims = len(zone_finds[0])
    means = [sum(p[i] for p in zone_finds) / len(zone_finds) for i in range(dims)]
    return tuple(int(math.ceil(m - 0.5)) for m in means)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class GreedyOracle:
    """Training-free policy stand-in: steps along the largest distance
    reduction under the active metric.

    Ties prefer non-forbidden cells, then the lowest action index. Without
    the rule engine the oracle commits to its best move even into a
    forbidden cell, mirroring a distance-greedy policy with no obstacle
    knowledge; the rule layer (when enabled) vetoes fatal moves.

    In the search task the reference is the running mean of the finds in a
    zone, not a cell to be reached. There the oracle runs a directed local
    plan anchored where the stint began: finish the current sweep band
    through the zone rows, then cross one band width toward the unswept
    side (already-walked bands cannot hold an unseen target) and run a
    short counter-lane back, pulling the next lane's zone segment forward.
    New finds reset the search budget, so productive plans run to
    completion while empty ones are cut short.
    """

    kind = "oracle"

    BAND = 2 * OBSERVATION_HALF   # sweep band width
    ZONE_HALF = 17                # rows covered around the zone mean
    _STALL_LIMIT = 3

    def __init__(self) -> None:
        self._plans: Dict[int, dict] = {}

    def reset(self) -> None:
        self._plans.clear()

    def act(self, state: EnvState, agent: Agent) -> Optional[Action]:
        reference = state.reference_of(agent)
        if reference is None:
            return None
        if state.scenario.task == "search":
            waypoint = self._local_waypoint(state, agent, reference)
            if waypoint is not None and waypoint != tuple(agent.position):
                reference = waypoint
        return self._greedy(state, agent, reference)

    def _clamp(self, state: EnvState, x: int, y: int, like: Coord) -> Coord:
        x = min(max(x, 0), state.config.width - 1)
        y = min(max(y, 0), state.config.height - 1)
        return (x, y) if len(like) == 2 else (x, y, like[2])

    def _local_plan(
        self, state: EnvState, agent: Agent, reference: Coord
    ) -> List[Coord]:
        ax, ay = agent.position[0], agent.position[1]
        rx, ry = reference[0], reference[1]
        # probe toward unswept bands: lanes already walked cannot hold
        # an unseen target, so the zone can only extend the other way
        side = agent.unswept_side or (1 if rx >= ax else -1)
        heading = 1 if ry >= ay else -1       # unswept rows lie ahead
        near_y = ry + self.ZONE_HALF * heading
        far_y = ry - self.ZONE_HALF * heading
        c = lambda x, y: self._clamp(state, x, y, reference)
        return [
            c(ax, near_y),                    # finish this band's zone rows
            c(ax + self.BAND * side, near_y),  # cross to the zone side
            c(ax + self.BAND * side, far_y),   # counter-lane over the zone
            c(ax + 2 * self.BAND * side, far_y),
            c(ax + 2 * self.BAND * side, near_y),
            # tail: the opposite band, reached only while finds keep the
            # budget alive
            c(ax - self.BAND * side, near_y),
            c(ax - self.BAND * side, far_y),
        ]

    def _local_waypoint(
        self, state: EnvState, agent: Agent, reference: Coord
    ) -> Optional[Coord]:
        plan = self._plans.get(agent.id)
        if plan is None or state.cycle != plan["cycle"] + 1:
            # a fresh local stint: anchor the plan at the current position
            plan = {
                "waypoints": self._local_plan(state, agent, reference),
                "index": 0,
                "last_d": None,
                "stall": 0,
            }
            self._plans[agent.id] = plan
        plan["cycle"] = state.cycle
        waypoints = plan["waypoints"]
        if plan["index"] >= len(waypoints):
            return None                        # plan exhausted: hover at the mean
        waypoint = waypoints[plan["index"]]
        d = state.distance(agent.position, waypoint)
        if plan["last_d"] is not None and d >= plan["last_d"]:
            plan["stall"] += 1
        else:
            plan["stall"] = 0
        # waypoint reached or unreachable: head for the next one
        if d <= 1 or plan["stall"] >= self._STALL_LIMIT:
            plan["index"] += 1
            plan["stall"] = 0
            if plan["index"] >= len(waypoints):
                return None
            waypoint = waypoints[plan["index"]]
            d = state.distance(agent.position, waypoint)
        plan["last_d"] = d
        return waypoint

    def _greedy(
        self, state: EnvState, agent: Agent, reference: Coord
    ) -> Optional[Action]:
        best_key = None
        best_action = None
        d0 = state.distance(agent.position, reference)
        for action in envm.valid_actions(state.config.depth):
            nxt = rulesm._next_cell(agent.position, action)
            reduction = d0 - state.distance(nxt, reference)
            forbidden = state.is_forbidden(nxt)
            key = (-reduction, forbidden, int(action))
            if best_key is None or key < best_key:
                best_key = key
                best_action = action
        return best_action


class NetworkPolicy:
    """Greedy (argmax) inference over a trained policy network."""

    kind = "dl"

    def __init__(self, net: policym.PolicyNet) -> None:
        self.net = net

    def act(self, state: EnvState, agent: Agent) -> Optional[Action]:
        obs = observation(state, agent.id)
        dist = policym.forward(self.net, obs)
        return policym.greedy_action(dist)


class RulesOnly:
    """No learned component: search stays in the exhaustive sweep."""

    kind = "rules"

    def act(self, state: EnvState, agent: Agent) -> Optional[Action]:
        return None


def build_policy(source: str, n_actions: Optional[int] = None):
    if source == "greedy_oracle":
        return GreedyOracle()
    if source == "rules_only":
        return RulesOnly()
    return NetworkPolicy(policym.load_params(source, expected_actions=n_actions))


# ---------------------------------------------------------------------------
# Decision logic
# ---------------------------------------------------------------------------


def _safe_fallback(state: EnvState, agent: Agent) -> Optional[Action]:
    reference = state.reference_of(agent)
    if reference is not None:
        return greedy_step_toward(state, agent.position, reference)
    for action in envm.valid_actions(state.config.depth):
        if not state.is_forbidden(rulesm._next_cell(agent.position, action)):
            return action
    return None


def _policy_action(
    state: EnvState, agent: Agent, policy
) -> Tuple[Optional[Action], str]:
    """Policy proposal, vetoed by the rule layer when it would be fatal."""
    action = policy.act(state, agent)
    if action is None:
        return None, DL
    if state.scenario.rules_enabled and state.is_forbidden(
        rulesm._next_cell(agent.position, action)
    ):
        return _safe_fallback(state, agent), RB
    return action, DL


def _avoidance_step(
    state: EnvState, agent: Agent, mode: AgentMode, back_to: str
) -> Tuple[Optional[Action], str]:
    """Drive the agent along the fictitious-target circle.

    On reaching the waypoint, either finish (line cleared) or advance the
    plan. Failure drops back to the saved mode."""
    plan = mode.avoidance
    if envm._as3(agent.position) == envm._as3(plan.fictitious_target):
        try:
            result = advance_avoidance(state, agent, plan, _avoidance_reference(state, agent, mode))
        except AvoidanceFailed:
            result = FINISHED
        if result == FINISHED:
            mode.avoidance = None
            mode.name = back_to
            agent.reference = mode.detour_goal if mode.detour_goal else None
            if mode.name == LOCAL and mode.zone_finds:
                agent.reference = local_search_reference(mode.zone_finds)
            agent.recent_history.clear()
            return None, RB
        mode.avoidance = plan = result
        agent.reference = result.fictitious_target
    action = greedy_step_toward(state, agent.position, plan.fictitious_target)
    return action, RB


def _avoidance_reference(state: EnvState, agent: Agent, mode: AgentMode) -> Optional[Coord]:
    """The real goal the avoidance maneuver is trying to clear a line to."""
    if mode.detour_goal is not None:
        return mode.detour_goal
    if mode.name == LOCAL_AVOIDING and mode.zone_finds:
        return local_search_reference(mode.zone_finds)
    if agent.assigned_target is not None:
        return state.targets[agent.assigned_target].position
    return None


def _maybe_begin_avoidance(
    state: EnvState, agent: Agent, mode: AgentMode, goal: Coord, next_name: str
) -> bool:
    obstacle_id = line_of_sight(state, agent.position, goal)
    if obstacle_id is None:
        return False
    try:
        plan = begin_avoidance(state, agent, obstacle_id)
    except AvoidanceImpossible:
        return False
    mode.avoidance = plan
    mode.name = next_name
    agent.reference = plan.fictitious_target
    agent.recent_history.clear()
    return True


def decide_action(
    state: EnvState, agent: Agent, mode: AgentMode, policy
) -> Tuple[Optional[Action], str]:
    """One agent's action for this cycle. Mutates mode and the agent's
    navigation reference; returns (action-or-hold, DL|RB)."""
    scenario = state.scenario

    if mode.name == NORMAL:
        reference = state.reference_of(agent)
        if (
            scenario.rules_enabled
            and reference is not None
            and detect_stuck(agent.recent_history)
            and _maybe_begin_avoidance(state, agent, mode, reference, AVOIDING)
        ):
            return _avoidance_step(state, agent, mode, NORMAL)
        return _policy_action(state, agent, policy)

    if mode.name == AVOIDING:
        return _avoidance_step(state, agent, mode, NORMAL)

    if mode.name == LOCAL_AVOIDING:
        return _avoidance_step(state, agent, mode, LOCAL)

    if mode.name == LOCAL:
        reference = local_search_reference(mode.zone_finds)
        agent.reference = reference
        if detect_stuck(agent.recent_history) and _maybe_begin_avoidance(
            state, agent, mode, reference, LOCAL_AVOIDING
        ):
            return _avoidance_step(state, agent, mode, LOCAL)
        return _policy_action(state, agent, policy)

    if mode.name == SWEEP:
        if mode.avoidance is not None:
            return _avoidance_step(state, agent, mode, SWEEP)
        if mode.detour_goal is not None:
            if envm._as3(agent.position) == envm._as3(mode.detour_goal):
                mode.detour_goal = None
                agent.reference = None
            else:
                agent.reference = mode.detour_goal
                if _maybe_begin_avoidance(
                    state, agent, mode, mode.detour_goal, SWEEP
                ):
                    return _avoidance_step(state, agent, mode, SWEEP)
                return greedy_step_toward(state, agent.position, mode.detour_goal), RB
        action, mode.sweep = sweep_next_action(state, agent, mode.sweep)
        if action is None and mode.sweep.detour_goal is not None:
            mode.detour_goal = mode.sweep.detour_goal
            mode.sweep.detour_goal = None
            return decide_action(state, agent, mode, policy)
        return action, RB

    raise InvalidActionError(f"unknown mode {mode.name}")


# ---------------------------------------------------------------------------
# Episode runner
# ---------------------------------------------------------------------------


def step_cycle(
    state: EnvState,
    modes: Dict[int, AgentMode],
    policy,
    metrics: Optional["EpisodeMetrics"] = None,
    trace: Optional["EpisodeTrace"] = None,
) -> None:
    """Advance the hybrid controller by exactly one cycle."""
    planned: List[Tuple[Agent, Optional[Action], str, str]] = []
    actions: List[Optional[Action]] = []
    for agent in state.live_agents:
        mode = modes[agent.id]
        before = mode.name
        action, source = decide_action(state, agent, mode, policy)
        planned.append((agent, action, source, before))
        actions.append(action)
    rewards = advance_cycle(state, actions)
    if state.scenario.task == "search":
        _detect_targets(state, modes)
    for (agent, action, source, before), reward in zip(planned, rewards):
        mode_after = modes[agent.id].name
        if trace is not None:
            trace.records.append(
                ActionRecord(
                    agent_id=agent.id,
                    cycle=state.cycle - 1,
                    action=int(action) if action is not None else None,
                    source=source,
                    mode_before=before,
                    mode_after=mode_after,
                    reward=reward.total if reward else 0.0,
                )
            )
        if action is None or metrics is None:
            continue
        metrics.total_cycles += 1
        if source == DL:
            metrics.cycles_dl += 1
        else:
            metrics.cycles_rb += 1
        if state.scenario.task == "search":
            if before in (LOCAL, LOCAL_AVOIDING):
                metrics.cycles_rl_search += 1
            elif modes[agent.id].ever_local:
                metrics.cycles_posterior_sweep += 1
            else:
                metrics.cycles_initial_sweep += 1
    if trace is not None:
        trace.cycle_hashes.append((state.cycle, state_hash(state)))
    if metrics is not None:
        metrics.episode_cycles = state.cycle


def initial_modes(state: EnvState) -> Dict[int, AgentMode]:
    modes: Dict[int, AgentMode] = {}
    if state.scenario.task == "search":
        strips = partition_search_region(state.config, len(state.agents))
        for agent, strip in zip(state.agents, strips):
            modes[agent.id] = AgentMode(
                name=SWEEP, sweep=make_sweep_plan(strip, agent.position)
            )
    else:
        for agent in state.agents:
            modes[agent.id] = AgentMode(name=NORMAL)
    return modes


def _detect_targets(state: EnvState, modes: Dict[int, AgentMode]) -> None:
    """Search task: mark unseen targets inside any live agent's window and
    drive the sweep <-> local-search transitions."""
    rules_only = state.scenario.policy_source == "rules_only"
    for agent in state.live_agents:
        mode = modes[agent.id]
        if mode.name in (LOCAL, LOCAL_AVOIDING):
            _advance_resume_point(agent, mode)
        found = [
            t
            for t in state.unseen_targets
            if in_window(agent.position, t.position)
        ]
        for target in found:
            target.seen = True
        if not found:
            if mode.name == LOCAL:
                mode.cycles_without_find += 1
                if mode.cycles_without_find > state.scenario.local_search_budget:
                    _resume_sweep(agent, mode)
            continue
        positions = [t.position for t in found]
        if rules_only:
            continue
        if mode.name in (SWEEP,):
            # remember where the lane was left so the sweep can resume there;
            # an unreached entry point stays as-is (the lane was never joined)
            if (
                mode.sweep is not None
                and not mode.sweep.complete
                and mode.sweep.approach is None
            ):
                pos = envm._as3(agent.position)
                entry = (mode.sweep.lane_x, pos[1])
                mode.sweep.approach = (
                    entry if len(agent.position) == 2 else (*entry, pos[2])
                )
            # hand the local searcher the sweep's progression direction:
            # lanes behind it are already covered, so the zone can only
            # extend into unswept bands
            sweep = mode.sweep
            if (
                sweep is not None
                and not sweep.complete
                and sweep.lane_index + 1 < len(sweep.lanes)
            ):
                agent.unswept_side = (
                    1 if sweep.lanes[sweep.lane_index + 1] > sweep.lane_x else -1
                )
            else:
                agent.unswept_side = 0
            mode.avoidance = None
            mode.detour_goal = None
            mode.name = LOCAL
            mode.zone_finds = list(positions)
            mode.cycles_without_find = 0
            mode.ever_local = True
            agent.reference = local_search_reference(mode.zone_finds)
            agent.recent_history.clear()
        elif mode.name in (LOCAL, LOCAL_AVOIDING):
            mode.zone_finds.extend(positions)
            mode.cycles_without_find = 0
            if mode.name == LOCAL:
                agent.reference = local_search_reference(mode.zone_finds)


def _advance_resume_point(agent: Agent, mode: AgentMode) -> None:
    """A local stint often runs further along the lane it left; move the
    stored resume point with it so the sweep does not re-walk those rows."""
    sweep = mode.sweep
    if sweep is None or sweep.complete or sweep.approach is None:
        return
    pos = envm._as3(agent.position)
    app = envm._as3(sweep.approach)
    if pos[0] != app[0]:
        return
    # only contiguous one-row progress counts: touching the lane elsewhere
    # (e.g. crossing it mid-stint) must not skip unswept rows
    if pos[1] == app[1] + sweep.heading:
        top, bottom = rulesm.run_bounds(sweep.region)
        entry = (app[0], min(max(pos[1], top), bottom))
        sweep.approach = entry if len(agent.position) == 2 else (*entry, pos[2])


def _resume_sweep(agent: Agent, mode: AgentMode) -> None:
    mode.name = SWEEP
    mode.avoidance = None
    mode.detour_goal = None
    mode.zone_finds = []
    mode.cycles_without_find = 0
    agent.reference = None
    agent.recent_history.clear()


def run_episode(
    state: EnvState,
    policy,
    max_cycles: Optional[int] = None,
    collect_trace: bool = True,
) -> Tuple[EpisodeTrace, EpisodeMetrics]:
    """Run the hybrid controller until success, failure or the cycle cap."""
    if max_cycles is not None:
        state.scenario.max_cycles = max_cycles
    modes = initial_modes(state)
    if hasattr(policy, "reset"):
        policy.reset()   # per-episode policy state (oracle patrol progress)
    trace = EpisodeTrace()
    metrics = EpisodeMetrics()
    n_agents = len(state.agents)

    while state.status() == "running":
        step_cycle(state, modes, policy, metrics, trace if collect_trace else None)

    outcome = state.status()
    metrics.outcome = outcome
    metrics.success = outcome == "success"
    dead = [a for a in state.agents if not a.alive]
    metrics.any_agent_hit = len(dead) > 0
    metrics.all_agents_hit = len(dead) == n_agents
    return trace, metrics

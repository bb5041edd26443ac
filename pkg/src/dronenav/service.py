"""Session-oriented control service over HTTP.

Exposes the operator features as a JSON command protocol plus a
server-push event stream per session: pause/resume, stepping, state
save/rewind/forward, manual agent moves and retargeting, live scene
deltas and explanation requests. One logical executor (a lock) owns all
state per session; the optional run loop ticks cycles on a background
thread at a configurable rate.
"""

from __future__ import annotations

import copy
import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from . import controller as ctrl
from . import env as envm
from . import explain as explainm
from .env import EnvState, GridConfig, ScenarioSpec

PROTOCOL_VERSION = 1

RUNNING = "running"
PAUSED = "paused"
TERMINAL = "terminal"

# commands that mutate beyond the run state: accepted only while paused
_MUTATING = {"step", "save_state", "rewind", "forward_to", "move_agent",
             "set_agent_target", "explain"}


class ServiceError(Exception):
    """Typed command rejection: (code, message)."""

    def __init__(self, code: str, message: str, status: int = 409):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


# ---------------------------------------------------------------------------
# Wire schemas
# ---------------------------------------------------------------------------


class CreateSessionRequest(BaseModel):
    scenario: dict
    grid: dict = Field(default_factory=dict)
    seed: int = 0
    params_path: Optional[str] = None
    tick_rate: float = 10.0  # cycles per second while running


class CommandRequest(BaseModel):
    type: str
    n: Optional[int] = None              # step
    label: Optional[str] = None          # save_state
    index: Optional[int] = None          # rewind / forward_to
    agent_id: Optional[int] = None       # move_agent / set_agent_target / explain
    position: Optional[List[int]] = None  # move_agent / set_agent_target
    target_id: Optional[int] = None      # set_agent_target
    method: Optional[str] = None         # explain: lime | shap


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------


@dataclass
class _Snapshot:
    label: str
    cycle: int
    state_blob: bytes
    modes: Dict[int, ctrl.AgentMode]
    policy_plans: Optional[dict]
    state_hash: str


@dataclass
class Session:
    id: str
    state: EnvState
    modes: Dict[int, ctrl.AgentMode]
    policy: object
    run_state: str = PAUSED
    tick_rate: float = 10.0
    saved_states: List[_Snapshot] = field(default_factory=list)
    events: List[dict] = field(default_factory=list)
    next_seq: int = 0
    lock: threading.RLock = field(default_factory=threading.RLock)
    wakeup: threading.Event = field(default_factory=threading.Event)
    closed: bool = False

    # -- events ------------------------------------------------------------

    def emit(self, kind: str, payload: dict) -> dict:
        event = {"seq": self.next_seq, "type": kind, **payload}
        self.next_seq += 1
        self.events.append(event)
        self.wakeup.set()
        return event

    def scene_delta(self) -> dict:
        state = self.state
        return self.emit(
            "scene_delta",
            {
                "cycle": state.cycle,
                "outcome": state.status(),
                "agents": [
                    {
                        "id": a.id,
                        "position": list(a.position),
                        "alive": a.alive,
                        "mode": self.modes[a.id].name,
                        "assigned_target": a.assigned_target,
                        "reference": list(a.reference) if a.reference else None,
                    }
                    for a in state.agents
                ],
                "targets": [
                    {
                        "id": t.id,
                        "position": list(t.position),
                        "seen": t.seen,
                        "escaped": t.escaped,
                    }
                    for t in state.targets
                ],
            },
        )

    # -- lifecycle ----------------------------------------------------------

    def require_paused(self, command: str) -> None:
        if self.run_state == RUNNING:
            raise ServiceError(
                "not_paused", f"{command} is only accepted while paused"
            )
        if self.run_state == TERMINAL and command not in ("save_state", "rewind",
                                                          "forward_to"):
            raise ServiceError("terminal", "session episode has ended")

    def advance(self, n: int) -> int:
        """Advance up to n cycles; stops at a terminal state."""
        done = 0
        for _ in range(n):
            if self.state.status() != "running":
                self.run_state = TERMINAL
                self.emit("terminal", {"cycle": self.state.cycle,
                                       "outcome": self.state.status()})
                break
            ctrl.step_cycle(self.state, self.modes, self.policy)
            done += 1
            self.scene_delta()
            if self.state.status() != "running":
                self.run_state = TERMINAL
                self.emit("terminal", {"cycle": self.state.cycle,
                                       "outcome": self.state.status()})
                break
        return done

    def snapshot(self, label: str) -> _Snapshot:
        plans = getattr(self.policy, "_plans", None)
        return _Snapshot(
            label=label,
            cycle=self.state.cycle,
            state_blob=envm.state_to_bytes(self.state),
            modes=copy.deepcopy(self.modes),
            policy_plans=copy.deepcopy(plans) if plans is not None else None,
            state_hash=envm.state_hash(self.state),
        )

    def restore(self, snap: _Snapshot) -> None:
        self.state = envm.state_from_bytes(snap.state_blob)
        self.modes = copy.deepcopy(snap.modes)
        if snap.policy_plans is not None:
            self.policy._plans = copy.deepcopy(snap.policy_plans)
        self.run_state = PAUSED if self.state.status() == "running" else TERMINAL

    def info(self) -> dict:
        config = self.state.config
        return {
            "cycle": self.state.cycle,
            "outcome": self.state.status(),
            "run_state": self.run_state,
            "grid": {"width": config.width, "height": config.height,
                     "depth": config.depth, "margin": config.margin},
            "obstacles": [
                {"id": o.id, "center": list(o.center),
                 "half_extent": o.half_extent,
                 "safety_margin": o.safety_margin}
                for o in self.state.obstacles
            ],
            "agents": [
                {
                    "id": a.id,
                    "position": list(a.position),
                    "alive": a.alive,
                    "mode": self.modes[a.id].name,
                    "assigned_target": a.assigned_target,
                    "reference": list(a.reference) if a.reference else None,
                }
                for a in self.state.agents
            ],
            "targets_seen": sum(t.seen for t in self.state.targets),
            "targets_total": len(self.state.targets),
            "saved_states": [
                {"index": i, "label": s.label, "cycle": s.cycle}
                for i, s in enumerate(self.saved_states)
            ],
        }


def _tick_loop(session: Session) -> None:
    while not session.closed:
        if session.run_state != RUNNING:
            session.wakeup.wait(timeout=0.1)
            session.wakeup.clear()
            continue
        with session.lock:
            if session.run_state == RUNNING:
                session.advance(1)
        time.sleep(1.0 / max(session.tick_rate, 1e-6))


# ---------------------------------------------------------------------------
# Command handling
# ---------------------------------------------------------------------------


def _handle_command(session: Session, cmd: CommandRequest) -> dict:
    kind = cmd.type
    state = session.state

    if kind == "pause":
        if session.run_state == RUNNING:
            session.run_state = PAUSED
        return {"run_state": session.run_state}

    if kind == "resume":
        if session.run_state == TERMINAL:
            raise ServiceError("terminal", "session episode has ended")
        session.run_state = RUNNING
        session.wakeup.set()
        return {"run_state": session.run_state}

    if kind in _MUTATING:
        session.require_paused(kind)

    if kind == "step":
        n = cmd.n if cmd.n is not None else 1
        if n < 0:
            raise ServiceError("bad_argument", "step count must be >= 0", 400)
        session.require_paused("step")
        if session.run_state == TERMINAL:
            raise ServiceError("terminal", "session episode has ended")
        done = session.advance(n)
        return {"advanced": done, "cycle": session.state.cycle}

    if kind == "save_state":
        snap = session.snapshot(cmd.label or f"cycle-{state.cycle}")
        session.saved_states.append(snap)
        index = len(session.saved_states) - 1
        session.emit("state_saved", {"index": index, "label": snap.label,
                                     "cycle": snap.cycle,
                                     "state_hash": snap.state_hash})
        return {"index": index, "cycle": snap.cycle, "state_hash": snap.state_hash}

    if kind in ("rewind", "forward_to"):
        index = cmd.index
        if index is None or not (0 <= index < len(session.saved_states)):
            raise ServiceError("bad_index",
                               f"snapshot index {index} out of range", 400)
        snap = session.saved_states[index]
        session.restore(snap)
        session.scene_delta()
        return {"index": index, "cycle": session.state.cycle,
                "state_hash": envm.state_hash(session.state)}

    if kind == "move_agent":
        agent = _get_agent(state, cmd.agent_id)
        if cmd.position is None:
            raise ServiceError("bad_argument", "move_agent needs a position", 400)
        pos = tuple(cmd.position)
        if len(pos) != (2 if state.config.depth == 1 else 3):
            raise ServiceError("bad_argument", "position dimensionality mismatch", 400)
        if state.is_forbidden(pos):
            raise ServiceError("forbidden_cell",
                               "destination is an obstacle or margin cell")
        agent.position = pos
        agent.recent_history.clear()
        session.emit("info", session.info())
        session.scene_delta()
        return {"agent_id": agent.id, "position": list(pos)}

    if kind == "set_agent_target":
        agent = _get_agent(state, cmd.agent_id)
        if cmd.target_id is not None:
            if not (0 <= cmd.target_id < len(state.targets)):
                raise ServiceError("unknown_target",
                                   f"no target {cmd.target_id}", 400)
            agent.assigned_target = cmd.target_id
            agent.reference = None
        elif cmd.position is not None:
            pos = tuple(cmd.position)
            if not state.in_grid(pos):
                raise ServiceError("bad_argument", "coordinate out of grid", 400)
            agent.reference = pos
        else:
            raise ServiceError("bad_argument",
                               "set_agent_target needs target_id or position", 400)
        agent.target_override = True
        agent.recent_history.clear()
        session.emit("info", session.info())
        return {"agent_id": agent.id,
                "assigned_target": agent.assigned_target,
                "reference": list(agent.reference) if agent.reference else None}

    if kind == "explain":
        agent = _get_agent(state, cmd.agent_id)
        if getattr(session.policy, "kind", None) != "dl":
            raise ServiceError("no_model",
                               "session policy has no model to explain")
        method = (cmd.method or "lime").lower()
        if method not in ("lime", "shap"):
            raise ServiceError("bad_argument", f"unknown method {method!r}", 400)
        obs = envm.observation(state, agent.id)
        model = explainm.policy_model(session.policy.net)
        rng = np.random.default_rng(0)
        fn = explainm.lime_explain if method == "lime" else explainm.shap_explain
        contribution = fn(model, obs, rng=rng)
        payload = {"agent_id": agent.id, "method": method,
                   **json.loads(contribution.to_json())}
        session.emit("explanation_ready", payload)
        return payload

    if kind == "get_info":
        info = session.info()
        session.emit("info", info)
        return info

    raise ServiceError("unknown_command", f"unknown command type {kind!r}", 400)


def _get_agent(state: EnvState, agent_id: Optional[int]):
    if agent_id is None or not (0 <= agent_id < len(state.agents)):
        raise ServiceError("unknown_agent", f"no agent {agent_id}", 400)
    agent = state.agents[agent_id]
    if not agent.alive:
        raise ServiceError("dead_agent", f"agent {agent_id} is dead")
    return agent


# ---------------------------------------------------------------------------
# App factory
# ---------------------------------------------------------------------------


def create_app(tick_threads: bool = True) -> FastAPI:
    app = FastAPI(title="dronenav control service", version=str(PROTOCOL_VERSION))
    sessions: Dict[str, Session] = {}
    app.state.sessions = sessions

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404,
                                detail={"code": "unknown_session",
                                        "message": session_id})
        return session

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        try:
            grid = GridConfig(**req.grid)
            scenario = ScenarioSpec(**req.scenario)
            state = envm.create_environment(grid, scenario, req.seed)
            source = req.params_path or scenario.policy_source
            n_actions = 4 if grid.depth == 1 else 6
            policy = ctrl.build_policy(source, n_actions=n_actions)
        except (TypeError, ValueError, OSError, envm.DronenavError) as exc:
            raise HTTPException(status_code=400,
                                detail={"code": "invalid_spec",
                                        "message": str(exc)})
        modes = ctrl.initial_modes(state)
        if hasattr(policy, "reset"):
            policy.reset()
        session = Session(id=secrets.token_hex(8), state=state, modes=modes,
                          policy=policy, tick_rate=req.tick_rate)
        sessions[session.id] = session
        session.scene_delta()
        if tick_threads:
            threading.Thread(target=_tick_loop, args=(session,),
                             daemon=True).start()
        return {"id": session.id, "run_state": session.run_state,
                "cycle": state.cycle, "protocol": PROTOCOL_VERSION}

    @app.get("/sessions")
    def list_sessions():
        return {
            "sessions": [
                {"id": s.id, "run_state": s.run_state, "cycle": s.state.cycle}
                for s in sessions.values()
            ]
        }

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        session = get_session(session_id)
        session.closed = True
        session.wakeup.set()
        del sessions[session_id]
        return {"deleted": session_id}

    @app.post("/sessions/{session_id}/command")
    def command(session_id: str, cmd: CommandRequest):
        session = get_session(session_id)
        with session.lock:
            try:
                result = _handle_command(session, cmd)
            except ServiceError as exc:
                raise HTTPException(
                    status_code=exc.status,
                    detail={"code": exc.code, "message": exc.message},
                )
        return {"ok": True, "type": cmd.type, "result": result}

    @app.get("/sessions/{session_id}/info")
    def info(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.info()

    @app.get("/sessions/{session_id}/events/log")
    def event_log(session_id: str, since: int = 0):
        session = get_session(session_id)
        with session.lock:
            return {"events": session.events[since:],
                    "next": session.next_seq}

    @app.get("/sessions/{session_id}/events")
    def event_stream(session_id: str, since: int = 0):
        session = get_session(session_id)

        def generate():
            cursor = since
            while not session.closed:
                with session.lock:
                    pending = session.events[cursor:]
                    cursor = session.next_seq
                for event in pending:
                    yield f"data: {json.dumps(event)}\n\n"
                if not pending:
                    session.wakeup.wait(timeout=0.25)
                    session.wakeup.clear()

        return StreamingResponse(generate(), media_type="text/event-stream")

    return app


def serve(host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)

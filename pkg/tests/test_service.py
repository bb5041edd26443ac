"""Control service: session lifecycle, command gating, snapshot fidelity."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from dronenav.policy import init_policy, save_params
from dronenav.service import create_app

from conftest import reach_scenario, search_scenario


@pytest.fixture
def client():
    return TestClient(create_app(tick_threads=False))


def _scenario_dict(scenario):
    from dataclasses import asdict

    return asdict(scenario)


def _create(client, scenario=None, seed=3, **kw):
    body = {
        "scenario": _scenario_dict(scenario or search_scenario()),
        "seed": seed,
        **kw,
    }
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 200, resp.text
    return resp.json()["id"]


def _cmd(client, sid, type, expect=200, **kw):
    resp = client.post(f"/sessions/{sid}/command", json={"type": type, **kw})
    assert resp.status_code == expect, resp.text
    return resp.json()


def test_create_lists_and_deletes_sessions(client):
    sid = _create(client)
    listing = client.get("/sessions").json()["sessions"]
    assert [s["id"] for s in listing] == [sid]
    assert listing[0]["run_state"] == "paused"
    assert client.delete(f"/sessions/{sid}").json() == {"deleted": sid}
    assert client.get("/sessions").json()["sessions"] == []
    assert client.get(f"/sessions/{sid}/info").status_code == 404


def test_invalid_scenario_rejected(client):
    resp = client.post(
        "/sessions", json={"scenario": {"task": "fly"}, "seed": 0}
    )
    assert resp.status_code == 400
    assert resp.json()["detail"]["code"] == "invalid_spec"


def test_step_advances_cycles(client):
    sid = _create(client)
    out = _cmd(client, sid, "step", n=5)
    assert out["result"]["cycle"] == 5
    info = client.get(f"/sessions/{sid}/info").json()
    assert info["cycle"] == 5
    assert len(info["agents"]) == 2


def test_save_rewind_restores_exact_state(client):
    sid = _create(client)
    _cmd(client, sid, "step", n=5)
    saved = _cmd(client, sid, "save_state", label="mark")["result"]
    _cmd(client, sid, "step", n=7)
    restored = _cmd(client, sid, "rewind", index=saved["index"])["result"]
    assert restored["cycle"] == 5
    assert restored["state_hash"] == saved["state_hash"]


def test_restored_trajectory_replays_identically(client):
    sid = _create(client, seed=11)
    _cmd(client, sid, "step", n=3)
    saved = _cmd(client, sid, "save_state")["result"]
    _cmd(client, sid, "step", n=50)
    after_a = _cmd(client, sid, "save_state")["result"]["state_hash"]
    _cmd(client, sid, "rewind", index=saved["index"])
    _cmd(client, sid, "step", n=50)
    after_b = _cmd(client, sid, "save_state")["result"]["state_hash"]
    assert after_a == after_b


def test_forward_to_returns_to_later_snapshot(client):
    sid = _create(client)
    _cmd(client, sid, "step", n=2)
    early = _cmd(client, sid, "save_state")["result"]
    _cmd(client, sid, "step", n=8)
    late = _cmd(client, sid, "save_state")["result"]
    _cmd(client, sid, "rewind", index=early["index"])
    out = _cmd(client, sid, "forward_to", index=late["index"])["result"]
    assert out["cycle"] == 10
    assert out["state_hash"] == late["state_hash"]


def test_mutations_rejected_while_running(client):
    sid = _create(client)
    _cmd(client, sid, "resume")
    for mutating, args in (
        ("step", {"n": 1}),
        ("save_state", {}),
        ("move_agent", {"agent_id": 0, "position": [50, 50]}),
        ("set_agent_target", {"agent_id": 0, "target_id": 0}),
    ):
        out = _cmd(client, sid, mutating, expect=409, **args)
        assert out["detail"]["code"] == "not_paused"
    _cmd(client, sid, "pause")
    _cmd(client, sid, "step", n=1)


def test_move_agent_rejects_forbidden_cell(client):
    sid = _create(client)
    out = _cmd(client, sid, "move_agent", agent_id=0, position=[0, 0], expect=409)
    assert out["detail"]["code"] == "forbidden_cell"
    ok = _cmd(client, sid, "move_agent", agent_id=0, position=[60, 60])
    assert ok["result"]["position"] == [60, 60]
    info = client.get(f"/sessions/{sid}/info").json()
    assert info["agents"][0]["position"] == [60, 60]


def test_set_agent_target_by_id_and_position(client):
    sid = _create(client, scenario=reach_scenario(n_obstacles=0))
    out = _cmd(client, sid, "set_agent_target", agent_id=0, target_id=2)["result"]
    assert out["assigned_target"] == 2
    out = _cmd(client, sid, "set_agent_target", agent_id=1, position=[70, 80])
    assert out["result"]["reference"] == [70, 80]
    bad = _cmd(client, sid, "set_agent_target", agent_id=0, target_id=99, expect=400)
    assert bad["detail"]["code"] == "unknown_target"


def test_explain_requires_model(client):
    sid = _create(client)  # oracle policy
    out = _cmd(client, sid, "explain", agent_id=0, expect=409)
    assert out["detail"]["code"] == "no_model"


def test_explain_with_model_returns_contributions(client, tmp_path):
    net = init_policy(4, seed=0)
    path = tmp_path / "params.bin"
    save_params(net, path)
    sid = _create(
        client,
        scenario=reach_scenario(n_obstacles=0, policy_source=str(path)),
        params_path=str(path),
    )
    for method in ("lime", "shap"):
        out = _cmd(client, sid, "explain", agent_id=0, method=method)["result"]
        assert out["method"] == method.upper()
        assert out["shape"] == [20, 20]
        assert len(out["per_action"]) == 4
        assert len(out["probs"]) == 4


def test_event_log_is_ordered_and_filterable(client):
    sid = _create(client)
    _cmd(client, sid, "step", n=3)
    _cmd(client, sid, "save_state")
    _cmd(client, sid, "get_info")
    log = client.get(f"/sessions/{sid}/events/log").json()["events"]
    seqs = [e["seq"] for e in log]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
    kinds = {e["type"] for e in log}
    assert {"scene_delta", "state_saved", "info"} <= kinds
    # "since" is a cursor: events with seq >= since
    tail = client.get(
        f"/sessions/{sid}/events/log", params={"since": seqs[-1]}
    ).json()["events"]
    assert [e["seq"] for e in tail] == seqs[-1:]
    empty = client.get(
        f"/sessions/{sid}/events/log", params={"since": seqs[-1] + 1}
    ).json()
    assert empty["events"] == []
    assert empty["next"] == seqs[-1] + 1


def test_sessions_are_isolated(client):
    a = _create(client, seed=3)
    b = _create(client, seed=3)
    _cmd(client, a, "step", n=10)
    assert client.get(f"/sessions/{a}/info").json()["cycle"] == 10
    assert client.get(f"/sessions/{b}/info").json()["cycle"] == 0
    # same seed, same commands -> identical states
    _cmd(client, b, "step", n=10)
    ha = _cmd(client, a, "save_state")["result"]["state_hash"]
    hb = _cmd(client, b, "save_state")["result"]["state_hash"]
    assert ha == hb


def test_step_to_terminal_blocks_resume(client):
    sid = _create(client, scenario=search_scenario(max_cycles=30), seed=3)
    _cmd(client, sid, "step", n=40)
    info = client.get(f"/sessions/{sid}/info").json()
    assert info["run_state"] == "terminal"
    out = _cmd(client, sid, "resume", expect=409)
    assert out["detail"]["code"] == "terminal"
    log = client.get(f"/sessions/{sid}/events/log").json()["events"]
    assert any(e["type"] == "terminal" for e in log)

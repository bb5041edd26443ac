"""Acceptance criteria A1-A10: one pass/fail line per criterion.

Each criterion runs its shipped preset from presets/ end to end. The
verdict lines are echoed after the pytest summary (see conftest).
"""

import json
import subprocess
from pathlib import Path

import numpy as np
import pytest
import yaml

import conftest
from dronenav.cli import build_grid, build_scenario, load_config
from dronenav.evaluation import obstacle_sweep_experiment, run_experiment

ROOT = Path(__file__).resolve().parent.parent
PRESETS = ROOT / "presets"

_report_cache = {}


def _verdict(name, passed, detail):
    line = f"{name} [{'PASS' if passed else 'FAIL'}] {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def _preset(name):
    config = load_config(str(PRESETS / name), ())
    return config, build_grid(config), build_scenario(config)


def _run_preset(name):
    if name not in _report_cache:
        config, grid, scenario = _preset(name)
        run = config.get("run", {})
        _report_cache[name] = run_experiment(
            grid, scenario, int(run["n_episodes"]), int(run.get("base_seed", 0))
        )
    return _report_cache[name]


# ---------------------------------------------------------------------------
# A1 rule-engine safety
# ---------------------------------------------------------------------------


def test_a1_rule_engine_safety():
    report = _run_preset("a1_reach_rules_safety.yaml")
    ok = report.any_hit_rate == 0.0 and report.success_rate >= 65.0
    _verdict(
        "A1", ok,
        f"guarded reach: success {report.success_rate:.1f}% (need >= 65), "
        f"any-hit {report.any_hit_rate:.1f}% (need 0)",
    )


# ---------------------------------------------------------------------------
# A2 ablation ladder
# ---------------------------------------------------------------------------


def test_a2_ablation_ladder():
    rungs = [
        _run_preset("a2_reach_ablation_euclidean.yaml"),
        _run_preset("a2_reach_ablation_manhattan.yaml"),
        _run_preset("a2_reach_ablation_rules.yaml"),
    ]
    success = [r.success_rate for r in rungs]
    hits = [r.any_hit_rate for r in rungs]
    ok = (
        success[0] < success[1] < success[2]
        and hits[0] >= hits[1] >= hits[2]
    )
    _verdict(
        "A2", ok,
        f"success ladder {success[0]:.1f} < {success[1]:.1f} < {success[2]:.1f}, "
        f"hit ladder {hits[0]:.1f} >= {hits[1]:.1f} >= {hits[2]:.1f}",
    )


# ---------------------------------------------------------------------------
# A3 reward shaping
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_a3_reward_shaping():
    from dronenav import trainer as T

    results = {}
    for preset in ("a3_train_shaped.yaml", "a3_train_sparse.yaml"):
        config, grid, scenario = _preset(preset)
        hp = T.Hyperparams(**config.get("train", {}))
        run = T.train(grid, scenario, hp, seed=int(config.get("seed", 7)))
        results[preset] = run.final_success_rate
    shaped = results["a3_train_shaped.yaml"]
    sparse = results["a3_train_sparse.yaml"]
    ok = shaped >= 0.90 and sparse <= shaped - 0.20
    _verdict(
        "A3", ok,
        f"shaped {shaped:.3f} (need >= 0.90), sparse {sparse:.3f} "
        f"(need <= shaped - 0.20)",
    )


# ---------------------------------------------------------------------------
# A4 search baseline bound
# ---------------------------------------------------------------------------


def test_a4_search_baseline():
    report = _run_preset("a4_search_baseline.yaml")
    mean = report.mean_total_cycles
    ok = report.success_rate == 100.0 and mean <= 1600 and 1100 <= mean <= 1350
    _verdict(
        "A4", ok,
        f"sweep baseline: success {report.success_rate:.1f}% (need 100), "
        f"mean cycles {mean:.1f} (need within [1100, 1350])",
    )


# ---------------------------------------------------------------------------
# A5 hybrid search improvement
# ---------------------------------------------------------------------------


def test_a5_hybrid_search_improvement():
    baseline = _run_preset("a4_search_baseline.yaml")
    hybrid = _run_preset("a5_search_hybrid.yaml")
    assert baseline.seeds == hybrid.seeds  # same 200 seeds by construction
    reduction = 100.0 * (1.0 - hybrid.mean_total_cycles / baseline.mean_total_cycles)
    ok = reduction >= 10.0 and hybrid.success_rate == 100.0
    _verdict(
        "A5", ok,
        f"hybrid {hybrid.mean_total_cycles:.1f} vs baseline "
        f"{baseline.mean_total_cycles:.1f} cycles: {reduction:.1f}% reduction "
        f"(need >= 10%)",
    )


# ---------------------------------------------------------------------------
# A6 3D obstacle sweep
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_a6_3d_obstacle_sweep():
    config, grid, scenario = _preset("a6_3d_obstacle_sweep.yaml")
    sweep = config["sweep"]
    reports = obstacle_sweep_experiment(
        grid, scenario, [int(c) for c in sweep["obstacle_counts"]],
        int(sweep["n_episodes"]), int(sweep.get("base_seed", 0)),
    )
    success = [r.success_rate for r in reports]
    hits = [r.any_hit_rate for r in reports]
    ok = all(a >= b for a, b in zip(success, success[1:])) and all(
        h <= 1.0 for h in hits
    )
    _verdict(
        "A6", ok,
        f"3D success over obstacle counts {success} non-increasing, "
        f"hit rates {hits} all <= 1%",
    )


# ---------------------------------------------------------------------------
# A7 numerical suite
# ---------------------------------------------------------------------------


def test_a7_numerical_suite():
    import test_env
    import test_trainer

    checks = {
        "gradient-vs-finite-differences":
            test_trainer.test_loss_gradient_matches_finite_differences,
        "gae-vs-recursive-oracle": test_trainer.test_gae_matches_forward_sum_oracle,
        "clip-hand-values": test_trainer.test_clip_objective_hand_values,
        "manhattan-vs-bfs": test_env.test_manhattan_equals_bfs_on_open_grid,
        "shaping-telescopes": test_env.test_shaping_telescopes_over_path,
    }
    failed = []
    for label, check in checks.items():
        try:
            check()
        except AssertionError:
            failed.append(label)
    _verdict(
        "A7", not failed,
        "numerical suite: " + ("all checks exact" if not failed
                               else f"failed {failed}"),
    )


# ---------------------------------------------------------------------------
# A8 explainability suite
# ---------------------------------------------------------------------------


def test_a8_explainability_suite():
    import test_explain

    checks = {
        "lime-exact-linear": test_explain.test_lime_recovers_exact_linear_coefficients,
        "shapley-vs-enumeration":
            test_explain.test_shap_matches_exact_enumeration_on_small_game,
        "efficiency-residual": test_explain.test_shap_efficiency_residual_small,
        "dummy-feature-zero": test_explain.test_lime_dummy_feature_gets_zero,
    }
    failed = []
    for label, check in checks.items():
        try:
            check()
        except AssertionError:
            failed.append(label)
    _verdict(
        "A8", not failed,
        "explanation suite: " + ("all bounds met" if not failed
                                 else f"failed {failed}"),
    )


# ---------------------------------------------------------------------------
# A9 determinism & replay
# ---------------------------------------------------------------------------


def test_a9_determinism_and_replay(tmp_path):
    from click.testing import CliRunner
    from fastapi.testclient import TestClient

    from dronenav.cli import main
    from dronenav.service import create_app

    problems = []

    # byte-identical reruns
    config, grid, scenario = _preset("a9_determinism_eval.yaml")
    run = config["run"]
    a = run_experiment(grid, scenario, int(run["n_episodes"]), int(run["base_seed"]))
    b = run_experiment(grid, scenario, int(run["n_episodes"]), int(run["base_seed"]))
    if a.to_json() != b.to_json():
        problems.append("rerun not byte-identical")

    # eval -> replay verifies every hash
    runner = CliRunner()
    out = tmp_path / "run"
    res = runner.invoke(main, [
        "eval", "--config", str(PRESETS / "a9_determinism_eval.yaml"),
        "--out", str(out), "--traces",
    ])
    if res.exit_code != 0:
        problems.append(f"eval exited {res.exit_code}")
    else:
        for trace in sorted((out / "traces").glob("episode_*.jsonl")):
            res = runner.invoke(main, ["replay", str(trace)])
            if res.exit_code != 0:
                problems.append(f"replay of {trace.name} exited {res.exit_code}")

    # save/rewind restores hash-identical state and continuation
    client = TestClient(create_app(tick_threads=False))
    from dataclasses import asdict

    sid = client.post("/sessions", json={
        "scenario": asdict(scenario), "grid": asdict(grid), "seed": 3,
    }).json()["id"]

    def cmd(type, **kw):
        r = client.post(f"/sessions/{sid}/command", json={"type": type, **kw})
        assert r.status_code == 200, r.text
        return r.json()["result"]

    cmd("step", n=5)
    saved = cmd("save_state")
    cmd("step", n=50)
    first = cmd("save_state")["state_hash"]
    restored = cmd("rewind", index=saved["index"])
    if restored["state_hash"] != saved["state_hash"]:
        problems.append("rewind hash mismatch")
    cmd("step", n=50)
    second = cmd("save_state")["state_hash"]
    if first != second:
        problems.append("50-cycle continuation diverged after rewind")

    _verdict(
        "A9", not problems,
        "determinism & replay: " + ("rerun, trace replay and rewind all "
                                    "hash-identical" if not problems
                                    else "; ".join(problems)),
    )


# ---------------------------------------------------------------------------
# A10 operator loop (browser console protocol)
# ---------------------------------------------------------------------------


def test_a10_operator_loop(tmp_path):
    from dataclasses import asdict

    from fastapi.testclient import TestClient

    from dronenav.policy import init_policy, save_params
    from dronenav.service import create_app

    problems = []
    client = TestClient(create_app(tick_threads=False))

    params = tmp_path / "params.bin"
    save_params(init_policy(4, seed=0), params)
    _, grid, scenario = _preset("a9_determinism_eval.yaml")
    spec = asdict(scenario)
    spec["policy_source"] = str(params)
    sid = client.post("/sessions", json={
        "scenario": spec, "grid": asdict(grid), "seed": 3,
    }).json()["id"]

    def cmd(type, expect=200, **kw):
        r = client.post(f"/sessions/{sid}/command", json={"type": type, **kw})
        if r.status_code != expect:
            problems.append(f"{type}: status {r.status_code}, wanted {expect}")
        return r.json()

    # scripted loop: run, pause, save, step 5, drag, retarget, explain x2,
    # rewind, forward; mutations must be blocked while running
    cmd("resume")
    blocked = cmd("move_agent", agent_id=0, position=[60, 60], expect=409)
    if blocked.get("detail", {}).get("code") != "not_paused":
        problems.append("mutation not blocked while running")
    cmd("pause")
    saved = cmd("save_state").get("result", {})
    cmd("step", n=5)
    cmd("move_agent", agent_id=0, position=[60, 60])
    cmd("set_agent_target", agent_id=0, target_id=1)
    explanations = {}
    for method in ("lime", "shap"):
        out = cmd("explain", agent_id=0, method=method).get("result", {})
        explanations[method] = out
        if len(out.get("per_action", [])) != 4:
            problems.append(f"{method}: wrong contribution shape")
    later = cmd("save_state").get("result", {})
    rewound = cmd("rewind", index=saved.get("index", 0)).get("result", {})
    if rewound.get("state_hash") != saved.get("state_hash"):
        problems.append("rewind hash mismatch")
    forwarded = cmd("forward_to", index=later.get("index", 1)).get("result", {})
    if forwarded.get("state_hash") != later.get("state_hash"):
        problems.append("forward hash mismatch")

    # the browser console renders these payloads; its unit suite checks the
    # sign-to-color mapping and gesture gating against recorded protocol data
    frontend = ROOT / "frontend"
    if not (frontend / "package.json").exists():
        problems.append("frontend package missing")
    else:
        proc = subprocess.run(
            ["npx", "vitest", "run", "--reporter", "dot"],
            cwd=frontend, capture_output=True, text=True, timeout=600,
        )
        if proc.returncode != 0:
            problems.append(
                "frontend tests failed:\n" + proc.stdout[-2000:] + proc.stderr[-2000:]
            )

    _verdict(
        "A10", not problems,
        "operator loop: " + ("scripted session and console suite clean"
                             if not problems else "; ".join(problems)),
    )

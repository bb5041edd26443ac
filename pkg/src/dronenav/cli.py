"""Batch entry points: train, eval, sweep, replay, serve.

A run is described by a YAML config tree (grid / scenario / run / train /
sweep sections) plus dotted-key overrides. Every run writes the effective
config next to its outputs so it can be reproduced byte-exactly.

Exit codes: 0 success, 2 config error, 3 runtime error, 4 verification
mismatch.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

import click
import yaml

from . import controller as ctrl
from . import evaluation as evalm
from . import policy as policym
from . import trainer as trainerm
from .env import DronenavError, GridConfig, ScenarioSpec, create_environment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VERIFY = 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def _coerce(text: str):
    """Parse an override value with YAML scalar rules (int/float/bool/str)."""
    return yaml.safe_load(text)


def load_config(path: Optional[str], overrides: tuple) -> dict:
    config: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                config = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        if not isinstance(config, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} crosses a scalar")
        node[parts[-1]] = _coerce(value)
    return config


def _build_section(cls, payload: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} section: {exc}")


def build_grid(config: dict) -> GridConfig:
    return _build_section(GridConfig, config.get("grid", {}), "grid")


def build_scenario(config: dict) -> ScenarioSpec:
    if "scenario" not in config:
        raise ConfigError("config needs a scenario section")
    return _build_section(ScenarioSpec, config["scenario"], "scenario")


def _write_effective_config(config: dict, out: Path, seed: Optional[int]) -> None:
    effective = dict(config)
    if seed is not None:
        effective = {**config, "seed": seed}
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.yaml").write_text(
        yaml.safe_dump(effective, sort_keys=True)
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@click.group()
def main() -> None:
    """Hybrid drone-navigation simulator batch tools."""


_config_opt = click.option("--config", "config_path", type=click.Path(), default=None)
_set_opt = click.option("--set", "overrides", multiple=True,
                        help="dotted-key override, e.g. scenario.n_obstacles=8")
_seed_opt = click.option("--seed", type=int, default=None)
_out_opt = click.option("--out", type=click.Path(), default="out")


def _load(config_path, overrides) -> dict:
    return load_config(config_path, overrides)


@main.command("train")
@_config_opt
@_set_opt
@_seed_opt
@_out_opt
def train_cmd(config_path, overrides, seed, out):
    """Train a PPO policy per the config's train section."""
    try:
        config = _load(config_path, overrides)
        grid = build_grid(config)
        scenario = build_scenario(config)
        hp = _build_section(trainerm.Hyperparams, config.get("train", {}), "train")
        run_seed = seed if seed is not None else int(config.get("seed", 0))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    out_dir = Path(out)
    _write_effective_config(config, out_dir, run_seed)
    try:
        run = trainerm.train(grid, scenario, hp, run_seed,
                             checkpoint_dir=str(out_dir / "checkpoints"))
        policym.save_params(run.params, out_dir / "params_final.pt")
        trainerm.write_curve(run.curve, str(out_dir / "curve.csv"))
    except (DronenavError, trainerm.NonFiniteLossError, OSError) as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"final sliding-window success rate: {run.final_success_rate:.3f}")
    sys.exit(EXIT_OK)


@main.command("eval")
@_config_opt
@_set_opt
@_seed_opt
@_out_opt
@click.option("--format", "fmt", type=click.Choice(["text", "csv", "json"]),
              default="text")
@click.option("--traces/--no-traces", default=False,
              help="write per-episode trace logs for replay")
def eval_cmd(config_path, overrides, seed, out, fmt, traces):
    """Run a seeded episode batch and emit the aggregate report."""
    try:
        config = _load(config_path, overrides)
        grid = build_grid(config)
        scenario = build_scenario(config)
        run = config.get("run", {})
        n_episodes = int(run.get("n_episodes", 200))
        base_seed = seed if seed is not None else int(run.get("base_seed", 0))
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    out_dir = Path(out)
    _write_effective_config(config, out_dir, base_seed)
    trace_dir = out_dir / "traces"

    def sink(abs_seed, state, trace):
        trace_dir.mkdir(parents=True, exist_ok=True)
        header = json.dumps(
            {
                "type": "header",
                "grid": dataclasses.asdict(grid),
                "scenario": dataclasses.asdict(scenario),
                "seed": abs_seed,
            },
            sort_keys=True,
        )
        path = trace_dir / f"episode_{abs_seed}.jsonl"
        path.write_text(header + "\n" + trace.to_jsonl())

    try:
        report = evalm.run_experiment(
            grid, scenario, n_episodes, base_seed,
            collect_traces=traces, trace_sink=sink if traces else None,
        )
        rendered = evalm.emit_report(report, fmt)
        suffix = {"text": "txt", "csv": "csv", "json": "json"}[fmt]
        (out_dir / f"report.{suffix}").write_text(rendered)
    except (DronenavError, evalm.ReportError, OSError) as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(rendered)
    sys.exit(EXIT_OK)


@main.command("sweep")
@_config_opt
@_set_opt
@_seed_opt
@_out_opt
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
def sweep_cmd(config_path, overrides, seed, out, fmt):
    """Evaluate over a series of obstacle counts and emit the series."""
    try:
        config = _load(config_path, overrides)
        grid = build_grid(config)
        scenario = build_scenario(config)
        sweep = config.get("sweep", {})
        counts = [int(c) for c in sweep.get("obstacle_counts", [4, 8, 12, 16, 20])]
        n_episodes = int(sweep.get("n_episodes", 100))
        base_seed = seed if seed is not None else int(sweep.get("base_seed", 0))
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    out_dir = Path(out)
    _write_effective_config(config, out_dir, base_seed)
    try:
        reports = evalm.obstacle_sweep_experiment(
            grid, scenario, counts, n_episodes, base_seed
        )
        rendered = evalm.emit_series(reports, fmt)
        (out_dir / f"series.{fmt}").write_text(rendered)
    except (DronenavError, evalm.ReportError, OSError) as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(rendered)
    sys.exit(EXIT_OK)


@main.command("replay")
@click.argument("trace_path", type=click.Path(exists=True))
def replay_cmd(trace_path):
    """Re-execute a trace log and verify every recorded state hash."""
    try:
        lines = Path(trace_path).read_text().splitlines()
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise ConfigError("trace has no header line")
        grid = GridConfig(**header["grid"])
        scenario_payload = dict(header["scenario"])
        scenario = ScenarioSpec(**scenario_payload)
        expected = {
            rec["cycle"]: rec["hash"]
            for rec in map(json.loads, lines[1:])
            if rec.get("type") == "cycle"
        }
    except (OSError, ValueError, TypeError, KeyError, ConfigError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        state = create_environment(grid, scenario, header["seed"])
        policy = ctrl.build_policy(scenario.policy_source, grid.n_actions)
        trace, _ = ctrl.run_episode(state, policy, collect_trace=True)
    except DronenavError as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    actual = dict(trace.cycle_hashes)
    mismatches = [
        cycle
        for cycle, digest in expected.items()
        if actual.get(cycle) != digest
    ]
    if mismatches or len(actual) != len(expected):
        click.echo(
            f"verification failed: {len(mismatches)} hash mismatches, "
            f"{len(actual)} cycles replayed vs {len(expected)} recorded",
            err=True,
        )
        sys.exit(EXIT_VERIFY)
    click.echo(f"replay ok: {len(expected)} cycle hashes verified")
    sys.exit(EXIT_OK)


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve_cmd(host, port):
    """Start the session control service."""
    from .service import serve

    serve(host=host, port=port)


if __name__ == "__main__":
    main()

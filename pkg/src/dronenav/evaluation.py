"""Experiment execution over seeded test sets and metric aggregation.

Reports mirror the structure of the reach-task quality tables and the
search-task cycle-phase tables. Cycle means are reported both over all
episodes and over successful episodes only, with explicit column names.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import controller as ctrl
from .env import EnvState, GridConfig, ScenarioSpec, create_environment, generate_search_layout
from .controller import EpisodeMetrics, EpisodeTrace, run_episode

# Seed ranges: test seeds are offset so they never collide with training
# episode seeds (which grow from seed * 1_000_003 upward in small steps).
TEST_SEED_OFFSET = 500_000_000


class ReportError(Exception):
    pass


@dataclass
class ExperimentReport:
    grid: dict
    scenario: dict
    n_episodes: int
    base_seed: int
    seeds: List[int]
    success_rate: float            # percent
    any_hit_rate: float            # percent
    all_hit_rate: float            # percent
    dl_cycle_pct: float            # pooled over all agent-cycles
    rb_cycle_pct: float
    mean_total_cycles: float       # all episodes
    mean_total_cycles_success: float
    mean_episode_cycles: float
    mean_initial_sweep: float
    mean_rl_search: float
    mean_posterior_sweep: float
    episodes: List[dict] = field(default_factory=list)

    def to_json(self) -> str:
        payload = asdict(self)
        payload["schema_version"] = 1
        return json.dumps(payload, indent=2, sort_keys=True)


def _aggregate(
    grid: GridConfig,
    scenario: ScenarioSpec,
    metrics: Sequence[EpisodeMetrics],
    seeds: Sequence[int],
    base_seed: int,
) -> ExperimentReport:
    n = len(metrics)
    if n == 0:
        raise ReportError("no episodes to aggregate")
    succ = [m for m in metrics if m.success]
    total_dl = sum(m.cycles_dl for m in metrics)
    total_rb = sum(m.cycles_rb for m in metrics)
    total_actions = total_dl + total_rb

    def mean(values):
        return float(np.mean(values)) if len(values) else 0.0

    return ExperimentReport(
        grid=asdict(grid),
        scenario=asdict(scenario),
        n_episodes=n,
        base_seed=base_seed,
        seeds=list(seeds),
        success_rate=100.0 * len(succ) / n,
        any_hit_rate=100.0 * sum(m.any_agent_hit for m in metrics) / n,
        all_hit_rate=100.0 * sum(m.all_agents_hit for m in metrics) / n,
        dl_cycle_pct=100.0 * total_dl / total_actions if total_actions else 0.0,
        rb_cycle_pct=100.0 * total_rb / total_actions if total_actions else 0.0,
        mean_total_cycles=mean([m.total_cycles for m in metrics]),
        mean_total_cycles_success=mean([m.total_cycles for m in succ]),
        mean_episode_cycles=mean([m.episode_cycles for m in metrics]),
        mean_initial_sweep=mean([m.cycles_initial_sweep for m in metrics]),
        mean_rl_search=mean([m.cycles_rl_search for m in metrics]),
        mean_posterior_sweep=mean([m.cycles_posterior_sweep for m in metrics]),
        episodes=[asdict(m) for m in metrics],
    )


def run_experiment(
    grid: GridConfig,
    scenario: ScenarioSpec,
    n_episodes: int,
    base_seed: int,
    policy=None,
    collect_traces: bool = False,
    trace_sink=None,
) -> ExperimentReport:
    """Seeded episode batch; seeds are base_seed .. base_seed + n - 1, offset
    into the test range. Fully reproducible."""
    if n_episodes < 1:
        raise ReportError("n_episodes must be >= 1")
    if policy is None:
        policy = ctrl.build_policy(scenario.policy_source, grid.n_actions)
    seeds = [TEST_SEED_OFFSET + base_seed + i for i in range(n_episodes)]
    metrics: List[EpisodeMetrics] = []
    for seed in seeds:
        state = create_environment(grid, scenario, seed)
        trace, metric = run_episode(state, policy, collect_trace=collect_traces)
        metrics.append(metric)
        if collect_traces and trace_sink is not None:
            trace_sink(seed, state, trace)
    return _aggregate(grid, scenario, metrics, seeds, base_seed)


def obstacle_sweep_experiment(
    grid: GridConfig,
    scenario: ScenarioSpec,
    obstacle_counts: Sequence[int],
    n_episodes: int,
    base_seed: int,
) -> List[ExperimentReport]:
    """One report per obstacle count (the 3D reach-vs-obstacles series)."""
    reports = []
    for count in obstacle_counts:
        spec = ScenarioSpec(**{**asdict(scenario), "n_obstacles": count})
        reports.append(run_experiment(grid, spec, n_episodes, base_seed))
    return reports


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

REACH_COLUMNS = [
    "max_cycles",
    "dl_cycle_pct",
    "rb_cycle_pct",
    "success_rate",
    "any_hit_rate",
    "all_hit_rate",
]
SEARCH_COLUMNS = [
    "mean_initial_sweep",
    "mean_rl_search",
    "mean_posterior_sweep",
    "mean_total_cycles",
    "mean_total_cycles_success",
    "success_rate",
]


def emit_report(report: ExperimentReport, fmt: str = "text") -> str:
    """Serialize a report as csv, json or a provenance-carrying text table."""
    if report.n_episodes == 0:
        raise ReportError("refusing to emit an empty report")
    if fmt == "json":
        return report.to_json()
    columns = (
        SEARCH_COLUMNS if report.scenario["task"] == "search" else REACH_COLUMNS
    )
    values: Dict[str, object] = {
        "max_cycles": report.scenario["max_cycles"],
        **{c: getattr(report, c) for c in columns if c != "max_cycles"},
    }
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(columns)
        writer.writerow([_fmt(values[c]) for c in columns])
        return buf.getvalue()
    if fmt == "text":
        lines = [
            f"task={report.scenario['task']} episodes={report.n_episodes} "
            f"base_seed={report.base_seed} "
            f"seeds=[{report.seeds[0]}..{report.seeds[-1]}]",
            f"policy={report.scenario['policy_source']} "
            f"metric={report.scenario['metric']} rules={report.scenario['rules_enabled']}",
        ]
        width = max(len(c) for c in columns)
        for c in columns:
            lines.append(f"  {c.ljust(width)}  {_fmt(values[c])}")
        return "\n".join(lines) + "\n"
    raise ReportError(f"unknown report format {fmt!r}")


def emit_series(reports: Sequence[ExperimentReport], fmt: str = "csv") -> str:
    """Obstacle-count series for plotting success and hit percentages."""
    if fmt == "json":
        return json.dumps(
            [
                {
                    "n_obstacles": r.scenario["n_obstacles"],
                    "success_rate": r.success_rate,
                    "any_hit_rate": r.any_hit_rate,
                }
                for r in reports
            ],
            indent=2,
        )
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["n_obstacles", "success_rate", "any_hit_rate"])
    for r in reports:
        writer.writerow(
            [r.scenario["n_obstacles"], _fmt(r.success_rate), _fmt(r.any_hit_rate)]
        )
    return buf.getvalue()


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)

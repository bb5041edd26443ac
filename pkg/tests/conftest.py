import numpy as np
import pytest

from dronenav.env import GridConfig, ScenarioSpec, create_environment


def reach_scenario(**overrides) -> ScenarioSpec:
    base = dict(
        task="reach",
        n_agents=2,
        n_targets=4,
        n_obstacles=0,
        max_cycles=200,
        metric="manhattan",
        rules_enabled=True,
        policy_source="greedy_oracle",
    )
    base.update(overrides)
    return ScenarioSpec(**base)


def search_scenario(**overrides) -> ScenarioSpec:
    base = dict(
        task="search",
        n_agents=2,
        n_targets=4,
        n_obstacles=0,
        n_groups=1,
        max_cycles=1600,
        metric="manhattan",
        rules_enabled=True,
        policy_source="greedy_oracle",
    )
    base.update(overrides)
    return ScenarioSpec(**base)


@pytest.fixture
def grid() -> GridConfig:
    return GridConfig()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def make_env(scenario: ScenarioSpec, seed: int = 7, config: GridConfig = None):
    return create_environment(config or GridConfig(), scenario, seed)


# acceptance criteria report: one line per criterion, shown after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

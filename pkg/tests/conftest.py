"""Shared test helpers for trainer-level tests, plus acceptance reporting."""

import pytest

_acceptance_results = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance_results.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if _acceptance_results:
        terminalreporter.section("acceptance criteria")
        for name, outcome in _acceptance_results:
            label = "PASS" if outcome == "passed" else outcome.upper()
            terminalreporter.write_line(f"{label:6s} {name}")

from evoscript.execution import ScriptedExecutor
from evoscript.gateway import ScriptedGateway
from evoscript.tasks import get_task, reference_policy
from evoscript.training import Trainer, TrainerConfig


def fenced(script: str, chatter: str = "Let me think this through.") -> str:
    """Wrap a script the way a chat model reply would."""
    return f"{chatter}\n\n```python\n{script}\n```\n"


def sudoku_config(**overrides):
    defaults = dict(
        task="sudoku",
        n_update=1,
        n_responses=1,
        n_keep=3,
        n_initial=1,
        batch_size=100,
        max_batches=2,
        seed=0,
        task_params={"count": 100, "width": 2, "height": 3, "mask_fraction": 0.4},
    )
    defaults.update(overrides)
    return TrainerConfig(**defaults)


def cartpole_config(**overrides):
    defaults = dict(
        task="cartpole",
        n_update=1,
        n_responses=1,
        n_keep=3,
        n_initial=1,
        max_batches=3,
        episodes_per_eval=3,
        seed=0,
    )
    defaults.update(overrides)
    return TrainerConfig(**defaults)


def make_trainer(config, responses, out_dir=None, extra_behaviors=None):
    task = get_task(config.task)
    table = task.behaviors()
    if extra_behaviors:
        table.update(extra_behaviors)
    return Trainer(
        task,
        config,
        ScriptedGateway(list(responses)),
        ScriptedExecutor(table=table),
        out_dir=out_dir,
    )


@pytest.fixture
def sudoku_scripts():
    return {
        "wrong": reference_policy("sudoku_fixed_3x3.py"),
        "correct": reference_policy("sudoku_general.py"),
    }


@pytest.fixture
def cartpole_scripts():
    return {
        "naive": reference_policy("cartpole_naive.py"),
        "theta": reference_policy("cartpole_theta.py"),
        "pid": reference_policy("cartpole_pid.py"),
    }

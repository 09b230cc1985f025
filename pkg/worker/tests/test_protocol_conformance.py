"""Protocol conformance against the shared golden fixtures and the trainer.

These tests are the contract seam: the golden exchanges in
fixtures/protocol/ must reproduce byte for byte, the parent-side
subprocess executor must recover from a hung worker, and routing the same
policies through the worker or through the in-process scripted executor
must produce identical results.
"""

import json
import random
import sys
from pathlib import Path

import pytest

from conftest import WORKER_CMD

from evoscript.execution import (
    ExecutionRequest,
    ScriptedExecutor,
    SubprocessExecutor,
)
from evoscript.tasks import get_task, reference_policy
from evoscript.tasks.cartpole import cartpole_reset
from evoscript.tasks.driving import load_driving_fixtures
from evoscript.tasks import DRIVING_FIXTURES
from evoscript.tasks.sudoku import sudoku_dataset

REPO_ROOT = Path(__file__).resolve().parents[2]
FIXTURE_FILES = sorted((REPO_ROOT / "fixtures" / "protocol").glob("*.json"))

IDENTITY_SCRIPT = (
    "# behavior: identity\n"
    "def run(**values):\n"
    "    if len(values) == 1:\n"
    "        return list(values.values())[0]\n"
    "    return values"
)
RAISE_SCRIPT = (
    "# behavior: raise\n"
    "def run(**values):\n"
    '    print("about to fail")\n'
    '    raise ValueError("intentional failure")'
)
HANG_SCRIPT = "# behavior: hang\ndef run(**values):\n    while True:\n        pass"


@pytest.fixture(scope="module")
def live_worker():
    from conftest import WorkerProcess

    process = WorkerProcess()
    yield process
    process.close()


class TestGoldenFixtures:
    def test_fixture_set_is_present(self):
        assert len(FIXTURE_FILES) == 10

    @pytest.mark.parametrize("path", FIXTURE_FILES, ids=lambda p: p.stem)
    def test_golden_exchange_byte_exact(self, live_worker, path):
        fixture = json.loads(path.read_text(encoding="utf-8"))
        response = live_worker.exchange(fixture["request_line"])
        assert response == fixture["response_line"], fixture["name"]


class TestTimeoutKillRestart:
    def test_hung_worker_is_killed_and_service_resumes(self):
        executor = SubprocessExecutor(WORKER_CMD, grace_ms=400)
        try:
            hung = executor.run(
                ExecutionRequest("t-hang", HANG_SCRIPT, "run", {"x": 1}, timeout_ms=300)
            )
            assert hung.status == "timeout"
            recovered = executor.run(
                ExecutionRequest("t-next", IDENTITY_SCRIPT, "run", {"x": 5}, timeout_ms=2000)
            )
            assert recovered.status == "ok"
            assert recovered.output == 5
        finally:
            executor.close()


def _mixed_requests():
    """100 requests across identity/raising policies and all three tasks."""
    requests = []
    sudoku_script = reference_policy("sudoku_general.py")
    sudoku_wrong = reference_policy("sudoku_fixed_3x3.py")
    pid_script = reference_policy("cartpole_pid.py")
    driving_script = reference_policy("driving_heuristic.py")
    sudoku_samples = sudoku_dataset(count=15, width=2, height=2, mask_fraction=0.4, seed=3)
    driving_samples = load_driving_fixtures(DRIVING_FIXTURES)

    for i in range(25):
        requests.append((IDENTITY_SCRIPT, "run", {"x": i}))
        requests.append((IDENTITY_SCRIPT, "run", {"a": i, "b": [i, i + 1]}))
    for i in range(10):
        requests.append((RAISE_SCRIPT, "run", {"x": i}))
    for sample in sudoku_samples:
        requests.append((sudoku_script, "solve_sudoku", sample.input))
    for sample in sudoku_samples[:5]:
        requests.append((sudoku_wrong, "solve_sudoku", sample.input))
    for seed in range(10):
        requests.append((pid_script, "choose_action", cartpole_reset(seed).observation()))
    for sample in driving_samples[:10]:
        requests.append((driving_script, "drive", sample.input))
    assert len(requests) == 100
    return requests


class TestExecutorEquivalence:
    def test_100_mixed_requests_agree_between_subprocess_and_scripted(self):
        table = {}
        for task_name in ("sudoku", "cartpole", "driving"):
            table.update(get_task(task_name).behaviors())
        scripted = ScriptedExecutor(table=table)
        subprocess_executor = SubprocessExecutor(WORKER_CMD, grace_ms=1000)
        mismatches = []
        try:
            for index, (script, entrypoint, values) in enumerate(_mixed_requests()):
                request_id = f"mix-{index:03d}"
                a = scripted.run(
                    ExecutionRequest(request_id, script, entrypoint, values, 5000)
                )
                b = subprocess_executor.run(
                    ExecutionRequest(request_id, script, entrypoint, values, 5000)
                )
                surface_a = (a.status, a.output, a.prints,
                             a.exception.type if a.exception else None,
                             a.exception.message if a.exception else None)
                surface_b = (b.status, b.output, b.prints,
                             b.exception.type if b.exception else None,
                             b.exception.message if b.exception else None)
                if surface_a != surface_b:
                    mismatches.append((request_id, surface_a, surface_b))
        finally:
            subprocess_executor.close()
        assert not mismatches, mismatches[:3]


class TestParentSerializerMatchesFixtures:
    @pytest.mark.parametrize(
        "path",
        [p for p in FIXTURE_FILES if p.stem != "07_malformed_request_line"],
        ids=lambda p: p.stem,
    )
    def test_request_lines_reproduce_from_the_parent_side(self, path):
        fixture = json.loads(path.read_text(encoding="utf-8"))
        payload = json.loads(fixture["request_line"])
        request = ExecutionRequest(
            request_id=payload["request_id"],
            script=payload["script"],
            entrypoint=payload["entrypoint"],
            input=payload["input"],
            timeout_ms=payload["timeout_ms"],
        )
        line = request.to_wire()
        if "future_hint" in payload:
            # the serializer does not emit unknown fields; splice it back in
            obj = json.loads(line)
            obj["future_hint"] = payload["future_hint"]
            line = json.dumps(obj, sort_keys=True, separators=(",", ":"),
                              ensure_ascii=False)
        assert line == fixture["request_line"]

"""Task packs.

A task pack bundles everything the trainer needs to optimize one kind of
policy: the entrypoint name and its specification docstring (the heart of
the setup prompt), the objective, a dataset or an environment, and the
scripted-executor behaviors for the committed reference policies so the
whole stack runs offline.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from ..execution import load_script_behavior
from ..objectives import (
    EPISODIC_RETURN,
    MIXED_IL_RL,
    SUPERVISED,
    DrivingAction,
    ObjectiveSpec,
)
from ..replay import Sample
from . import cartpole as cartpole_mod
from . import driving as driving_mod
from . import sudoku as sudoku_mod

PACKAGE_ROOT = Path(__file__).resolve().parent.parent
PROMPTS_ROOT = PACKAGE_ROOT / "prompts"
POLICY_ASSETS = PACKAGE_ROOT / "assets" / "policies"
DRIVING_FIXTURES = PACKAGE_ROOT / "assets" / "driving" / "records.jsonl"


class TaskError(Exception):
    pass


def _asset_behavior(filename: str, entrypoint: str) -> Callable[[Dict[str, Any]], Any]:
    script = (POLICY_ASSETS / filename).read_text(encoding="utf-8")
    return load_script_behavior(script, entrypoint)


def reference_policy(filename: str) -> str:
    """Source of a committed reference policy script.

    Stripped of surrounding whitespace so it matches what code extraction
    from a model response would yield for the same script.
    """
    return (POLICY_ASSETS / filename).read_text(encoding="utf-8").strip()


class Task:
    """Base task pack; subclasses fill in the per-domain pieces."""

    name: str = ""
    entrypoint: str = ""
    objective_kind: str = SUPERVISED
    docstring: str = ""
    default_gamma: float = 1.0

    def objective(self, config) -> ObjectiveSpec:
        return ObjectiveSpec(
            kind=self.objective_kind,
            exception_penalty=config.exception_penalty,
            infraction_penalty=config.infraction_penalty,
            angle_penalty=config.angle_penalty,
            theta_max_deg=config.theta_max_deg,
        )

    def setup_bindings(self) -> Dict[str, Any]:
        return {"function_name": self.entrypoint, "docstring": self.docstring}

    def dataset(self, config, split: str = "train") -> List[Sample]:
        raise TaskError(f"task {self.name} has no dataset")

    def make_env(self):
        raise TaskError(f"task {self.name} has no environment")

    def score(self, prediction: Any, sample: Sample) -> float:
        raise TaskError(f"task {self.name} has no supervised score")

    def parse_action(self, output: Any) -> Optional[DrivingAction]:
        raise TaskError(f"task {self.name} has no action parser")

    def behaviors(self) -> Dict[str, Callable[[Dict[str, Any]], Any]]:
        return {}


class SudokuTask(Task):
    name = "sudoku"
    entrypoint = "solve_sudoku"
    objective_kind = SUPERVISED
    default_gamma = 1.0  # stationary dataset: cumulative mean
    docstring = '''def solve_sudoku(grid: list[list[int]], width: int, height: int) -> list[list[int]]:
    """
    Complete a generalized Sudoku puzzle.

    The board is a square of side n = width * height cells, divided into
    rectangular subblocks of height rows by width columns. grid[row][col]
    holds an integer in 0..n, where 0 marks an empty cell.

    Fill every empty cell with an integer in 1..n so that each row, each
    column, and each subblock contains every number from 1 to n exactly
    once. Cells that are already filled in must keep their value.

    Note that width and height are parameters: do not assume the standard
    9x9 board with 3x3 subblocks.

    Args:
        grid: the puzzle as an n x n list of rows, 0 for empty cells.
        width: subblock width in columns.
        height: subblock height in rows.

    Returns:
        The completed n x n board as a list of rows.
    """
'''

    def dataset(self, config, split: str = "train") -> List[Sample]:
        params = config.task_params
        if params.get("dataset_file"):
            return sudoku_mod.load_sudoku_dataset(params["dataset_file"])
        seed = config.seed if split == "train" else config.seed + 1000
        return sudoku_mod.sudoku_dataset(
            count=int(params.get("count", 100)),
            width=int(params.get("width", 3)),
            height=int(params.get("height", 3)),
            mask_fraction=float(params.get("mask_fraction", 0.4)),
            seed=seed,
        )

    def score(self, prediction: Any, sample: Sample) -> float:
        return sudoku_mod.score_candidate(prediction, sample)

    def behaviors(self):
        return {
            "sudoku-fixed-3x3": _asset_behavior("sudoku_fixed_3x3.py", self.entrypoint),
            "sudoku-general": _asset_behavior("sudoku_general.py", self.entrypoint),
        }


class CartPoleTask(Task):
    name = "cartpole"
    entrypoint = "choose_action"
    objective_kind = EPISODIC_RETURN
    default_gamma = 0.5  # environment returns drift as the policy mix changes
    docstring = '''def choose_action(x: float, x_dot: float, theta: float, theta_dot: float) -> int:
    """
    Balance a pole hinged on a cart by pushing the cart left or right.

    The cart slides along a frictionless track. The pole starts nearly
    upright and must not fall over, and the cart must stay on the track.

    Args:
        x: cart position in meters; the episode ends if |x| > 2.4.
        x_dot: cart velocity in m/s.
        theta: pole angle in radians (0 is upright); the episode ends if
            |theta| > 0.2095 (12 degrees).
        theta_dot: pole angular velocity in rad/s.

    Every step that does not end the episode earns a reward of 1, and an
    episode lasts at most 500 steps, so the best possible total is 500.

    Returns:
        0 to push the cart to the left, 1 to push it to the right.
    """
'''

    def make_env(self):
        return cartpole_mod.CartPoleEnv()

    def behaviors(self):
        return {
            "cartpole-pid": _asset_behavior("cartpole_pid.py", self.entrypoint),
            "cartpole-naive": _asset_behavior("cartpole_naive.py", self.entrypoint),
            "cartpole-theta": _asset_behavior("cartpole_theta.py", self.entrypoint),
        }


class DrivingTask(Task):
    name = "driving"
    entrypoint = "drive"
    objective_kind = MIXED_IL_RL
    default_gamma = 0.0  # non-stationary replay: score each batch fresh
    docstring = '''def drive(ego: dict, actors: list, distance_to_red_light_m, distance_to_stop_sign_m, target_waypoint: list) -> dict:
    """
    Choose the ego vehicle's speed level and turning angle for this frame.

    All coordinates are absolute world coordinates in meters. The ego
    vehicle and every actor are dicts with keys:
        location: [x, y] position in meters (center of the actor).
        orientation_deg: heading in degrees (0 points along +x).
        speed_mps: current speed in m/s.
        length_m, width_m: bounding box size in meters.
    Actors additionally carry kind: "vehicle" or "pedestrian". The actors
    list covers everything within 50 m; ignore actors that are irrelevant.

    distance_to_red_light_m and distance_to_stop_sign_m are distances in
    meters along the current lane, or None when there is none ahead.
    target_waypoint is the [x, y] point to steer towards, 4 m ahead on
    the planned route.

    Returns:
        A dict {"speed_level": level, "angle_deg": angle} where level is
        "MOVE" (cruise at 6 m/s), "SLOW" (1 m/s) or "STOP" (0 m/s), and
        angle is the turning angle towards the target waypoint in degrees
        relative to the current heading.
    """
'''

    def dataset(self, config, split: str = "train") -> List[Sample]:
        params = config.task_params
        path = params.get("fixtures", str(DRIVING_FIXTURES))
        return driving_mod.load_driving_fixtures(path)

    def parse_action(self, output: Any) -> Optional[DrivingAction]:
        if not isinstance(output, dict):
            return None
        level = output.get("speed_level")
        angle = output.get("angle_deg", 0.0)
        if level not in driving_mod.SPEED_LEVEL_MPS:
            return None
        if not isinstance(angle, (int, float)) or isinstance(angle, bool):
            return None
        return DrivingAction(speed_level=level, angle_deg=float(angle))

    def behaviors(self):
        return {
            "driving-heuristic": _asset_behavior("driving_heuristic.py", self.entrypoint),
        }


_REGISTRY = {task.name: task for task in (SudokuTask(), CartPoleTask(), DrivingTask())}


def task_names() -> List[str]:
    return sorted(_REGISTRY)


def get_task(name: str) -> Task:
    if name not in _REGISTRY:
        raise TaskError(f"unknown task {name!r}; available: {', '.join(task_names())}")
    return _REGISTRY[name]

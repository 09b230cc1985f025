"""Generalized Sudoku task.

A board has ``width * height`` rows and columns, divided into subblocks of
``height`` rows by ``width`` columns. A valid solution places 1..N (with
N = width * height) so that every row, column, and subblock is a
permutation of 1..N and every nonzero given cell is preserved.

The framework never solves puzzles itself; generated policy scripts do.
Datasets are built from a canonical pattern solution transformed by
validity-preserving permutations (digit relabeling, row/column swaps
within a band), then masked.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Tuple

from ..replay import Sample

Grid = List[List[int]]


@dataclass
class SudokuInstance:
    width: int  # subblock width (columns per block)
    height: int  # subblock height (rows per block)
    grid: Grid  # 0 marks an empty cell
    solution: Grid


def board_side(width: int, height: int) -> int:
    return width * height


def sudoku_check(
    width: int, height: int, given: Grid, candidate: Any
) -> Tuple[bool, str]:
    """Validity check with a diagnostic: (ok, reason)."""
    n = board_side(width, height)
    expected = set(range(1, n + 1))
    if (
        not isinstance(candidate, (list, tuple))
        or len(candidate) != n
        or any(not isinstance(row, (list, tuple)) or len(row) != n for row in candidate)
    ):
        return False, f"candidate is not a {n}x{n} grid"
    for r in range(n):
        for c in range(n):
            value = candidate[r][c]
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= n:
                return False, f"cell ({r},{c}) holds {value!r}, expected 1..{n}"
    for r in range(n):
        if set(candidate[r]) != expected:
            return False, f"row {r} is not a permutation of 1..{n}"
    for c in range(n):
        if {candidate[r][c] for r in range(n)} != expected:
            return False, f"column {c} is not a permutation of 1..{n}"
    for block_row in range(width):  # width block-rows of height rows each
        for block_col in range(height):  # height block-cols of width columns each
            values = {
                candidate[block_row * height + r][block_col * width + c]
                for r in range(height)
                for c in range(width)
            }
            if values != expected:
                return False, (
                    f"subblock ({block_row},{block_col}) is not a permutation of 1..{n}"
                )
    for r in range(n):
        for c in range(n):
            if given[r][c] and candidate[r][c] != given[r][c]:
                return False, f"cell ({r},{c}) changed the given value {given[r][c]}"
    return True, "ok"


def sudoku_valid(instance: SudokuInstance, candidate: Any) -> bool:
    ok, _ = sudoku_check(instance.width, instance.height, instance.grid, candidate)
    return ok


def canonical_solution(width: int, height: int) -> Grid:
    """Pattern solution: value(r, c) = (width*(r % height) + r//height + c) % n + 1."""
    n = board_side(width, height)
    return [
        [(width * (r % height) + r // height + c) % n + 1 for c in range(n)]
        for r in range(n)
    ]


def _shuffled_solution(width: int, height: int, rng: random.Random) -> Grid:
    n = board_side(width, height)
    base = canonical_solution(width, height)
    digits = list(range(1, n + 1))
    rng.shuffle(digits)
    relabeled = [[digits[value - 1] for value in row] for row in base]
    # Swap whole rows within each band (rows sharing a block-row).
    row_order: List[int] = []
    for band in range(width):
        rows = list(range(band * height, (band + 1) * height))
        rng.shuffle(rows)
        row_order.extend(rows)
    # Swap whole columns within each stack (columns sharing a block-col).
    col_order: List[int] = []
    for stack in range(height):
        cols = list(range(stack * width, (stack + 1) * width))
        rng.shuffle(cols)
        col_order.extend(cols)
    return [[relabeled[r][c] for c in col_order] for r in row_order]


def make_instance(
    width: int, height: int, mask_fraction: float, rng: random.Random
) -> SudokuInstance:
    n = board_side(width, height)
    solution = _shuffled_solution(width, height, rng)
    grid = [row[:] for row in solution]
    n_masked = round(mask_fraction * n * n)
    for index in rng.sample(range(n * n), n_masked):
        grid[index // n][index % n] = 0
    return SudokuInstance(width, height, grid, solution)


def sudoku_dataset(
    count: int, width: int = 3, height: int = 3, mask_fraction: float = 0.4, seed: int = 0
) -> List[Sample]:
    """Deterministic dataset of (unsolved puzzle, solution) pairs."""
    if not 0 <= mask_fraction <= 1:
        raise ValueError("mask_fraction must be in [0, 1]")
    rng = random.Random(seed)
    samples = []
    for _ in range(count):
        instance = make_instance(width, height, mask_fraction, rng)
        samples.append(
            Sample(
                input={"grid": instance.grid, "width": width, "height": height},
                expected=instance.solution,
            )
        )
    return samples


def score_candidate(prediction: Any, sample: Sample) -> float:
    """Training objective: 1 for a valid, given-consistent completion, else 0."""
    width = sample.input["width"]
    height = sample.input["height"]
    ok, _ = sudoku_check(width, height, sample.input["grid"], prediction)
    return 1.0 if ok else 0.0


def dump_sudoku_dataset(samples: List[Sample]) -> str:
    """Serialize a dataset as canonical JSONL (one puzzle per line)."""
    lines = [
        json.dumps({"input": s.input, "expected": s.expected},
                   sort_keys=True, separators=(",", ":"))
        for s in samples
    ]
    return "\n".join(lines) + "\n"


def load_sudoku_dataset(path) -> List[Sample]:
    """Load a JSONL dataset written by dump_sudoku_dataset."""
    samples = []
    for line_number, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
            samples.append(Sample(input=record["input"], expected=record["expected"]))
        except (ValueError, KeyError) as exc:
            raise ValueError(f"line {line_number}: bad sudoku record: {exc}") from exc
    return samples

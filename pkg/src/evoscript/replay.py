"""Training samples and the replay buffer.

The buffer mixes offline expert-labeled data with online rollout data and
draws training batches stratified by origin (an even offline/online split
by default). Samples flagged with an infraction are drawn with a much
higher weight (100 by default) so that rare bad events dominate updates
right after they happen. Draws are without replacement within one batch,
so a sample appears at most once per batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence

from .objectives import DrivingAction

ORIGIN_OFFLINE = "offline"
ORIGIN_ONLINE = "online"
ORIGINS = (ORIGIN_OFFLINE, ORIGIN_ONLINE)


@dataclass
class Sample:
    """One training example.

    ``expected`` carries the ground-truth label for supervised tasks;
    ``expert_action``/``behavior_action`` carry the action labels for the
    mixed imitation/reinforcement objective. ``infraction`` marks a logged
    bad event; ``exception_hint`` marks samples whose behavior rollout
    raised.
    """

    input: Dict[str, Any]
    expected: Any = None
    expert_action: Optional[DrivingAction] = None
    behavior_action: Optional[DrivingAction] = None
    infraction: bool = False
    exception_hint: bool = False
    origin: str = ORIGIN_OFFLINE
    weight: float = 1.0

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.weight <= 0:
            raise ValueError("weight must be positive")


def weighted_sample_without_replacement(
    items: Sequence[Any], weights: Sequence[float], n: int, rng
) -> List[Any]:
    """Draw up to ``n`` distinct items with probability proportional to weight.

    Uses exponential sort keys (u ** (1/w)): equivalent to drawing one item
    at a time proportionally to weight and removing it. Deterministic for a
    given rng state.
    """
    if len(items) != len(weights):
        raise ValueError("items and weights must have the same length")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    n = min(n, len(items))
    if n == 0:
        return []
    keyed = []
    for index, (item, weight) in enumerate(zip(items, weights)):
        u = rng.random()
        # log(u)/w is a monotone transform of u**(1/w); safe for u=0.
        key = math.log(u) / weight if u > 0 else float("-inf")
        keyed.append((key, index, item))
    keyed.sort(key=lambda t: (-t[0], t[1]))
    return [item for _, _, item in keyed[:n]]


class ReplayBuffer:
    """Holds samples and serves weighted, origin-stratified batches."""

    def __init__(self, capacity: int = 100_000, infraction_weight: float = 100.0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if infraction_weight <= 0:
            raise ValueError("infraction_weight must be positive")
        self.capacity = capacity
        self.infraction_weight = infraction_weight
        self.samples: List[Sample] = []

    def __len__(self) -> int:
        return len(self.samples)

    def add(self, sample: Sample) -> None:
        weight = self.infraction_weight if sample.infraction else 1.0
        self.samples.append(replace(sample, weight=weight))
        if len(self.samples) > self.capacity:
            del self.samples[0]

    def extend(self, samples: Sequence[Sample]) -> None:
        for sample in samples:
            self.add(sample)

    def by_origin(self, origin: str) -> List[Sample]:
        return [s for s in self.samples if s.origin == origin]

    def sample_split(self, n_offline: int, n_online: int, rng) -> List[Sample]:
        """Draw a batch stratified by origin, clamped to availability."""
        if not self.samples:
            raise ValueError("empty replay buffer")
        batch: List[Sample] = []
        for origin, count in ((ORIGIN_OFFLINE, n_offline), (ORIGIN_ONLINE, n_online)):
            if count <= 0:
                continue
            pool = self.by_origin(origin)
            batch.extend(
                weighted_sample_without_replacement(
                    pool, [s.weight for s in pool], count, rng
                )
            )
        return batch

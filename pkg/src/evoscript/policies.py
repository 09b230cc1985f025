"""Policy records and priority bookkeeping.

A policy is one generated script plus its running statistics: the priority
``P`` (an exponentially averaged objective score) and the priority weight
``W``. Both start at zero. After a batch of ``n`` scores ``s_1..s_n``:

    P' = (sum(s) + W * P) / (n + W)
    W' = gamma * (n + W)

With ``gamma = 1`` the priority is the cumulative mean of every score ever
observed; with ``gamma = 0`` it is exactly the latest batch mean. Values in
between weight recent batches higher, which is what a non-stationary
training distribution needs.

Ranking is total and deterministic: descending priority, ties broken by
earlier birth batch, then id.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple


class NoPoliciesError(Exception):
    """Raised when an operation needs at least one live policy."""


@dataclass
class PolicyRecord:
    id: str
    script: str
    priority: float = 0.0
    weight: float = 0.0
    created_at_batch: int = 0
    parent_id: Optional[str] = None
    alive: bool = True


@dataclass
class BatchScores:
    """Per-policy score lists for one training batch."""

    batch_index: int
    scores: dict  # policy id -> list of per-sample scores
    batch_size: int

    def __post_init__(self):
        for policy_id, values in self.scores.items():
            if len(values) != self.batch_size:
                raise ValueError(
                    f"policy {policy_id}: {len(values)} scores for batch size {self.batch_size}"
                )


def script_hash(script: str) -> str:
    # Leading/trailing whitespace is not a meaningful script difference.
    return hashlib.sha256(script.strip().encode("utf-8")).hexdigest()[:10]


def make_policy_id(batch_index: int, script: str) -> str:
    """Zero-padded birth batch + short content hash: human-sortable and stable."""
    return f"{batch_index:04d}-{script_hash(script)}"


def update_priority(record: PolicyRecord, scores: Sequence[float], gamma: float) -> PolicyRecord:
    """Apply one batch of scores to a policy's (P, W) statistics."""
    if not scores:
        raise ValueError("scores must not be empty")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    if record.weight < 0:
        raise ValueError(f"policy {record.id}: negative weight {record.weight}")
    for value in scores:
        if not math.isfinite(value):
            raise ValueError(
                f"policy {record.id}: non-finite score {value!r}; "
                "exception penalties must be substituted before the update"
            )
    n = len(scores)
    total = math.fsum(scores)
    new_priority = (total + record.weight * record.priority) / (n + record.weight)
    new_weight = gamma * (n + record.weight)
    return replace(record, priority=new_priority, weight=new_weight)


def rerank(policies: Iterable[PolicyRecord]) -> List[PolicyRecord]:
    """Deterministic ranking: best priority first. The input is not modified."""
    records = list(policies)
    for record in records:
        if not math.isfinite(record.priority):
            raise ValueError(f"policy {record.id}: non-finite priority")
    return sorted(records, key=lambda r: (-r.priority, r.created_at_batch, r.id))


def select(
    policies: Sequence[PolicyRecord], n_keep: int, n_update: int
) -> Tuple[List[PolicyRecord], List[PolicyRecord]]:
    """Split an already-ranked list into (kept, to_update).

    Keeps the top ``n_keep`` records and selects the top ``n_update`` of
    those for rewriting. Records outside the kept set are marked dead; they
    stay on disk for provenance but never re-enter the population.
    """
    if n_update > n_keep:
        raise ValueError(f"n_update ({n_update}) must be <= n_keep ({n_keep})")
    kept = list(policies[:n_keep])
    for record in policies[n_keep:]:
        record.alive = False
    return kept, kept[:n_update]


def best_policy(policies: Iterable[PolicyRecord]) -> PolicyRecord:
    """The rerank head among live policies."""
    alive = [p for p in policies if p.alive]
    if not alive:
        raise NoPoliciesError("no policies")
    return rerank(alive)[0]

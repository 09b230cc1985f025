"""Training objectives.

Three objective kinds cover the shipped tasks:

* ``supervised`` — a task-supplied comparison of prediction vs ground
  truth, valued in [0, 1] (exact match by default).
* ``episodic_return`` — the per-episode total reward from an environment
  rollout is used directly as the sample score.
* ``mixed_il_rl`` — imitation of an expert action combined with penalty
  terms for infractions, large steering-angle error, and exceptions. The
  expert is only imitated when there was no infraction, or when both the
  policy and the expert disagree with the behavior policy that caused it;
  the infraction penalty only fires when the policy sides with the
  offending behavior policy against the expert. The summed terms are
  clamped to the configured range (default [-10, 1]).

Whenever a script raises, times out, or breaks the protocol, the caller
substitutes the exception penalty for that sample's score, so every score
entering the priority tracker is finite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Optional, Tuple

logger = logging.getLogger(__name__)

SUPERVISED = "supervised"
EPISODIC_RETURN = "episodic_return"
MIXED_IL_RL = "mixed_il_rl"
OBJECTIVE_KINDS = (SUPERVISED, EPISODIC_RETURN, MIXED_IL_RL)


@dataclass(frozen=True)
class DrivingAction:
    """Categorical speed level plus a turning angle in degrees."""

    speed_level: str
    angle_deg: float = 0.0


@dataclass
class ObjectiveSpec:
    kind: str = SUPERVISED
    exception_penalty: float = -10.0
    infraction_penalty: float = -10.0
    angle_penalty: float = -10.0
    theta_max_deg: float = 10.0
    clamp: Tuple[float, float] = (-10.0, 1.0)

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.exception_penalty > 0:
            raise ValueError("exception_penalty must be <= 0")
        if self.clamp[0] > self.clamp[1]:
            raise ValueError("clamp range is inverted")

    def clamped(self, value: float) -> float:
        lo, hi = self.clamp
        return min(hi, max(lo, value))


def score_supervised(prediction: Any, expected: Any) -> float:
    """Default supervised comparison: exact match.

    Type mismatches score 0 rather than raising; a wrong-shaped prediction
    is just a wrong prediction.
    """
    try:
        return 1.0 if prediction == expected else 0.0
    except Exception as exc:  # exotic __eq__ on policy output
        logger.debug("score comparison failed (%s); scoring 0", exc)
        return 0.0


def score_mixed_il_rl(
    spec: ObjectiveSpec,
    action: Optional[DrivingAction],
    expert_action: DrivingAction,
    behavior_action: Optional[DrivingAction],
    infraction: bool,
    had_exception: bool,
) -> float:
    """Imitation + infraction + angle + exception terms, then clamp.

    ``action`` is None when the policy produced no usable action (it
    raised, or returned something unparseable); no indicator that needs
    the policy action can fire then.
    """
    if infraction and behavior_action is None:
        raise ValueError("infraction samples need the behavior action that caused them")

    speed = action.speed_level if action is not None else None
    expert_speed = expert_action.speed_level
    behavior_speed = behavior_action.speed_level if behavior_action is not None else None

    score = 0.0
    if speed is not None and speed == expert_speed:
        if (not infraction) or (speed != behavior_speed and expert_speed != behavior_speed):
            score += 1.0
    if infraction and speed is not None and speed == behavior_speed and expert_speed != behavior_speed:
        score += spec.infraction_penalty
    if action is not None and abs(action.angle_deg - expert_action.angle_deg) > spec.theta_max_deg:
        score += spec.angle_penalty
    if had_exception:
        score += spec.exception_penalty
    return spec.clamped(score)

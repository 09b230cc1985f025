"""Cart-pole balancing environment.

Canonical constants and update equations for the classic control problem:
gravity 9.8, cart mass 1.0, pole mass 0.1, half pole length 0.5, force
magnitude 10 N, Euler integration at tau = 0.02 s. An episode ends when
the cart leaves +/-2.4 m, the pole passes +/-12 degrees, or 500 steps
survive; every step yields reward 1, so the maximum return is 500.

Deterministic: reset(seed) draws the four state components uniformly from
[-0.05, 0.05] with a dedicated RNG, and the dynamics are pure float math.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Dict, Tuple

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_POLE_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * HALF_POLE_LENGTH
FORCE_MAG = 10.0
TAU = 0.02

X_LIMIT = 2.4
THETA_LIMIT_RAD = 12 * 2 * math.pi / 360
MAX_STEPS = 500


@dataclass
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    step_count: int = 0

    def observation(self) -> Dict[str, float]:
        return {
            "x": self.x,
            "x_dot": self.x_dot,
            "theta": self.theta,
            "theta_dot": self.theta_dot,
        }


def cartpole_reset(seed: int) -> CartPoleState:
    rng = random.Random(seed)
    return CartPoleState(
        x=rng.uniform(-0.05, 0.05),
        x_dot=rng.uniform(-0.05, 0.05),
        theta=rng.uniform(-0.05, 0.05),
        theta_dot=rng.uniform(-0.05, 0.05),
    )


def cartpole_step(state: CartPoleState, action: int) -> Tuple[CartPoleState, float, bool]:
    """One Euler step under force +/-10 N. Raises if the episode is over."""
    if action not in (0, 1):
        raise ValueError(f"action must be 0 (push left) or 1 (push right), got {action!r}")
    if is_done(state):
        raise RuntimeError("cannot step a finished episode")
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    cos_theta = math.cos(state.theta)
    sin_theta = math.sin(state.theta)
    temp = (force + POLE_MASS_LENGTH * state.theta_dot**2 * sin_theta) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_theta - cos_theta * temp) / (
        HALF_POLE_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_theta**2 / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_theta / TOTAL_MASS
    new_state = CartPoleState(
        x=state.x + TAU * state.x_dot,
        x_dot=state.x_dot + TAU * x_acc,
        theta=state.theta + TAU * state.theta_dot,
        theta_dot=state.theta_dot + TAU * theta_acc,
        step_count=state.step_count + 1,
    )
    return new_state, 1.0, is_done(new_state)


def is_done(state: CartPoleState) -> bool:
    return (
        abs(state.x) > X_LIMIT
        or abs(state.theta) > THETA_LIMIT_RAD
        or state.step_count >= MAX_STEPS
    )


class CartPoleEnv:
    """Stateful wrapper used by rollout code; one instance per episode lane."""

    def __init__(self):
        self.state: CartPoleState | None = None

    def reset(self, seed: int) -> Dict[str, float]:
        self.state = cartpole_reset(seed)
        return self.state.observation()

    def step(self, action: int) -> Tuple[Dict[str, float], float, bool]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        self.state, reward, done = cartpole_step(self.state, action)
        return self.state.observation(), reward, done

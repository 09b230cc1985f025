"""Cart-pole physics: reset distribution, one-step oracle, termination."""

import random

import pytest

from evoscript.execution import ScriptedExecutor
from evoscript.tasks import get_task
from evoscript.tasks.cartpole import (
    CartPoleEnv,
    CartPoleState,
    MAX_STEPS,
    THETA_LIMIT_RAD,
    cartpole_reset,
    cartpole_step,
)


def rollout(policy, seed, max_steps=MAX_STEPS):
    env = CartPoleEnv()
    obs = env.reset(seed)
    total = 0.0
    for _ in range(max_steps):
        obs, reward, done = env.step(policy(**obs))
        total += reward
        if done:
            break
    return total


class TestReset:
    def test_deterministic_per_seed(self):
        assert cartpole_reset(7) == cartpole_reset(7)
        assert cartpole_reset(7) != cartpole_reset(8)

    def test_components_within_range(self):
        for seed in range(1000):
            state = cartpole_reset(seed)
            for value in (state.x, state.x_dot, state.theta, state.theta_dot):
                assert -0.05 <= value <= 0.05
            assert state.step_count == 0

    def test_component_means_near_zero(self):
        n = 10_000
        sums = [0.0, 0.0, 0.0, 0.0]
        for seed in range(n):
            state = cartpole_reset(seed)
            for i, value in enumerate((state.x, state.x_dot, state.theta, state.theta_dot)):
                sums[i] += value
        for total in sums:
            assert abs(total / n) < 0.005


class TestStep:
    def test_one_step_from_zero_state_matches_hand_evaluation(self):
        # Hand-evaluated update for the exact-zero state, push right:
        #   temp      = 10 / 1.1
        #   theta_acc = -temp / (0.5 * (4/3 - 0.1/1.1))
        #   x_acc     = temp - 0.05 * theta_acc / 1.1
        # and positions integrate the OLD velocities, so x' = theta' = 0.
        state, reward, done = cartpole_step(CartPoleState(0.0, 0.0, 0.0, 0.0), 1)
        temp = 10.0 / 1.1
        theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1))
        x_acc = temp - 0.05 * theta_acc / 1.1
        assert reward == 1.0 and not done
        assert state.x == 0.0
        assert state.theta == 0.0
        assert state.x_dot == pytest.approx(0.02 * x_acc, abs=1e-15)
        assert state.theta_dot == pytest.approx(0.02 * theta_acc, abs=1e-15)

    def test_mirror_symmetry_from_zero_state(self):
        right, _, _ = cartpole_step(CartPoleState(0.0, 0.0, 0.0, 0.0), 1)
        left, _, _ = cartpole_step(CartPoleState(0.0, 0.0, 0.0, 0.0), 0)
        assert left.x == -right.x
        assert left.x_dot == -right.x_dot
        assert left.theta == -right.theta
        assert left.theta_dot == -right.theta_dot

    def test_full_survival_caps_at_500(self):
        total = rollout(lambda x, x_dot, theta, theta_dot:
                        1 if 0.5 * x + x_dot + 20 * theta + 2 * theta_dot > 0 else 0, seed=0)
        assert total == 500.0

    def test_step_after_done_raises(self):
        state = CartPoleState(0.0, 0.0, THETA_LIMIT_RAD + 0.01, 0.0, step_count=3)
        with pytest.raises(RuntimeError, match="finished"):
            cartpole_step(state, 0)

    def test_invalid_action_rejected(self):
        with pytest.raises(ValueError, match="action"):
            cartpole_step(CartPoleState(0.0, 0.0, 0.0, 0.0), 2)

    def test_upright_equilibrium_is_unstable(self):
        # Alternating pushes (zero net force): the pole still falls.
        state = CartPoleState(0.0, 0.0, 0.001, 0.0)
        thetas = [abs(state.theta)]
        for i in range(20):
            state, _, _ = cartpole_step(state, i % 2)
            thetas.append(abs(state.theta))
        assert all(a <= b for a, b in zip(thetas, thetas[1:]))
        assert thetas[-1] > 10 * thetas[0]

    def test_trajectories_bit_exact_for_same_seed_and_actions(self):
        rng = random.Random(5)
        actions = [rng.randrange(2) for _ in range(50)]

        def run():
            env = CartPoleEnv()
            env.reset(123)
            trajectory = []
            for action in actions:
                obs, _, done = env.step(action)
                trajectory.append(tuple(obs.values()))
                if done:
                    break
            return trajectory

        assert run() == run()


class TestReferencePolicies:
    def _behavior(self, name):
        return get_task("cartpole").behaviors()[name]

    def test_balance_controller_survives_500_for_seeds_0_to_9(self):
        policy = self._behavior("cartpole-pid")
        for seed in range(10):
            assert rollout(lambda **obs: policy(obs), seed) == 500.0

    def test_always_left_fails_fast(self):
        policy = self._behavior("cartpole-naive")
        returns = [rollout(lambda **obs: policy(obs), seed) for seed in range(10)]
        assert max(returns) < 30
        assert sum(returns) / len(returns) < 15

    def test_theta_only_policy_is_mediocre(self):
        policy = self._behavior("cartpole-theta")
        returns = [rollout(lambda **obs: policy(obs), seed) for seed in range(10)]
        assert 20 < sum(returns) / len(returns) < 200

    def test_scripted_executor_serves_reference_policies(self):
        executor = ScriptedExecutor(table=get_task("cartpole").behaviors())
        obs = cartpole_reset(0).observation()
        from evoscript.execution import ExecutionRequest

        result = executor.run(
            ExecutionRequest("r", "# behavior: cartpole-pid", "choose_action", obs, 1000)
        )
        assert result.status == "ok"
        assert result.output in (0, 1)

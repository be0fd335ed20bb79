import math

import numpy as np
import pytest

from rudpg.envs import (LqrEnv, Pendulum, PointMass, lqr_optimal_gain, lqr_optimal_value, make_env,
                        solve_discounted_riccati)


def scalar_riccati_root(a, b, q, r, gamma):
    """Positive root of the scalar discounted Riccati equation, in closed form.

    P = q + g a^2 P - g^2 a^2 b^2 P^2 / (r + g b^2 P) rearranges to
    g b^2 P^2 + (r - g a^2 r - q g b^2) P - q r = 0.
    """
    A2 = gamma * b * b
    B1 = r - gamma * a * a * r - q * gamma * b * b
    C0 = -q * r
    return (-B1 + math.sqrt(B1 * B1 - 4 * A2 * C0)) / (2 * A2)


def rollout(env, actions_fn, seed, steps):
    state = env.reset(seed)
    total = 0.0
    for _ in range(steps):
        res = env.step(actions_fn(state))
        total += res.reward
        state = res.next_state
    return total


class TestReset:
    def test_pendulum_seeded(self):
        env = Pendulum()
        np.testing.assert_array_equal(env.reset(7), env.reset(7))
        assert not np.array_equal(env.reset(7), env.reset(8))

    def test_lqr_initial_box(self):
        env = LqrEnv()
        for seed in range(50):
            assert np.all(np.abs(env.reset(seed)) <= env.init_box)

    def test_pointmass_goal_distance_positive(self):
        env = PointMass()
        for seed in range(50):
            env.reset(seed)
            assert env.goal_distance() > 0


class TestStep:
    def test_pendulum_upright_rest_reward_zero(self):
        env = Pendulum()
        env.reset(0)
        env.set_state(0.0, 0.0)
        res = env.step(np.array([0.0]))
        assert res.reward == 0.0
        np.testing.assert_allclose(res.next_state, [1.0, 0.0, 0.0])

    def test_pendulum_reward_formula(self):
        env = Pendulum()
        env.reset(0)
        env.set_state(2.0, -3.0)
        res = env.step(np.array([1.5]))
        assert res.reward == pytest.approx(-(4.0 + 0.9 + 0.001 * 2.25))

    def test_lqr_reward(self):
        env = LqrEnv()
        env.reset(0)
        x = np.array([0.3, -0.7])
        env.set_state(x)
        u = np.array([1.2])
        res = env.step(u)
        assert res.reward == pytest.approx(-(x @ env.Q @ x + u @ env.R @ u))
        np.testing.assert_allclose(res.next_state, env.A @ x + env.B @ u)

    @pytest.mark.parametrize("env_id", ["pendulum", "pointmass", "lqr"])
    def test_determinism(self, env_id):
        env = make_env(env_id)
        rng = np.random.default_rng(0)
        actions = rng.uniform(env.spec.action_low, env.spec.action_high, (150, env.spec.action_dim))
        it = iter(actions)
        a = rollout(env, lambda s: next(it), 5, 150)
        it = iter(actions)
        b = rollout(env, lambda s: next(it), 5, 150)
        assert a == b

    @pytest.mark.parametrize("env_id", ["pendulum", "pointmass", "lqr"])
    def test_truncation_flag(self, env_id):
        env = make_env(env_id)
        env.reset(0)
        flags = [env.step(np.zeros(env.spec.action_dim)) for _ in range(env.spec.max_episode_steps)]
        assert [r.truncated for r in flags] == [False] * (env.spec.max_episode_steps - 1) + [True]

    def test_default_limits(self):
        assert make_env("pendulum").spec.max_episode_steps == 200
        assert make_env("pointmass").spec.max_episode_steps == 100
        assert make_env("lqr").spec.max_episode_steps == 100

    @pytest.mark.parametrize("env_id", ["pendulum", "pointmass", "lqr"])
    def test_action_dimension_checked(self, env_id):
        env = make_env(env_id)
        env.reset(0)
        with pytest.raises(ValueError):
            env.step(np.zeros(env.spec.action_dim + 1))

    @pytest.mark.parametrize("env_id", ["pendulum", "pointmass", "lqr"])
    def test_reward_bounds(self, env_id):
        env = make_env(env_id)
        rng = np.random.default_rng(1)
        lo, hi = env.reward_bounds
        assert math.isfinite(lo) and math.isfinite(hi)
        for ep in range(5):
            env.reset(ep)
            for _ in range(env.spec.max_episode_steps):
                res = env.step(rng.uniform(env.spec.action_low, env.spec.action_high))
                assert lo <= res.reward <= hi
                assert res.next_state.shape == (env.spec.state_dim,)

    def test_pointmass_terminates_at_goal(self):
        env = PointMass()
        env.reset(0)
        env.pos = np.array([0.01, 0.0])
        env.vel = np.zeros(2)
        assert env.step(np.zeros(2)).done

    def test_unknown_env(self):
        with pytest.raises(ValueError):
            make_env("hopper")


class TestLqrOracle:
    def test_origin_value_zero(self):
        assert lqr_optimal_value(LqrEnv(), np.zeros(2), 0.99) == 0.0

    def test_scalar_matches_closed_form_root(self):
        env = LqrEnv(A=[[0.9]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
        p = scalar_riccati_root(0.9, 1.0, 1.0, 1.0, 0.99)
        assert lqr_optimal_value(env, np.array([1.0]), 0.99) == pytest.approx(-p, abs=1e-9)

    def test_symmetric(self):
        env = LqrEnv()
        s = np.array([0.4, -0.9])
        assert lqr_optimal_value(env, s, 0.99) == pytest.approx(lqr_optimal_value(env, -s, 0.99), rel=1e-14)

    def test_riccati_fixed_point(self):
        env = LqrEnv()
        g = 0.95
        P = solve_discounted_riccati(env.A, env.B, env.Q, env.R, g)
        A, B, Q, R = env.A, env.B, env.Q, env.R
        rhs = Q + g * A.T @ P @ A - g ** 2 * A.T @ P @ B @ np.linalg.solve(R + g * B.T @ P @ B, B.T @ P @ A)
        np.testing.assert_allclose(P, rhs, atol=1e-9)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_discounted_rollout(self, seed):
        gamma = 0.99
        env = LqrEnv(max_episode_steps=10_000)
        K = lqr_optimal_gain(env, gamma)
        s0 = env.reset(seed)
        expected = lqr_optimal_value(env, s0, gamma)
        state, total, disc = s0, 0.0, 1.0
        for _ in range(5000):
            u = -K @ state
            assert np.all(np.abs(u) <= env.spec.action_high)
            res = env.step(u)
            total += disc * res.reward
            disc *= gamma
            state = res.next_state
        assert total == pytest.approx(expected, abs=1e-4)

    def test_optimal_beats_perturbed_policy(self):
        gamma = 0.99
        env = LqrEnv(max_episode_steps=10_000)
        K = lqr_optimal_gain(env, gamma)

        def value(gain):
            state, total, disc = env.reset(3), 0.0, 1.0
            for _ in range(3000):
                res = env.step(np.clip(-gain @ state, -5, 5))
                total += disc * res.reward
                disc *= gamma
                state = res.next_state
            return total

        assert value(K) > value(K * 1.2)
        assert value(K) > value(K * 0.8)

    def test_non_convergence(self):
        # unstable and uncontrollable: the iteration diverges
        with pytest.raises(RuntimeError):
            solve_discounted_riccati([[2.0]], [[0.0]], [[1.0]], [[1.0]], 1.0, max_iter=200)

    def test_requires_lqr_env(self):
        with pytest.raises(TypeError):
            lqr_optimal_value(Pendulum(), np.zeros(3), 0.99)

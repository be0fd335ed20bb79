"""Small continuous-control MDPs: pendulum swing-up, point-mass reacher, LQR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be >= 1")
        if self.action_low.shape != (self.action_dim,) or self.action_high.shape != (self.action_dim,):
            raise ValueError("action bounds must have length action_dim")
        if not np.all(self.action_low < self.action_high):
            raise ValueError("action_low must be < action_high componentwise")

    @property
    def action_scale(self) -> np.ndarray:
        return (self.action_high - self.action_low) / 2.0

    @property
    def action_center(self) -> np.ndarray:
        return (self.action_high + self.action_low) / 2.0


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool
    truncated: bool


class Environment:
    """Base class.  ``done`` flags terminal dynamics, ``truncated`` the step limit."""

    spec: EnvSpec
    reward_bounds: tuple[float, float]

    def __init__(self):
        self._steps = 0
        self._rng = np.random.default_rng(0)

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self._steps = 0
        self._reset()
        return self._observe()

    def step(self, action) -> StepResult:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.spec.action_dim,):
            raise ValueError(f"action has shape {action.shape}, expected ({self.spec.action_dim},)")
        reward, done = self._step(action)
        self._steps += 1
        lo, hi = self.reward_bounds
        reward = float(min(max(reward, lo), hi))
        truncated = self._steps >= self.spec.max_episode_steps
        return StepResult(self._observe(), reward, bool(done), truncated)

    def _reset(self) -> None:
        raise NotImplementedError

    def _step(self, action: np.ndarray) -> tuple[float, bool]:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError


def _angle_normalize(x: float) -> float:
    return ((x + np.pi) % (2 * np.pi)) - np.pi


class Pendulum(Environment):
    """Torque-limited pendulum swing-up; observation (cos th, sin th, th_dot)."""

    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.0
    length = 1.0
    reward_bounds = (-(np.pi ** 2 + 0.1 * 8.0 ** 2 + 0.001 * 2.0 ** 2), 0.0)

    def __init__(self, max_episode_steps: int = 200):
        super().__init__()
        self.spec = EnvSpec(3, 1, np.array([-self.max_torque]), np.array([self.max_torque]),
                            max_episode_steps)
        self.theta = 0.0
        self.theta_dot = 0.0

    def _reset(self):
        self.theta = self._rng.uniform(-np.pi, np.pi)
        self.theta_dot = self._rng.uniform(-1.0, 1.0)

    def set_state(self, theta: float, theta_dot: float) -> np.ndarray:
        self.theta, self.theta_dot = float(theta), float(theta_dot)
        return self._observe()

    def _step(self, action):
        u = float(np.clip(action[0], -self.max_torque, self.max_torque))
        th, thdot = self.theta, self.theta_dot
        cost = _angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2
        thdot = thdot + (3 * self.g / (2 * self.length) * np.sin(th)
                         + 3.0 / (self.m * self.length ** 2) * u) * self.dt
        thdot = float(np.clip(thdot, -self.max_speed, self.max_speed))
        self.theta = th + thdot * self.dt
        self.theta_dot = thdot
        return -cost, False

    def _observe(self):
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])


class PointMass(Environment):
    """Damped 2-D point mass pushed toward a goal at the origin.

    Observation is (x, y, vx, vy); the goal is fixed, so position is the
    offset to the goal.  Reaching within ``goal_radius`` at low speed ends
    the episode.
    """

    dt = 0.1
    damping = 0.5
    arena = 2.0
    goal_radius = 0.05
    reward_bounds = (-(np.sqrt(2) * 2.0 + 0.1 * 2.0), 0.0)

    def __init__(self, max_episode_steps: int = 100):
        super().__init__()
        self.spec = EnvSpec(4, 2, -np.ones(2), np.ones(2), max_episode_steps)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)

    def _reset(self):
        radius = self._rng.uniform(0.5, 1.5)
        angle = self._rng.uniform(-np.pi, np.pi)
        self.pos = radius * np.array([np.cos(angle), np.sin(angle)])
        self.vel = np.zeros(2)

    def goal_distance(self) -> float:
        return float(np.linalg.norm(self.pos))

    def _step(self, action):
        a = np.clip(action, -1.0, 1.0)
        self.vel = (1.0 - self.damping * self.dt) * self.vel + a * self.dt
        self.pos = np.clip(self.pos + self.vel * self.dt, -self.arena, self.arena)
        dist = self.goal_distance()
        reward = -dist - 0.05 * float(a @ a)
        done = dist < self.goal_radius and float(np.linalg.norm(self.vel)) < 0.1
        return reward, done

    def _observe(self):
        return np.concatenate([self.pos, self.vel])


class LqrEnv(Environment):
    """Linear dynamics x' = Ax + Bu with reward -(x'Qx + u'Ru).

    The default is a 2-D double integrator with scalar control.  State is
    clipped to ``[-state_limit, state_limit]`` so rewards stay bounded; the
    clip never binds along optimal trajectories from the initial box.
    """

    def __init__(self, A=None, B=None, Q=None, R=None, action_limit: float = 5.0,
                 init_box: float = 1.0, state_limit: float = 50.0, max_episode_steps: int = 100):
        super().__init__()
        self.A = np.atleast_2d(np.array([[1.0, 0.1], [0.0, 1.0]] if A is None else A, dtype=np.float64))
        self.B = np.atleast_2d(np.array([[0.005], [0.1]] if B is None else B, dtype=np.float64))
        n, m = self.B.shape
        self.Q = np.atleast_2d(np.eye(n) if Q is None else np.array(Q, dtype=np.float64))
        self.R = np.atleast_2d(0.1 * np.eye(m) if R is None else np.array(R, dtype=np.float64))
        if self.A.shape != (n, n) or self.Q.shape != (n, n) or self.R.shape != (m, m):
            raise ValueError("inconsistent LQR matrix shapes")
        self.init_box = float(init_box)
        self.state_limit = float(state_limit)
        self.spec = EnvSpec(n, m, -action_limit * np.ones(m), action_limit * np.ones(m), max_episode_steps)
        q_max = state_limit ** 2 * float(np.abs(self.Q).sum())
        r_max = action_limit ** 2 * float(np.abs(self.R).sum())
        self.reward_bounds = (-(q_max + r_max), 0.0)
        self.x = np.zeros(n)

    def _reset(self):
        self.x = self._rng.uniform(-self.init_box, self.init_box, self.spec.state_dim)

    def set_state(self, x) -> np.ndarray:
        self.x = np.array(x, dtype=np.float64)
        return self._observe()

    def _step(self, action):
        x, u = self.x, action
        reward = -(float(x @ self.Q @ x) + float(u @ self.R @ u))
        self.x = np.clip(self.A @ x + self.B @ u, -self.state_limit, self.state_limit)
        return reward, False

    def _observe(self):
        return self.x.copy()


def solve_discounted_riccati(A, B, Q, R, gamma: float, tol: float = 1e-10,
                             max_iter: int = 10_000) -> np.ndarray:
    """Fixed point P of P = Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA."""
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (A, B, Q, R))
    P = Q.copy()
    for _ in range(max_iter):
        bp = B.T @ P
        gain = np.linalg.solve(R + gamma * bp @ B, bp @ A)
        P_next = Q + gamma * A.T @ P @ A - gamma ** 2 * A.T @ P @ B @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) < tol:
            return P_next
        P = P_next
    raise RuntimeError(f"discounted Riccati iteration did not converge in {max_iter} iterations")


def lqr_optimal_gain(env: LqrEnv, gamma: float) -> np.ndarray:
    """Feedback matrix K with optimal control u = -K x."""
    P = solve_discounted_riccati(env.A, env.B, env.Q, env.R, gamma)
    return gamma * np.linalg.solve(env.R + gamma * env.B.T @ P @ env.B, env.B.T @ P @ env.A)


def lqr_optimal_value(env: LqrEnv, state, gamma: float) -> float:
    """Optimal discounted return -s'Ps from ``state`` (unconstrained actions)."""
    if not isinstance(env, LqrEnv):
        raise TypeError("lqr_optimal_value needs an LqrEnv")
    s = np.asarray(state, dtype=np.float64)
    P = solve_discounted_riccati(env.A, env.B, env.Q, env.R, gamma)
    return -float(s @ P @ s)


ENV_IDS = ("pendulum", "pointmass", "lqr")


def make_env(env_id: str, max_episode_steps: int | None = None) -> Environment:
    factories = {"pendulum": Pendulum, "pointmass": PointMass, "lqr": LqrEnv}
    if env_id not in factories:
        raise ValueError(f"unknown env_id {env_id!r}; expected one of {ENV_IDS}")
    if max_episode_steps is None:
        return factories[env_id]()
    return factories[env_id](max_episode_steps=max_episode_steps)

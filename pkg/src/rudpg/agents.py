"""DDPG / TD3 learners and the streaming and regularly-updated training loops."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .envs import Environment, EnvSpec
from .replay import Batch, ReplayBuffer
from .tensor import AdamState, Mlp, adam_step

EXPLORATION_TYPES = ("gaussian", "ornstein_uhlenbeck")


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one named purpose under a master seed."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode())])


@dataclass
class AgentConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    exploration_noise_sigma: float = 0.1
    target_policy_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    policy_delay: int = 2
    use_clipped_double_q: bool = True
    use_target_policy_smoothing: bool = True
    exploration_type: str = "gaussian"
    hidden_sizes: tuple[int, ...] = (64, 64)
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_dt: float = 1e-2

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.validate()

    def validate(self) -> None:
        checks = [
            (0.0 < self.gamma <= 1.0, "gamma must be in (0, 1]"),
            (0.0 < self.tau < 1.0, "tau must be in (0, 1)"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.target_noise_clip > 0.0, "target_noise_clip must be > 0"),
            (self.policy_delay >= 1, "policy_delay must be >= 1"),
            (self.actor_lr > 0 and self.critic_lr > 0, "learning rates must be > 0"),
            (self.exploration_type in EXPLORATION_TYPES,
             f"exploration_type must be one of {EXPLORATION_TYPES}"),
            (len(self.hidden_sizes) >= 1 and min(self.hidden_sizes) >= 1, "hidden_sizes must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(message)


def td3_config(**overrides) -> AgentConfig:
    return AgentConfig(**overrides)


def ddpg_config(**overrides) -> AgentConfig:
    """Plain DDPG: OU exploration, one critic, no smoothing or delay, batch 128."""
    base = dict(batch_size=128, actor_lr=1e-4, critic_lr=1e-3, policy_delay=1,
                use_clipped_double_q=False, use_target_policy_smoothing=False,
                exploration_type="ornstein_uhlenbeck")
    base.update(overrides)
    return AgentConfig(**base)


@dataclass
class Schedule:
    total_steps: int
    block_size: int = 1
    warmup_steps: int | None = None
    eval_interval: int = 1000
    replay_capacity: int | None = None

    def resolve(self, batch_size: int) -> "Schedule":
        """Fill defaults (warmup = max(N, 1000), capacity = T) and validate."""
        warmup = max(batch_size, 1000) if self.warmup_steps is None else self.warmup_steps
        capacity = self.total_steps if self.replay_capacity is None else self.replay_capacity
        out = replace(self, warmup_steps=warmup, replay_capacity=capacity)
        if out.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 1 <= out.block_size <= out.total_steps:
            raise ValueError("block_size F must satisfy 1 <= F <= T")
        if warmup < batch_size:
            raise ValueError(f"warmup_steps ({warmup}) must be >= batch size ({batch_size})")
        if out.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        return out


class GaussianNoise:
    def __init__(self, sigma: float, dim: int, rng: np.random.Generator):
        self.sigma = sigma
        self.dim = dim
        self.rng = rng

    def sample(self) -> np.ndarray:
        return self.sigma * self.rng.standard_normal(self.dim)

    def reset(self) -> None:
        pass


class OuNoise:
    """Mean-zero Ornstein-Uhlenbeck process, Euler-discretized with step ``dt``."""

    def __init__(self, dim: int, rng: np.random.Generator, theta_ou: float = 0.15,
                 sigma_ou: float = 0.2, dt: float = 1e-2):
        self.theta_ou = theta_ou
        self.sigma_ou = sigma_ou
        self.dt = dt
        self.rng = rng
        self.current = np.zeros(dim)

    def sample(self) -> np.ndarray:
        self.current = (self.current - self.theta_ou * self.current * self.dt
                        + self.sigma_ou * math.sqrt(self.dt) * self.rng.standard_normal(self.current.size))
        return self.current.copy()

    def reset(self) -> None:
        self.current = np.zeros_like(self.current)


def make_exploration(config: AgentConfig, action_dim: int, rng: np.random.Generator):
    if config.exploration_type == "gaussian":
        return GaussianNoise(config.exploration_noise_sigma, action_dim, rng)
    return OuNoise(action_dim, rng, config.ou_theta, config.ou_sigma, config.ou_dt)


class Learner:
    """Actor, one or two critics, their target copies and Adam states.

    Noise and the actor's tanh output live in normalized action units
    ``[-1, 1]``; critics see actions in environment units.
    """

    def __init__(self, spec: EnvSpec, config: AgentConfig, rng: np.random.Generator | int = 0):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.spec = spec
        self.config = config
        hidden = list(config.hidden_sizes)
        s, a = spec.state_dim, spec.action_dim
        self.actor = Mlp([s, *hidden, a], "tanh", rng=rng)
        n_critics = 2 if config.use_clipped_double_q else 1
        self.critics = [Mlp([s + a, *hidden, 1], "identity", rng=rng) for _ in range(n_critics)]
        self.target_actor = self.actor.copy()
        self.target_critics = [c.copy() for c in self.critics]
        self.actor_opt = AdamState(self.actor.size, config.actor_lr)
        self.critic_opts = [AdamState(c.size, config.critic_lr) for c in self.critics]
        self.update_counter = 0
        self.actor_updates = 0
        self.smoothing_rng = rng_stream(0, "smoothing")
        self._scale = spec.action_scale
        self._center = spec.action_center

    def scale_action(self, normalized: np.ndarray) -> np.ndarray:
        return self._center + self._scale * normalized

    def policy(self, states, target: bool = False) -> np.ndarray:
        net = self.target_actor if target else self.actor
        return self.scale_action(net.forward(states))

    @staticmethod
    def q_value(critic: Mlp, states, actions) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        return critic.forward(x)[:, 0]

    def select_action(self, state, noise=None) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.spec.state_dim,):
            raise ValueError(f"state has shape {state.shape}, expected ({self.spec.state_dim},)")
        action = self.scale_action(self.actor.forward(state))
        if noise is not None:
            action = action + self._scale * noise.sample()
        return np.clip(action, self.spec.action_low, self.spec.action_high)

    def compute_target_ddpg(self, batch: Batch, gamma: float | None = None) -> np.ndarray:
        gamma = self.config.gamma if gamma is None else gamma
        next_actions = self.policy(batch.next_states, target=True)
        q_next = self.q_value(self.target_critics[0], batch.next_states, next_actions)
        return batch.rewards + gamma * (1.0 - batch.dones) * q_next

    def smoothing_noise(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        cfg = self.config
        rng = self.smoothing_rng if rng is None else rng
        eps = cfg.target_policy_noise_sigma * rng.standard_normal((n, self.spec.action_dim))
        return np.clip(eps, -cfg.target_noise_clip, cfg.target_noise_clip)

    def compute_target_td3(self, batch: Batch, config: AgentConfig | None = None,
                           noise: np.ndarray | None = None, critics: Sequence[Mlp] | None = None) -> np.ndarray:
        """Clipped double-Q target with target-policy smoothing.

        ``noise`` overrides the smoothing draw (normalized units); ``critics``
        overrides which target critics enter the minimum.
        """
        cfg = self.config if config is None else config
        critics = self.target_critics if critics is None else critics
        mu = self.target_actor.forward(batch.next_states)
        if noise is None:
            noise = self.smoothing_noise(len(batch)) if cfg.use_target_policy_smoothing else 0.0
        next_actions = self.scale_action(np.clip(mu + noise, -1.0, 1.0))
        q_next = np.min([self.q_value(c, batch.next_states, next_actions) for c in critics], axis=0)
        return batch.rewards + cfg.gamma * (1.0 - batch.dones) * q_next

    def compute_target(self, batch: Batch) -> np.ndarray:
        cfg = self.config
        if cfg.use_clipped_double_q or cfg.use_target_policy_smoothing:
            return self.compute_target_td3(batch)
        return self.compute_target_ddpg(batch)

    def critic_loss_and_grads(self, batch: Batch, targets: np.ndarray) -> tuple[list[float], list[np.ndarray]]:
        """Per-critic mean squared TD error and its parameter gradient."""
        x = np.concatenate([batch.states, batch.actions], axis=1)
        n = len(targets)
        losses, grads = [], []
        for critic in self.critics:
            q, pullback = critic.vjp(x)
            resid = q[:, 0] - targets
            losses.append(float(np.mean(resid ** 2)))
            grads.append(pullback((2.0 / n) * resid[:, None])[0])
        return losses, grads

    def update_critic(self, batch: Batch, targets: np.ndarray) -> float:
        """One Adam step per critic; returns the summed pre-step MSE."""
        losses, grads = self.critic_loss_and_grads(batch, np.asarray(targets, dtype=np.float64))
        total = sum(losses)
        if not math.isfinite(total):
            raise FloatingPointError(f"non-finite critic loss {total}")
        for i, (critic, grad) in enumerate(zip(self.critics, grads)):
            critic.params, self.critic_opts[i] = adam_step(self.critic_opts[i], critic.params, grad)
        return total

    def actor_objective_and_grad(self, states) -> tuple[float, np.ndarray]:
        """mean_s Q1(s, mu(s)) and its gradient w.r.t. actor parameters."""
        states = np.atleast_2d(states)
        n = states.shape[0]
        mu, actor_pullback = self.actor.vjp(states)
        x = np.concatenate([states, self.scale_action(mu)], axis=1)
        q, critic_pullback = self.critics[0].vjp(x)
        objective = float(np.mean(q))
        _, dq_dx = critic_pullback(np.full((n, 1), 1.0 / n), param_grad=False)
        grad, _ = actor_pullback(dq_dx[:, self.spec.state_dim:] * self._scale)
        return objective, grad

    def update_actor(self, batch: Batch) -> float:
        objective, grad = self.actor_objective_and_grad(batch.states)
        self.actor.params, self.actor_opt = adam_step(self.actor_opt, self.actor.params, -grad)
        self.actor_updates += 1
        return objective

    def soft_update(self, tau: float | None = None) -> None:
        tau = self.config.tau if tau is None else tau
        pairs = [(self.target_actor, self.actor)] + list(zip(self.target_critics, self.critics))
        for target, online in pairs:
            target.params = (1.0 - tau) * target.params + tau * online.params

    def train_step(self, batch: Batch) -> float:
        """Critic update, then delayed actor and target updates."""
        loss = self.update_critic(batch, self.compute_target(batch))
        self.update_counter += 1
        if self.update_counter % self.config.policy_delay == 0:
            self.update_actor(batch)
            self.soft_update()
        return loss


# free-function aliases matching the operation names used elsewhere
def select_action(learner: Learner, state, noise=None) -> np.ndarray:
    return learner.select_action(state, noise)


def compute_target_ddpg(learner: Learner, batch: Batch, gamma: float) -> np.ndarray:
    return learner.compute_target_ddpg(batch, gamma)


def compute_target_td3(learner: Learner, batch: Batch, config: AgentConfig) -> np.ndarray:
    return learner.compute_target_td3(batch, config)


def update_critic(learner: Learner, batch: Batch, targets) -> float:
    return learner.update_critic(batch, targets)


def update_actor(learner: Learner, batch: Batch) -> float:
    return learner.update_actor(batch)


def soft_update(learner: Learner, tau: float) -> None:
    learner.soft_update(tau)


LOG_COLUMNS = ("step", "eval_return_mean", "eval_return_std", "critic_loss",
               "q_std_diagnostic", "q_change_diagnostic")


@dataclass
class HookContext:
    step: int
    learner: Learner
    buffer: ReplayBuffer
    critic_before: Mlp | None


Hook = Callable[[HookContext], "dict | None"]


@dataclass
class RunLog:
    rows: list[dict] = field(default_factory=list)
    env_steps: int = 0
    updates: int = 0
    actor_updates: int = 0
    episodes: int = 0
    noise_trace: list[float] = field(default_factory=list)
    events: list[tuple[str, int]] = field(default_factory=list)
    replay_counts: dict[int, int] = field(default_factory=dict)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for row in self.rows:
                w.writerow([row["step"]] + [format_float(row.get(c, math.nan)) for c in LOG_COLUMNS[1:]])


def format_float(x: float) -> str:
    return "%.17g" % x


def read_run_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


class _Run:
    """Shared state of one training run: environment cursor, buffer, streams."""

    def __init__(self, learner: Learner, env: Environment, config: AgentConfig, schedule: Schedule,
                 hooks: Sequence[Hook], seed: int, record_events: bool):
        self.learner = learner
        self.env = env
        self.config = config
        self.schedule = schedule.resolve(config.batch_size)
        self.hooks = list(hooks)
        self.record_events = record_events
        spec = env.spec
        self.env_seeds = rng_stream(seed, "env")
        self.explore_rng = rng_stream(seed, "explore")
        self.noise = make_exploration(config, spec.action_dim, self.explore_rng)
        learner.smoothing_rng = rng_stream(seed, "smoothing")
        self.buffer = ReplayBuffer(self.schedule.replay_capacity, spec.state_dim, spec.action_dim,
                                   rng_stream(seed, "replay"))
        self.log = RunLog()
        self.losses: list[float] = []
        self.state = self._reset_env()

    def _reset_env(self) -> np.ndarray:
        self.noise.reset()
        return self.env.reset(int(self.env_seeds.integers(2 ** 31)))

    def env_step(self) -> None:
        t = self.log.env_steps + 1
        spec = self.env.spec
        if t <= self.schedule.warmup_steps:
            action = self.explore_rng.uniform(spec.action_low, spec.action_high)
        else:
            action = self.learner.select_action(self.state, self.noise)
            if isinstance(self.noise, OuNoise):
                self.log.noise_trace.append(float(self.noise.current[0]))
        res = self.env.step(action)
        self.buffer.add(self.state, action, res.reward, res.next_state, res.done)
        self.log.env_steps = t
        if self.record_events:
            self.log.events.append(("env", t))
        if res.done or res.truncated:
            self.log.episodes += 1
            self.state = self._reset_env()
        else:
            self.state = res.next_state

    def update_for(self, k: int) -> None:
        """Learning work attributed to environment step ``k``: at most one update, then hooks."""
        sched = self.schedule
        critic_before = None
        if k > sched.warmup_steps:
            if k % sched.eval_interval == 0:
                critic_before = self.learner.critics[0].copy()
            batch = self.buffer.sample(self.config.batch_size)
            self.losses.append(self.learner.train_step(batch))
            self.buffer.check_conservation(self.config.batch_size)
            self.log.updates += 1
            if self.record_events:
                self.log.events.append(("update", k))
        if k % sched.eval_interval == 0:
            row = {"step": k, "critic_loss": float(np.mean(self.losses)) if self.losses else math.nan}
            self.losses = []
            ctx = HookContext(k, self.learner, self.buffer, critic_before)
            for hook in self.hooks:
                row.update(hook(ctx) or {})
            self.log.rows.append(row)

    def finish(self) -> RunLog:
        self.log.actor_updates = self.learner.actor_updates
        self.log.replay_counts = self.buffer.replay_count_snapshot()
        return self.log


def train_streaming(learner: Learner, env: Environment, config: AgentConfig, schedule: Schedule,
                    hooks: Sequence[Hook] = (), seed: int = 0, record_events: bool = False) -> RunLog:
    """Interleave one environment step and (after warmup) one update per time step."""
    run = _Run(learner, env, config, schedule, hooks, seed, record_events)
    for t in range(1, run.schedule.total_steps + 1):
        run.env_step()
        run.update_for(t)
    return run.finish()


def train_regular(learner: Learner, env: Environment, config: AgentConfig, schedule: Schedule,
                  hooks: Sequence[Hook] = (), seed: int = 0, record_events: bool = False) -> RunLog:
    """Alternate F frozen-policy environment steps with F update iterations."""
    run = _Run(learner, env, config, schedule, hooks, seed, record_events)
    total, block = run.schedule.total_steps, run.schedule.block_size
    start = 0
    while start < total:
        stop = min(start + block, total)
        for _ in range(start, stop):
            run.env_step()
        for k in range(start + 1, stop + 1):
            run.update_for(k)
        start = stop
    return run.finish()


def train(learner: Learner, env: Environment, config: AgentConfig, schedule: Schedule,
          scheduler: str, hooks: Sequence[Hook] = (), seed: int = 0) -> RunLog:
    if scheduler == "streaming":
        return train_streaming(learner, env, config, schedule, hooks, seed)
    if scheduler == "regular":
        return train_regular(learner, env, config, schedule, hooks, seed)
    raise ValueError(f"unknown scheduler {scheduler!r}")

"""Deterministic policy gradient learners with streaming and regularly-updated schedules."""

from .agents import AgentConfig, Learner, Schedule, ddpg_config, td3_config, train_regular, train_streaming
from .envs import LqrEnv, Pendulum, PointMass, make_env
from .replay import ReplayBuffer
from .tensor import AdamState, Mlp, adam_step

__all__ = [
    "AdamState", "AgentConfig", "Learner", "LqrEnv", "Mlp", "Pendulum", "PointMass", "ReplayBuffer",
    "Schedule", "adam_step", "ddpg_config", "make_env", "td3_config", "train_regular", "train_streaming",
]

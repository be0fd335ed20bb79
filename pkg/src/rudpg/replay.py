"""Ring-buffer experience replay with per-slot replay counters."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class InsufficientDataError(RuntimeError):
    pass


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    insert_step: int = -1


@dataclass(frozen=True)
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity store; mini-batches are drawn uniformly without replacement.

    ``replay_counts[i]`` counts how many mini-batches slot ``i`` has appeared
    in since its current transition was written.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int,
                 rng: np.random.Generator | int | None = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.insert_steps = np.full(capacity, -1, dtype=np.int64)
        self.replay_counts = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.write_cursor = 0
        self.num_inserts = 0
        self.num_sample_calls = 0
        self.total_sampled = 0
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward: float, next_state, done: bool) -> int:
        i = self.write_cursor
        if self.size == self.capacity:
            self.total_sampled -= int(self.replay_counts[i])
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        self.insert_steps[i] = self.num_inserts
        self.replay_counts[i] = 0
        self.num_inserts += 1
        self.write_cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def insert(self, t: Transition) -> int:
        return self.add(t.state, t.action, t.reward, t.next_state, t.done)

    def sample(self, n: int) -> Batch:
        """Draw ``n`` distinct occupied slots and bump their replay counters."""
        if self.size < n:
            raise InsufficientDataError(f"insufficient data: buffer holds {self.size}, batch needs {n}")
        idx = self.rng.choice(self.size, size=n, replace=False)
        self.replay_counts[idx] += 1
        self.num_sample_calls += 1
        self.total_sampled += n
        return self._gather(idx)

    def peek(self, n: int, rng: np.random.Generator) -> Batch:
        """Like :meth:`sample` but with a caller-owned RNG and no counter updates."""
        if self.size < n:
            raise InsufficientDataError(f"insufficient data: buffer holds {self.size}, probe needs {n}")
        return self._gather(rng.choice(self.size, size=n, replace=False))

    def _gather(self, idx: np.ndarray) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx], idx)

    def transition(self, slot: int) -> Transition:
        return Transition(self.states[slot].copy(), self.actions[slot].copy(), float(self.rewards[slot]),
                          self.next_states[slot].copy(), bool(self.dones[slot]),
                          int(self.insert_steps[slot]))

    def check_conservation(self, batch_size: int) -> None:
        """Raise unless live counters sum to the number of slot draws not yet evicted."""
        live = int(self.replay_counts[:self.size].sum())
        if live != self.total_sampled:
            raise AssertionError(f"replay counters sum to {live}, expected {self.total_sampled}")
        if self.num_inserts <= self.capacity and live != batch_size * self.num_sample_calls:
            raise AssertionError(
                f"replay counters sum to {live}, expected {batch_size} x {self.num_sample_calls}"
            )

    def replay_count_snapshot(self) -> dict[int, int]:
        """Live counters keyed by insert step (0-based insertion index)."""
        return {int(self.insert_steps[i]): int(self.replay_counts[i])
                for i in np.argsort(self.insert_steps[:self.size], kind="stable")}

    def write_snapshot_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["insert_step", "replay_count"])
            for step, count in self.replay_count_snapshot().items():
                w.writerow([step, count])


def replay_count_snapshot(buf: ReplayBuffer) -> dict[int, int]:
    return buf.replay_count_snapshot()


def read_snapshot_csv(path: str | Path) -> dict[int, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {int(row["insert_step"]): int(row["replay_count"]) for row in csv.DictReader(fh)}

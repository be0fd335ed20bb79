"""Replay-count expectations, Monte Carlo checks of them, and critic diagnostics.

Replay counts follow the index process of a buffer that never evicts: at
every sampling event a mini-batch of ``N`` distinct slots is drawn uniformly
from the slots filled so far.  Insert steps are 1-based here, matching the
time index ``t`` of the training loop.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .agents import Learner, format_float
from .replay import InsufficientDataError, ReplayBuffer
from .tensor import Mlp

CHUNK_TRIALS = 1000


# ---------------------------------------------------------------------------
# exact expectations

def exact_expected_replay_count(t: int, T: int, N: int) -> float:
    """E[M_t] under streaming sampling: sum_{k=max(t,N)}^{T} N/k."""
    if N < 1 or t < 1:
        raise ValueError("need t >= 1 and N >= 1")
    if t > T:
        raise ValueError(f"t={t} exceeds T={T}")
    lo = max(t, N)
    if lo > T:
        return 0.0
    return N * math.fsum(1.0 / np.arange(lo, T + 1, dtype=np.float64))


def replay_count_bounds(T: int, N: int, check: bool = True) -> tuple[float, float]:
    """Closed-form (max, min) of E[M_t]: (N ln((T+1)/N), N/T).

    With ``check`` and T/N >= 100 the harmonic-sum maximum is required to
    agree with the logarithmic form to 1%.
    """
    if not 1 <= N <= T:
        raise ValueError("need 1 <= N <= T")
    hi, lo = N * math.log((T + 1) / N), N / T
    if check and T / N >= 100:
        exact = exact_expected_replay_count(N, T, N)
        if abs(exact - hi) / exact >= 0.01:
            raise AssertionError(f"harmonic max {exact} and log form {hi} differ by >= 1%")
    return hi, lo


def block_boundaries(T: int, F: int) -> list[tuple[int, int]]:
    """(first, last) insert step of each block; the final block may be short."""
    return [(s + 1, min(s + F, T)) for s in range(0, T, F)]


def expected_replay_counts(T: int, N: int, F: int = 1) -> np.ndarray:
    """E[M_t] for t = 1..T under blocks of F inserts followed by F samples.

    A sampling event is skipped while fewer than N slots are filled.  F = 1
    is the streaming schedule.
    """
    if not 1 <= F <= T:
        raise ValueError("need 1 <= F <= T")
    firsts = np.arange(1, T + 1, F)
    lasts = np.minimum(firsts + F - 1, T)
    # each block contributes (events) * N / (buffer size) to every item inserted up to its end
    contrib = np.where(lasts >= N, (lasts - firsts + 1) * N / lasts, 0.0)
    per_block = np.cumsum(contrib[::-1])[::-1]
    return np.repeat(per_block, lasts - firsts + 1)


def log_binom_ratio(a: int, b: int, N: int) -> float:
    """log(C(a, N) / C(b, N)) as sum_j log((a - j) / (b - j)); -inf when a < N."""
    if b < N:
        raise ValueError("C(b, N) is zero")
    if a < N:
        return -math.inf
    j = np.arange(N, dtype=np.float64)
    return float(np.sum(np.log(a - j) - np.log(b - j)))


def block_latest_hits_exact(t: int, F: int, N: int) -> float:
    """Expected mini-batches (of F, all drawn from t slots) containing any of the newest F."""
    return F * -math.expm1(log_binom_ratio(t - F, t, N))


def _streaming_hit_probs(t: int, F: int, N: int) -> np.ndarray:
    """P(the i-th of the F streaming events ending at t touches the newest F), i = 1..F.

    At the i-th event the buffer holds t - F + i slots, i of which are among
    the newest F.
    """
    _check_window(t, F, N)
    return np.array([-math.expm1(log_binom_ratio(t - F, t - F + i, N)) for i in range(1, F + 1)])


def streaming_latest_hits_exact(t: int, F: int, N: int) -> float:
    """Same count for the streaming schedule over the F sampling events ending at t."""
    return math.fsum(_streaming_hit_probs(t, F, N))


def latest_hits_exact_variance(t: int, F: int, N: int) -> tuple[float, float]:
    """Per-trial variance of the (streaming, block) counts; events are independent Bernoullis."""
    p = _streaming_hit_probs(t, F, N)
    q = -math.expm1(log_binom_ratio(t - F, t, N))
    return math.fsum(p * (1 - p)), F * q * (1 - q)


def streaming_latest_hits_literal(t: int, F: int, N: int) -> float:
    """sum_{i=1}^{F} (1 - C(t-F+i, N)/C(t, N)), an uncorrected variant.

    Kept for comparison only; simulation shows it undercounts the streaming
    schedule (its last term is always zero).
    """
    _check_window(t, F, N)
    return math.fsum(-math.expm1(log_binom_ratio(t - F + i, t, N)) for i in range(1, F + 1))


def _check_window(t: int, F: int, N: int) -> None:
    if F < 1 or t - F + 1 < N:
        raise ValueError(f"window undefined: need t >= F + N - 1 (t={t}, F={F}, N={N})")


# ---------------------------------------------------------------------------
# simulation

def sample_without_replacement(rng: np.random.Generator, population: int, n: int, rows: int) -> np.ndarray:
    """``rows`` independent uniform n-subsets of range(population), via Floyd's algorithm."""
    out = np.empty((rows, n), dtype=np.int64)
    for col, j in enumerate(range(population - n, population)):
        r = rng.integers(0, j + 1, size=rows)
        if col:
            taken = (out[:, :col] == r[:, None]).any(axis=1)
            r = np.where(taken, j, r)
        out[:, col] = r
    return out


def _chunk_sizes(trials: int) -> list[int]:
    full, rest = divmod(trials, CHUNK_TRIALS)
    return [CHUNK_TRIALS] * full + ([rest] if rest else [])


def _run_chunks(fn: Callable, args: Sequence, trials: int, seed: int, workers: int) -> list:
    jobs = [(args, size, (int(seed), i)) for i, size in enumerate(_chunk_sizes(trials))]
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _replay_count_chunk(args, rows, seed_key):
    T, N, F = args
    rng = np.random.default_rng(list(seed_key))
    counts = np.zeros((rows, T), dtype=np.int64)
    row_idx = np.arange(rows)[:, None]
    events = 0
    for first, last in block_boundaries(T, F):
        if last < N:
            continue
        for _ in range(last - first + 1):
            counts[row_idx, sample_without_replacement(rng, last, N, rows)] += 1
            events += 1
    totals = counts.sum(axis=1)
    if not np.all(totals == N * events):
        raise AssertionError("replay counter conservation violated in simulation")
    return counts.sum(axis=0).astype(np.float64), (counts.astype(np.float64) ** 2).sum(axis=0), events


@dataclass
class ReplayCountReport:
    T: int
    N: int
    F: int
    exact_expectations: dict[int, float]
    simulated_means: dict[int, float] = field(default_factory=dict)
    simulated_stderr: dict[int, float] = field(default_factory=dict)
    num_trials: int = 0
    sampling_events: int = 0

    def z_scores(self) -> dict[int, float]:
        return {t: _z(self.simulated_means[t] - self.exact_expectations[t], self.simulated_stderr[t])
                for t in self.simulated_means}

    def write_csv(self, path: str | Path) -> None:
        z = self.z_scores()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "exact", "simulated_mean", "simulated_stderr", "z"])
            for t, exact in self.exact_expectations.items():
                sim = [self.simulated_means.get(t, math.nan), self.simulated_stderr.get(t, math.nan),
                       z.get(t, math.nan)]
                w.writerow([t, format_float(exact)] + [format_float(v) for v in sim])

    def summary(self) -> str:
        lines = [f"replay counts: T={self.T} N={self.N} F={self.F} trials={self.num_trials}"]
        if self.num_trials:
            z = self.z_scores()
            worst = max(z, key=lambda t: abs(z[t]))
            lines.append(f"  max |z| = {abs(z[worst]):.3f} at t={worst}")
        return "\n".join(lines)


def _z(diff: float, stderr: float) -> float:
    if stderr > 0:
        return diff / stderr
    return 0.0 if diff == 0 else math.copysign(math.inf, diff)


def simulate_replay_counts(T: int, N: int, F: int, trials: int, seed: int = 0,
                           grid: Sequence[int] | None = None, workers: int = 1) -> ReplayCountReport:
    """Monte Carlo replay counts per insert step for blocks of size F (F=1: streaming).

    Trials run in fixed chunks of ``CHUNK_TRIALS``, each seeded by
    ``(seed, chunk index)``, so the result does not depend on ``workers``.
    """
    if not 1 <= N <= T or not 1 <= F <= T or trials < 2:
        raise ValueError("need 1 <= N <= T, 1 <= F <= T, trials >= 2")
    parts = _run_chunks(_replay_count_chunk, (T, N, F), trials, seed, workers)
    total = np.sum([p[0] for p in parts], axis=0)
    total_sq = np.sum([p[1] for p in parts], axis=0)
    mean = total / trials
    var = np.maximum(total_sq - trials * mean ** 2, 0.0) / (trials - 1)
    stderr = np.sqrt(var / trials)
    exact = expected_replay_counts(T, N, F)
    keys = range(1, T + 1) if grid is None else grid
    return ReplayCountReport(
        T, N, F,
        exact_expectations={t: float(exact[t - 1]) for t in keys},
        simulated_means={t: float(mean[t - 1]) for t in keys},
        simulated_stderr={t: float(stderr[t - 1]) for t in keys},
        num_trials=trials,
        sampling_events=parts[0][2],
    )


def _latest_hits_chunk(args, rows, seed_key):
    t, F, N = args
    rng = np.random.default_rng(list(seed_key))
    newest = t - F  # 0-based slots >= newest are the latest F
    streaming = np.zeros(rows)
    block = np.zeros(rows)
    for i in range(1, F + 1):
        batch = sample_without_replacement(rng, t - F + i, N, rows)
        streaming += (batch >= newest).any(axis=1)
    for _ in range(F):
        batch = sample_without_replacement(rng, t, N, rows)
        block += (batch >= newest).any(axis=1)
    return streaming.sum(), (streaming ** 2).sum(), block.sum(), (block ** 2).sum()


@dataclass
class LatestHitsReport:
    """Mini-batches, among the F sampling events ending at t, that touch the newest F items."""

    t: int
    F: int
    N: int
    streaming_exact: float
    block_exact: float
    streaming_literal: float
    streaming_mean: float = math.nan
    streaming_stderr: float = math.nan
    block_mean: float = math.nan
    block_stderr: float = math.nan
    num_trials: int = 0

    def model_stderr(self) -> tuple[float, float]:
        """Standard errors of the simulated means implied by the exact distribution."""
        var_s, var_b = latest_hits_exact_variance(self.t, self.F, self.N)
        return math.sqrt(var_s / self.num_trials), math.sqrt(var_b / self.num_trials)

    # z-scores use the exact-model standard error: when a hit is near certain
    # every simulated trial can agree and the sample standard error is zero
    @property
    def streaming_z(self) -> float:
        return _z(self.streaming_mean - self.streaming_exact, self.model_stderr()[0])

    @property
    def block_z(self) -> float:
        return _z(self.block_mean - self.block_exact, self.model_stderr()[1])


def latest_hits_exact(t: int, F: int, N: int) -> LatestHitsReport:
    return LatestHitsReport(t, F, N, streaming_latest_hits_exact(t, F, N),
                            block_latest_hits_exact(t, F, N), streaming_latest_hits_literal(t, F, N))


def simulate_latest_hits(t: int, F: int, N: int, trials: int, seed: int = 0,
                         workers: int = 1) -> LatestHitsReport:
    report = latest_hits_exact(t, F, N)
    parts = _run_chunks(_latest_hits_chunk, (t, F, N), trials, seed, workers)
    s, s2, b, b2 = np.sum(parts, axis=0)
    for name, total, total_sq in (("streaming", s, s2), ("block", b, b2)):
        mean = total / trials
        var = max(total_sq - trials * mean ** 2, 0.0) / (trials - 1)
        setattr(report, f"{name}_mean", float(mean))
        setattr(report, f"{name}_stderr", math.sqrt(var / trials))
    report.num_trials = trials
    return report


# ---------------------------------------------------------------------------
# clipped double-Q bias

@dataclass
class BiasEstimate:
    sigma: float
    v_star: float
    mc_mean_of_min: float
    mc_stderr: float
    analytic_prediction: float
    samples: int
    correlated: bool = False

    @property
    def expected_mean(self) -> float:
        """Mean the estimate should match: v_star when the two draws coincide."""
        return self.v_star if self.correlated else self.analytic_prediction

    @property
    def z_score(self) -> float:
        return _z(self.mc_mean_of_min - self.expected_mean, self.mc_stderr)

    def csv_row(self) -> list[str]:
        return [format_float(v) for v in
                (self.sigma, self.v_star, self.mc_mean_of_min, self.analytic_prediction, self.z_score)]


BIAS_COLUMNS = ("sigma", "v_star", "mc_mean", "analytic", "z_score")


def _bias_chunk(args, rows, seed_key):
    v_star, sigma, correlated = args
    rng = np.random.default_rng(list(seed_key))
    q1 = v_star + sigma * rng.standard_normal(rows)
    q2 = q1 if correlated else v_star + sigma * rng.standard_normal(rows)
    m = np.minimum(q1, q2)
    return m.sum(), (m ** 2).sum()


def clipped_double_q_bias_mc(v_star: float, sigma: float, samples: int = 1_000_000, seed: int = 0,
                             correlated: bool = False, workers: int = 1) -> BiasEstimate:
    """Mean of min(Q1, Q2) for Q1, Q2 ~ Normal(v_star, sigma^2).

    ``sigma`` is the standard deviation.  With ``correlated`` the second
    draw is a copy of the first.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if samples < 10_000:
        raise ValueError("samples must be >= 1e4")
    parts = _run_chunks(_bias_chunk, (float(v_star), float(sigma), bool(correlated)), samples,
                        seed, workers)
    total, total_sq = np.sum(parts, axis=0)
    mean = total / samples
    var = max(total_sq - samples * mean ** 2, 0.0) / (samples - 1)
    return BiasEstimate(sigma, v_star, float(mean), math.sqrt(var / samples),
                        v_star - sigma / math.sqrt(math.pi), samples, correlated)


# ---------------------------------------------------------------------------
# critic diagnostics

def q_std_diagnostic(learner: Learner, buffer: ReplayBuffer, probe_size: int = 1000,
                     rng: np.random.Generator | None = None) -> float:
    """Standard deviation of Q1(s, mu(s)) over states probed from the buffer.

    Probing does not touch the buffer's sampler or replay counters.
    """
    if buffer.size < probe_size:
        raise InsufficientDataError(f"buffer holds {buffer.size} states, probe needs {probe_size}")
    rng = np.random.default_rng(0) if rng is None else rng
    states = buffer.peek(probe_size, rng).states
    return float(np.std(learner.q_value(learner.critics[0], states, learner.policy(states))))


def _first_critic(x) -> Mlp:
    return x.critics[0] if isinstance(x, Learner) else x


def q_change_diagnostic(before, after, states, actions) -> float:
    """Mean |Q1_after(s, a) - Q1_before(s, a)| over a probe of state-action pairs."""
    q_before, q_after = _first_critic(before), _first_critic(after)
    if not q_before.same_architecture(q_after):
        raise ValueError("snapshots have different critic architectures")
    x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
    return float(np.mean(np.abs(q_after.forward(x) - q_before.forward(x))))

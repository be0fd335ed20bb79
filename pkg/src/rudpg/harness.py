"""Experiment orchestration: config files, evaluation, seed and F sweeps, CSV output."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agents import (AgentConfig, HookContext, Learner, RunLog, Schedule, ddpg_config, format_float,
                     read_run_csv, rng_stream, td3_config, train)
from .analysis import q_change_diagnostic, q_std_diagnostic
from .envs import ENV_IDS, make_env

log = logging.getLogger(__name__)

ALGORITHMS = ("ddpg", "td3")
SCHEDULERS = ("streaming", "regular")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class ExperimentConfig:
    env_id: str = "pendulum"
    algorithm: str = "td3"
    scheduler: str = "regular"
    F: int = 250
    T: int = 30_000
    seeds: list[int] = field(default_factory=lambda: [0])
    agent: AgentConfig = field(default_factory=AgentConfig)
    eval_episodes: int = 10
    eval_interval: int = 1000
    warmup_steps: int | None = None
    probe_size: int = 1000
    output_dir: str = "runs"
    jobs: int = 1

    def validate(self) -> None:
        if self.env_id not in ENV_IDS:
            raise ConfigError(f"env_id: unknown environment {self.env_id!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: expected one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"scheduler: expected one of {SCHEDULERS}, got {self.scheduler!r}")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes: must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs: must be >= 1")
        try:
            self.agent.validate()
            self.schedule().resolve(self.agent.batch_size)
        except ValueError as exc:
            raise ConfigError(f"agent/schedule: {exc}") from exc

    def schedule(self) -> Schedule:
        block = self.F if self.scheduler == "regular" else 1
        return Schedule(self.T, block, self.warmup_steps, self.eval_interval)

    def label(self) -> str:
        if self.scheduler == "streaming":
            return f"{self.algorithm}-streaming"
        return f"{self.algorithm}-regular-F{self.F}"


_TOP_KEYS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig) if f.name != "agent"}
_AGENT_KEYS = {f.name for f in dataclasses.fields(AgentConfig)}


def _convert(key: str, raw: str, example):
    try:
        if isinstance(example, bool):
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if isinstance(example, int):
            return int(raw)
        if isinstance(example, float):
            return float(raw)
        if isinstance(example, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse value {raw!r}") from exc


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``agent.<field>`` keys set agent hyperparameters.

    ``algorithm`` picks the agent defaults (td3 or ddpg) before overrides
    apply.  Unknown keys are errors.
    """
    top: dict[str, str] = {}
    agent: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("agent."):
            name = key[len("agent."):]
            if name not in _AGENT_KEYS:
                raise ConfigError(f"{key}: unknown key")
            agent[name] = value
        elif key in _TOP_KEYS:
            top[key] = value
        else:
            raise ConfigError(f"{key}: unknown key")

    defaults = ExperimentConfig()
    kwargs: dict = {}
    for key, raw in top.items():
        if key == "seeds":
            try:
                kwargs[key] = [int(v) for v in raw.replace(",", " ").split()]
            except ValueError as exc:
                raise ConfigError(f"seeds: cannot parse {raw!r}") from exc
        elif key == "warmup_steps":
            kwargs[key] = None if raw.lower() == "auto" else _convert(key, raw, 0)
        else:
            kwargs[key] = _convert(key, raw, getattr(defaults, key))
    algorithm = kwargs.get("algorithm", defaults.algorithm)
    base = ddpg_config() if algorithm == "ddpg" else td3_config()
    overrides = {name: _convert(f"agent.{name}", raw, getattr(base, name)) for name, raw in agent.items()}
    try:
        kwargs["agent"] = dataclasses.replace(base, **overrides)
    except ValueError as exc:
        raise ConfigError(f"agent: {exc}") from exc
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in _TOP_KEYS:
        value = getattr(cfg, name)
        if name == "seeds":
            value = ", ".join(str(s) for s in value)
        elif value is None:
            value = "auto"
        lines.append(f"{name} = {value}")
    for f in dataclasses.fields(AgentConfig):
        value = getattr(cfg.agent, f.name)
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"agent.{f.name} = {value}")
    return "\n".join(lines) + "\n"


@dataclass
class EvalRecord:
    step: int
    returns: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.returns))

    @property
    def std(self) -> float:
        return float(np.std(self.returns))


class Evaluator:
    """Noiseless episodes on a fresh environment; fixed start seeds per run."""

    def __init__(self, env_id: str, episodes: int, seed: int):
        self.env_id = env_id
        self.seeds = [int(s) for s in rng_stream(seed, "eval").integers(2 ** 31, size=episodes)]
        self.records: list[EvalRecord] = []

    def __call__(self, ctx: HookContext) -> dict:
        env = make_env(self.env_id)
        returns = []
        for s in self.seeds:
            state = env.reset(s)
            total = 0.0
            while True:
                res = env.step(ctx.learner.select_action(state))
                total += res.reward
                if res.done or res.truncated:
                    break
                state = res.next_state
            returns.append(total)
        rec = EvalRecord(ctx.step, returns)
        self.records.append(rec)
        return {"eval_return_mean": rec.mean, "eval_return_std": rec.std}


class Diagnostics:
    """Q1 spread over probed states and Q1 change across the latest update."""

    def __init__(self, seed: int, probe_size: int = 1000):
        self.rng = rng_stream(seed, "probe")
        self.probe_size = probe_size

    def __call__(self, ctx: HookContext) -> dict:
        if ctx.buffer.size < self.probe_size:
            return {}
        out = {"q_std_diagnostic": q_std_diagnostic(ctx.learner, ctx.buffer, self.probe_size, self.rng)}
        if ctx.critic_before is not None:
            probe = ctx.buffer.peek(self.probe_size, self.rng)
            out["q_change_diagnostic"] = q_change_diagnostic(ctx.critic_before, ctx.learner,
                                                             probe.states, probe.actions)
        return out


@dataclass
class SeedResult:
    seed: int
    ok: bool
    rows: list[dict]
    evals: list[EvalRecord]
    message: str = ""
    noise_trace: list[float] = field(default_factory=list)
    replay_counts: dict[int, int] = field(default_factory=dict)


def run_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    env = make_env(cfg.env_id)
    learner = Learner(env.spec, cfg.agent, rng_stream(seed, "init"))
    evaluator = Evaluator(cfg.env_id, cfg.eval_episodes, seed)
    hooks = [evaluator, Diagnostics(seed, cfg.probe_size)]
    try:
        run: RunLog = train(learner, env, cfg.agent, cfg.schedule(), cfg.scheduler, hooks, seed)
    except (FloatingPointError, ValueError, AssertionError) as exc:
        log.error("seed %d failed: %s", seed, exc)
        return SeedResult(seed, False, [], evaluator.records, str(exc))
    return SeedResult(seed, True, run.rows, evaluator.records, noise_trace=run.noise_trace,
                      replay_counts=run.replay_counts)


def write_eval_returns(path: Path, evals: Sequence[EvalRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "episode", "return"])
        for rec in evals:
            for i, r in enumerate(rec.returns):
                w.writerow([rec.step, i, format_float(r)])


AGGREGATE_COLUMNS = ("step", "mean", "std", "n_seeds", "n_failed")


def aggregate_rows(per_seed: Sequence[list[dict]], n_failed: int = 0,
                   column: str = "eval_return_mean") -> list[dict]:
    """Across-seed mean and population std of ``column`` at each logged step."""
    if not per_seed:
        return []
    out = []
    for i, row in enumerate(per_seed[0]):
        values = np.array([rows[i][column] for rows in per_seed], dtype=np.float64)
        out.append({"step": row["step"], "mean": float(np.mean(values)), "std": float(np.std(values)),
                    "n_seeds": len(per_seed), "n_failed": n_failed})
    return out


def write_aggregate(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for r in rows:
            w.writerow([r["step"], format_float(r["mean"]), format_float(r["std"]), r["n_seeds"], r["n_failed"]])


def read_aggregate(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{"step": int(r["step"]), "mean": float(r["mean"]), "std": float(r["std"]),
                 "n_seeds": int(r["n_seeds"]), "n_failed": int(r["n_failed"])} for r in csv.DictReader(fh)]


def _run_seed_job(args):
    return run_seed(*args)


def run_seeds(cfg: ExperimentConfig) -> list[SeedResult]:
    jobs = [(cfg, s) for s in cfg.seeds]
    if cfg.jobs <= 1 or len(jobs) == 1:
        return [run_seed(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(jobs))) as pool:
        return list(pool.map(_run_seed_job, jobs))


@dataclass
class TrainOutcome:
    results: list[SeedResult]
    aggregate: list[dict]
    out_dir: Path

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)


def cmd_train(cfg: ExperimentConfig | str | Path, out_dir: str | Path | None = None) -> TrainOutcome:
    """Run every seed, write ``seed_<s>.csv`` files plus ``aggregate.csv`` and ``runs.csv``."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_seeds(cfg)
    for r in results:
        if r.ok:
            RunLog(rows=r.rows).write_csv(out / f"seed_{r.seed}.csv")
            write_eval_returns(out / f"seed_{r.seed}_evals.csv", r.evals)
    good = [r.rows for r in results if r.ok]
    n_failed = sum(not r.ok for r in results)
    agg = aggregate_rows(good, n_failed)
    write_aggregate(out / "aggregate.csv", agg)
    with open(out / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "status", "message"])
        for r in results:
            w.writerow([r.seed, "ok" if r.ok else "failed", r.message])
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    return TrainOutcome(results, agg, out)


def recompute_aggregate(out_dir: str | Path, seeds: Iterable[int]) -> list[dict]:
    per_seed = [read_run_csv(Path(out_dir) / f"seed_{s}.csv") for s in seeds]
    return aggregate_rows(per_seed)


def dedupe_f_values(values: Sequence[int]) -> list[int]:
    seen: list[int] = []
    for v in values:
        if v in seen:
            warnings.warn(f"duplicate F value {v} ignored", stacklevel=2)
        else:
            seen.append(v)
    return seen


SWEEP_COLUMNS = ("F", "step", "mean", "std")


def cmd_sweep_f(cfg: ExperimentConfig | str | Path, f_values: Sequence[int],
                out_dir: str | Path | None = None) -> dict[int, TrainOutcome]:
    """Train once per F (F = 1 runs the streaming scheduler) and write ``sweep.csv``."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    values = dedupe_f_values(list(f_values))
    if not values:
        raise ConfigError("f_values: at least one F is required")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    outcomes = {}
    for F in values:
        sub = dataclasses.replace(cfg, F=F, scheduler="streaming" if F == 1 else "regular")
        sub.validate()
        outcomes[F] = cmd_train(sub, out / f"F_{F}")
    write_long_csv(out / "sweep.csv", "F", {F: o.aggregate for F, o in outcomes.items()})
    return outcomes


def write_long_csv(path: Path, key: str, groups: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([key, "step", "mean", "std"])
        for label, rows in groups.items():
            for r in rows:
                w.writerow([label, r["step"], format_float(r["mean"]), format_float(r["std"])])


def read_long_csv(path: str | Path, key: str = "F", key_type=int) -> dict:
    """Group a long-format curve CSV back into ``{key: [{step, mean, std}, ...]}``."""
    groups: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            groups.setdefault(key_type(r[key]), []).append(
                {"step": int(r["step"]), "mean": float(r["mean"]), "std": float(r["std"])})
    return groups


def lag1_autocorrelation(x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 3:
        return math.nan
    x = x - x.mean()
    denom = float(x @ x)
    return float(x[:-1] @ x[1:]) / denom if denom > 0 else math.nan


def cmd_ablate_ddpg(cfg: ExperimentConfig | str | Path, out_dir: str | Path | None = None) -> dict[str, TrainOutcome]:
    """Plain DDPG under both schedulers with shared seeds; writes ``ablation.csv``."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    agent = cfg.agent if cfg.algorithm == "ddpg" else ddpg_config(hidden_sizes=cfg.agent.hidden_sizes,
                                                                  gamma=cfg.agent.gamma)
    outcomes = {}
    for scheduler in SCHEDULERS:
        sub = dataclasses.replace(cfg, algorithm="ddpg", scheduler=scheduler, agent=agent)
        sub.validate()
        outcomes[f"ddpg-{scheduler}"] = cmd_train(sub, out / f"ddpg-{scheduler}")
    write_long_csv(out / "ablation.csv", "group", {k: o.aggregate for k, o in outcomes.items()})
    with open(out / "noise_autocorr.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "seed", "lag1_autocorr"])
        for group, o in outcomes.items():
            for r in o.results:
                rho = lag1_autocorrelation(r.noise_trace)
                log.info("%s seed %d: OU noise lag-1 autocorrelation %.4f", group, r.seed, rho)
                w.writerow([group, r.seed, format_float(rho)])
    return outcomes

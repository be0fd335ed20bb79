"""Command-line entry point: ``rudpg train|sweep-f|analyze|ablate-ddpg``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .agents import format_float
from .harness import ConfigError, cmd_ablate_ddpg, cmd_sweep_f, cmd_train, load_config

Z_LIMIT = 3.0


def _grid(T: int, N: int, points: int) -> list[int]:
    """``points`` insert steps spread log-uniformly over [N, T]."""
    raw = np.unique(np.round(np.geomspace(N, T, points)).astype(int))
    return [int(t) for t in raw]


def analyze_replay_counts(T: int, N: int, F: int = 1, trials: int = 0, seed: int = 0,
                          points: int = 20, out: Path | None = None, workers: int = 1,
                          stream=None) -> bool:
    """Print closed-form and exact replay-count figures; simulate when ``trials`` > 0.

    Returns False when any simulated mean is 3 or more standard errors from
    its exact value, or when block/streaming ordering fails.
    """
    stream = sys.stdout if stream is None else stream
    ok = True
    hi, lo = analysis.replay_count_bounds(T, N, check=False)
    exact_first = analysis.exact_expected_replay_count(N, T, N)
    exact_last = analysis.exact_expected_replay_count(T, T, N)
    print(f"T={T} N={N} F={F}", file=stream)
    print(f"closed-form max E[M_t] = N ln((T+1)/N) = {hi:.2f}", file=stream)
    print(f"closed-form min E[M_t] = N/T = {lo:.6g}", file=stream)
    print(f"exact E[M_{N}] (harmonic sum) = {exact_first:.4f}", file=stream)
    print(f"exact E[M_{T}] = {exact_last:.6g}", file=stream)
    print(f"relative gap, harmonic sum vs log form: {abs(exact_first - hi) / exact_first:.3%}", file=stream)
    grid = _grid(T, N, points)
    if F > 1 and T >= F + N - 1:
        r = analysis.latest_hits_exact(T, F, N)
        ordered = r.streaming_exact < r.block_exact
        ok &= ordered
        print(f"latest-F hits at t={T}: streaming {r.streaming_exact:.6f} < block {r.block_exact:.6f}: "
              f"{'PASS' if ordered else 'FAIL'}", file=stream)
    if trials > 0:
        report = analysis.simulate_replay_counts(T, N, F, trials, seed, grid=grid, workers=workers)
        z = report.z_scores()
        worst = max(abs(v) for v in z.values())
        passed = worst < Z_LIMIT
        ok &= passed
        print(f"simulation ({trials} trials): max |z| = {worst:.3f} over {len(z)} grid points: "
              f"{'PASS' if passed else 'FAIL'}", file=stream)
    else:
        exact = analysis.expected_replay_counts(T, N, F)
        report = analysis.ReplayCountReport(T, N, F, {t: float(exact[t - 1]) for t in grid})
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "replay_counts.csv")
        (out / "replay_counts.txt").write_text(report.summary() + "\n", encoding="utf-8")
    return bool(ok)


def analyze_bias(sigma: float, v_star: float, samples: int, seed: int = 0, correlated: bool = False,
                 out: Path | None = None, workers: int = 1, stream=None) -> bool:
    stream = sys.stdout if stream is None else stream
    est = analysis.clipped_double_q_bias_mc(v_star, sigma, samples, seed, correlated, workers)
    z = est.z_score
    passed = abs(z) < Z_LIMIT
    print(f"sigma={sigma} v_star={v_star} samples={samples} correlated={correlated}", file=stream)
    print(f"analytic v_star - sigma/sqrt(pi) = {est.analytic_prediction:.4f}", file=stream)
    print(f"monte carlo mean of min = {est.mc_mean_of_min:.4f} +/- {est.mc_stderr:.2g}, z = {z:.3f}: "
          f"{'PASS' if passed else 'FAIL'}", file=stream)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bias.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(analysis.BIAS_COLUMNS)
            w.writerow(est.csv_row())
    return passed


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rudpg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every seed of a config")
    t.add_argument("config", type=Path)
    t.add_argument("--out", type=Path, default=None)

    s = sub.add_parser("sweep-f", help="train once per block size F")
    s.add_argument("config", type=Path)
    s.add_argument("--values", type=int, nargs="+", required=True)
    s.add_argument("--out", type=Path, default=None)

    a = sub.add_parser("ablate-ddpg", help="plain DDPG, streaming vs regular")
    a.add_argument("config", type=Path)
    a.add_argument("--out", type=Path, default=None)

    an = sub.add_parser("analyze", help="replay-count and bias oracles")
    asub = an.add_subparsers(dest="analysis", required=True)
    rc = asub.add_parser("replay-counts")
    rc.add_argument("--T", type=int, required=True)
    rc.add_argument("--N", type=int, required=True)
    rc.add_argument("--F", type=int, default=1)
    rc.add_argument("--trials", type=int, default=0)
    rc.add_argument("--exact-only", action="store_true")
    rc.add_argument("--points", type=int, default=20)
    rc.add_argument("--seed", type=int, default=0)
    rc.add_argument("--workers", type=int, default=1)
    rc.add_argument("--out", type=Path, default=None)
    b = asub.add_parser("bias")
    b.add_argument("--sigma", type=float, required=True)
    b.add_argument("--v-star", type=float, default=0.0)
    b.add_argument("--samples", type=int, default=1_000_000)
    b.add_argument("--correlated", action="store_true")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", type=Path, default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            outcome = cmd_train(load_config(args.config), args.out)
            print(f"wrote {outcome.out_dir}")
            return 0 if outcome.ok else 1
        if args.command == "sweep-f":
            outcomes = cmd_sweep_f(load_config(args.config), args.values, args.out)
            return 0 if all(o.ok for o in outcomes.values()) else 1
        if args.command == "ablate-ddpg":
            outcomes = cmd_ablate_ddpg(load_config(args.config), args.out)
            return 0 if all(o.ok for o in outcomes.values()) else 1
        if args.analysis == "replay-counts":
            trials = 0 if args.exact_only else args.trials
            ok = analyze_replay_counts(args.T, args.N, args.F, trials, args.seed, args.points, args.out,
                                       args.workers)
        else:
            ok = analyze_bias(args.sigma, args.v_star, args.samples, args.seed, args.correlated, args.out,
                              args.workers)
        return 0 if ok else 1
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"rudpg: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

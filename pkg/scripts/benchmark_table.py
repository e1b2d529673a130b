#!/usr/bin/env python3
"""Monte Carlo benchmark over the eleven initial conditions.

Desk scale by default: 10 runs per condition with the plain and guided
filters, a couple of minutes on one core.  ``--full`` switches to the
complete comparison (100 runs per condition, all three filters), which
is an overnight-scale job on a laptop; results land in summary.csv and
meta.json, and the pooled table prints at the end.
"""

import argparse
import sys
import time
from pathlib import Path

from varnpf import cli
from varnpf.harness import BENCHMARK_ICS, ExperimentConfig, run_monte_carlo
from varnpf.io import build_mc_meta, write_meta, write_summary_csv


def parse_ics(text):
    if text == "all":
        return tuple(BENCHMARK_ICS)
    if text == "star":
        return (BENCHMARK_ICS[0],)
    idx = [int(tok) for tok in text.split(",") if tok.strip()]
    bad = [i for i in idx if not 0 <= i < len(BENCHMARK_ICS)]
    if bad:
        raise SystemExit(f"initial condition indices out of range: {bad}")
    return tuple(BENCHMARK_ICS[i] for i in idx)


def main():
    ap = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ap.add_argument("--runs", type=int, default=10, help="runs per condition")
    ap.add_argument(
        "--ics", default="all",
        help="'all', 'star', or comma-separated indices (default all)",
    )
    ap.add_argument(
        "--filters", default="pf,var_npf",
        help="comma-separated subset of pf,npf,var_npf",
    )
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("bench_out"))
    ap.add_argument(
        "--full", action="store_true",
        help="100 runs per condition, all filters, all conditions",
    )
    args = ap.parse_args()

    if args.full:
        args.runs, args.ics, args.filters = 100, "all", "pf,npf,var_npf"
    filters = tuple(
        tok.strip().replace("-", "_")
        for tok in args.filters.split(",") if tok.strip()
    )
    ics = parse_ics(args.ics)

    template = ExperimentConfig(seed=args.seed)
    tic = time.perf_counter()
    summary = run_monte_carlo(
        template,
        initial_conditions=ics,
        runs_per_ic=args.runs,
        filters=filters,
        jobs=args.jobs,
    )
    elapsed = time.perf_counter() - tic

    args.out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(summary.runs, args.out / "summary.csv")
    write_meta(build_mc_meta(summary, template), args.out / "meta.json")
    print(
        f"{len(summary.runs)} runs ({args.runs} per condition x "
        f"{len(ics)} conditions x {len(filters)} filters) in {elapsed:.0f}s"
    )
    return cli.main(["report", "--in", str(args.out)])


if __name__ == "__main__":
    sys.exit(main())

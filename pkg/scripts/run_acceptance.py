#!/usr/bin/env python3
"""Run every acceptance suite at its default settings and print one line per criterion.

    python scripts/run_acceptance.py [--out runs/acceptance] [--seed 0]

Exit status is 1 if any criterion has a failing check (criteria 2 and 5 do:
their growth clauses are unattainable for the prescribed fields).
"""

import argparse
import sys
import time
from pathlib import Path

from morreykit.config import ExperimentConfig
from morreykit.experiments import REGISTRY, run_experiment


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/acceptance")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    by_criterion = {c: name for name, s in REGISTRY.items() for c in s.criteria}
    status = 0
    for crit in sorted(by_criterion, key=int):
        name = by_criterion[crit]
        t0 = time.perf_counter()
        res = run_experiment(ExperimentConfig(name, seed=args.seed, out=str(Path(args.out) / name)))
        failing = [c for c in res.checks if not c.passed]
        shown = failing or res.checks
        worst = "; ".join(f"{c.description}: {c.value:.4g} ({c.bound})" for c in shown[:2])
        print(f"{'FAIL' if failing else 'PASS'} criterion {crit} [{name}, {time.perf_counter() - t0:.0f}s] {worst}", flush=True)
        status |= bool(failing)
    return status


if __name__ == "__main__":
    sys.exit(main())

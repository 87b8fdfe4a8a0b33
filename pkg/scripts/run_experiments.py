"""Run every experiment at desk scale and write reports under ``results/``.

Usage::

    python scripts/run_experiments.py [--config configs/desk.json] [--out results] [--only oc_scaling speed]

Each experiment goes through the same path as ``swing-spinn experiment <id>``,
so the CSV files here are the ones the CLI would produce.  The exit code is 0
only if every in-run assertion of every experiment passed.
"""
import argparse
import sys
import time

from swing_spinn import bench
from swing_spinn.cli import main as cli_main


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/desk.json")
    p.add_argument("--out", default="results")
    p.add_argument("--only", nargs="*", choices=bench.EXPERIMENTS, default=None)
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    codes = {}
    for eid in args.only or bench.EXPERIMENTS:
        t0 = time.perf_counter()
        print(f"== {eid}")
        codes[eid] = cli_main(["experiment", eid, "--config", args.config, "--out", args.out])
        print(f"   exit {codes[eid]} after {time.perf_counter() - t0:.0f}s")
    bad = [k for k, c in codes.items() if c != 0]
    print("all experiments passed" if not bad else f"experiments with failed checks: {', '.join(bad)}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())

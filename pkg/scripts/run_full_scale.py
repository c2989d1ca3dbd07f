#!/usr/bin/env python3
"""Run the four full-desk scenarios and write their report tables.

Usage:
    python scripts/run_full_scale.py --jobs 4 --out out/full [--desk]
"""

import argparse
import os
import time

from marginmi.harness import builtin_scenarios, emit_report, run_scenario


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/full")
    parser.add_argument("--jobs", type=int, default=os.cpu_count())
    parser.add_argument("--desk", action="store_true",
                        help="run the fifth-scale desk variants instead")
    parser.add_argument("--seed", type=int, help="master seed override")
    args = parser.parse_args()

    suffix = "-desk" if args.desk else ""
    scenarios = builtin_scenarios()
    for k in (1, 2, 3, 4):
        sid = f"scenario{k}{suffix}"
        config = scenarios[sid]
        if args.seed is not None:
            import dataclasses
            config = dataclasses.replace(config, master_seed=args.seed)
        t0 = time.perf_counter()
        report = run_scenario(config, jobs=args.jobs)
        minutes = (time.perf_counter() - t0) / 60
        emit_report(report, args.out, fmt="csv")
        print(f"{sid} ({minutes:.1f} min): population {report.population_total:.0f}")
        for label, s in report.methods.items():
            acc = ""
            if s.method.uses_constraint:
                parts = [f"{b}: {v['mean']:.2f} [{v['min']:.2f},{v['max']:.2f}]"
                         for b, v in s.acceptance.items()]
                acc = "  acceptance " + "; ".join(parts)
            print(f"  {label:>22}: T {s.total_mean:7.0f} (se {s.total_se:4.0f}){acc}")
    print(f"tables written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

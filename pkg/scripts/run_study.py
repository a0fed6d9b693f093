#!/usr/bin/env python3
"""Desk-scale switching study: all policies, several master seeds.

For each seed this learns adaptation rules, runs adamls, the naive threshold
switcher, and every static model on the identical arrival sequence, then
prints per-seed orderings: utility at equal weights, the leader at pure
confidence weight, the response-time penalty ratio, and switch counts.
Artifacts land under --out/seed<k>/ in the same CSV layout the compare
command writes.

Usage: python scripts/run_study.py [--out out/study] [--seeds 1 2 3 4 5]
       [--config configs/default.yaml]
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from adamls import cli
from adamls import config as cfgmod


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="multi-seed policy comparison study")
    parser.add_argument("--out", type=Path, default=Path("out/study"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    parser.add_argument("--config", type=Path, default=None)
    args = parser.parse_args(argv)

    base = (
        cfgmod.load_experiment_config(args.config)
        if args.config
        else cfgmod.ExperimentConfig()
    )
    verdicts = {
        "adamls leads at equal weights": 0,
        "most accurate static leads at (1,0)": 0,
        "adamls r-penalties <= 25% of naive": 0,
        "adamls switches more than naive": 0,
    }
    for seed in args.seeds:
        out_dir = args.out / f"seed{seed}"
        config = dataclasses.replace(base, master_seed=seed, output_dir=str(out_dir))
        cli.run_learn(config)
        cli.run_compare(config)
        sweep = _read_sweep(out_dir)
        counts = _read_counts(out_dir)
        equal = sweep[(0.5, 0.5)]
        pure_c = sweep[(1.0, 0.0)]
        fastest_static = "static:nano"
        adamls_u = equal["adamls"]
        lead_equal = adamls_u > equal["naive"] and adamls_u > equal[fastest_static]
        top_at_pure_c = max(pure_c, key=pure_c.get)
        lead_acc = top_at_pure_c.startswith("static:") and pure_c[top_at_pure_c] == max(
            v for p, v in pure_c.items() if p.startswith("static:")
        )
        pen_ratio = counts["adamls"]["r_penalties"] / max(counts["naive"]["r_penalties"], 1)
        more_switches = counts["adamls"]["switches"] > counts["naive"]["switches"]
        verdicts["adamls leads at equal weights"] += lead_equal
        verdicts["most accurate static leads at (1,0)"] += lead_acc
        verdicts["adamls r-penalties <= 25% of naive"] += pen_ratio <= 0.25
        verdicts["adamls switches more than naive"] += more_switches
        print(
            f"seed {seed}: adamls U(0.5,0.5)={adamls_u:.0f} "
            f"(naive {equal['naive']:.0f}, nano {equal[fastest_static]:.0f}) | "
            f"top at (1,0): {top_at_pure_c} | pen ratio {pen_ratio:.2f} | "
            f"switches adamls={counts['adamls']['switches']} naive={counts['naive']['switches']}"
        )
    n = len(args.seeds)
    print()
    for name, hits in verdicts.items():
        print(f"{name}: {hits}/{n} seeds")
    return 0


def _read_sweep(out_dir: Path) -> dict:
    sweep: dict = {}
    with open(out_dir / "utility_sweep.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (float(row["w_e"]), float(row["w_d"]))
            sweep.setdefault(key, {})[row["policy"]] = float(row["total_utility"])
    return sweep


def _read_counts(out_dir: Path) -> dict:
    counts: dict = {}
    with open(out_dir / "summary.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            counts[row["policy"]] = {
                "switches": int(row["switches"]),
                "r_penalties": int(row["r_penalties"]),
            }
    return counts


if __name__ == "__main__":
    sys.exit(main())

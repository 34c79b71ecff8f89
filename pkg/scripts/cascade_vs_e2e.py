#!/usr/bin/env python3
"""Compare cascade training against single-stage joint training at a matched step budget."""

import argparse

from reldet.experiments import run_cascade_vs_e2e


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--stage-steps", type=int, default=500)
    parser.add_argument("--scenes", type=int, default=8)
    args = parser.parse_args()
    wins = 0
    for seed in args.seeds:
        cascade, e2e = run_cascade_vs_e2e(seed, stage_steps=args.stage_steps, num_scenes=args.scenes)
        win = cascade >= e2e
        wins += win
        print(f"seed {seed}: cascade {cascade:.3f} vs end-to-end {e2e:.3f} -> {'cascade' if win else 'e2e'}")
    print(f"cascade wins {wins}/{len(args.seeds)}")


if __name__ == "__main__":
    main()

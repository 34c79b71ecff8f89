#!/usr/bin/env python3
"""Does joint training with a large dataset lift a tiny dataset's test mAP?"""

import argparse

from reldet.experiments import run_small_data_benefit


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--stage-steps", type=int, default=400)
    args = parser.parse_args()
    wins = 0
    for seed in args.seeds:
        joint, alone = run_small_data_benefit(seed, stage_steps=args.stage_steps)
        win = joint > alone
        wins += win
        print(f"seed {seed}: joint {joint:.3f} vs alone {alone:.3f} -> {'joint' if win else 'alone'}")
    print(f"joint wins {wins}/{len(args.seeds)}")


if __name__ == "__main__":
    main()

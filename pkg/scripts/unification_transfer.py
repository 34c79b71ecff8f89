#!/usr/bin/env python3
"""Train on vocabulary A, evaluate under vocabulary-B queries with and without the synonym map."""

import argparse
import json

from reldet.experiments import run_unification_transfer


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--scenes", type=int, default=16)
    parser.add_argument("--stage1-steps", type=int, default=2000)
    parser.add_argument("--stage2-steps", type=int, default=2000)
    args = parser.parse_args()
    result = run_unification_transfer(
        seed=args.seed,
        num_scenes=args.scenes,
        stage1_steps=args.stage1_steps,
        stage2_steps=args.stage2_steps,
    )
    print(json.dumps(result, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()

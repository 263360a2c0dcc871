"""Bounded exhaustive check of Ben-Or over every binary input vector.

    python scripts/exhaustive_benor.py --n 3 --t 1 --rounds 2
"""

import argparse
import time

from consim.benor import BenOr
from consim.verifier import ExploreBounds, all_binary_inputs, explore_all


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--t", type=int, default=1)
    ap.add_argument("--rounds", type=int, default=2)
    ap.add_argument("--no-memo", action="store_true")
    args = ap.parse_args()

    t0 = time.monotonic()
    bounds = ExploreBounds(max_rounds=args.rounds, memo=not args.no_memo)
    for v, res in explore_all(BenOr(args.n, args.t), all_binary_inputs(args.n), bounds).items():
        print("".join(map(str, v)), res)
    print(f"{time.monotonic() - t0:.1f}s")


if __name__ == "__main__":
    main()

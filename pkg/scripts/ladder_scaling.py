"""Rounds and total work of the round ladder with the BR coin, as n grows.

    python scripts/ladder_scaling.py --n 4,8,16 --trials 200 --out ladder.csv
"""

import argparse

from consim.adversaries import StrategyConfig
from consim.harness import RunSpec, ratio_spread, sweep, sweep_to_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", default="4,8,16")
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    ns = [int(x) for x in args.n.split(",")]

    chunks = []
    for strat in (StrategyConfig("uniform"), StrategyConfig("vote-hider", target_bit=1)):
        template = RunSpec("ladder-br", ns[0], inputs="random(2)", adversary=strat, seed=args.seed, trials=args.trials)
        rows = sweep(template, ns)
        print(f"# {strat.label()}")
        for r in rows:
            print(f"n={r.n:<3} terminated {r.terminated}/{r.trials}  mean rounds {r.mean_rounds:.2f}  "
                  f"mean steps {r.mean_steps:.0f}  steps/(n^2 log n) {r.ratio:.3f}")
        print(f"  ratio spread {ratio_spread(rows):.2f}")
        chunks.append(sweep_to_csv(rows))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("".join(chunks))


if __name__ == "__main__":
    main()

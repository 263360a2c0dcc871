"""Outcome frequencies and vote accounting of the BR weak shared coin, per strategy.

    python scripts/br_bias.py --n 8 --trials 1000
"""

import argparse

from consim.adversaries import StrategyConfig
from consim.brcoin import batch_size, vote_accounting
from consim.harness import RunSpec, run_trial

STRATEGIES = (
    StrategyConfig("round-robin"),
    StrategyConfig("uniform"),
    StrategyConfig("vote-hider", target_bit=0),
    StrategyConfig("vote-hider", target_bit=1),
    StrategyConfig("vote-hider", target_bit=1, crash=True),
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()
    n = args.n

    print(f"{'strategy':<28} {'all 0':>7} {'all 1':>7} {'mixed':>7} {'hidden':>7} {'after':>6} {'common':>12}")
    for strat in STRATEGIES:
        spec = RunSpec("br-coin", n, inputs="unanimous(0)", adversary=strat, seed=args.seed, trials=args.trials)
        tally = {0: 0, 1: 0, None: 0}
        hidden = after = 0
        common = []
        for i in range(spec.trials):
            rep = run_trial(spec, i, keep_trace=True)
            outs = {d for d, c in zip(rep.decisions, rep.crashed) if not c and d is not None}
            tally[outs.pop() if len(outs) == 1 else None] += 1
            acc = vote_accounting(rep.trace, n)
            hidden = max(hidden, acc.max_hidden)
            after = max(after, acc.max_after_threshold)
            if not any(rep.crashed):
                common.append(acc.common_votes)
        span = f"[{min(common)}, {max(common)}]" if common else "-"
        t = spec.trials
        print(f"{strat.label():<28} {tally[0] / t:>7.3f} {tally[1] / t:>7.3f} {tally[None] / t:>7.3f} "
              f"{hidden:>7} {after:>6} {span:>12}")
    print(f"bounds: hidden <= 1, after <= {batch_size(n)}, common in [{n * n + 1}, {n * n + n}]")


if __name__ == "__main__":
    main()

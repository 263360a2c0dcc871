"""Loop passes of the CIL protocol against n, under the uniform oblivious scheduler.

Prints mean passes per process, that figure divided by n, and total steps / n^2.

    python scripts/cil_passes.py --n 4,8,16,32 --trials 500
"""

import argparse

from consim.adversaries import StrategyConfig
from consim.harness import RunSpec, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", default="4,8,16")
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--inputs", default="split", help="split, unanimous(v) or random(seed)")
    ap.add_argument("--split", action="store_true", help="Flip-then-Write substrate instead of FlipAndWrite")
    args = ap.parse_args()

    print(f"{'n':>4} {'passes/proc':>12} {'/n':>8} {'max passes':>11} {'steps/n^2':>10} {'terminated':>11}")
    ratios = []
    for n in (int(x) for x in args.n.split(",")):
        spec = RunSpec("cil", n, inputs=args.inputs, adversary=StrategyConfig("uniform"),
                       atomic=not args.split, seed=args.seed, trials=args.trials)
        rows, summary = run_experiment(spec)
        per_proc = sum(r["passes_total"] for r in rows) / len(rows) / n
        worst = sum(r["passes_max"] for r in rows) / len(rows)
        ratios.append(per_proc / n)
        print(f"{n:>4} {per_proc:>12.3f} {per_proc / n:>8.3f} {worst:>11.2f} "
              f"{summary.mean_steps / n**2:>10.3f} {summary.terminated:>6}/{summary.trials}")
    print(f"spread of passes/n: {max(ratios) / min(ratios):.2f}")


if __name__ == "__main__":
    main()

"""``consim`` command line: run, sweep, check, replay."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .core import ConsimError, dump_trace, parse_trace, replay
from .harness import (
    any_violation,
    build_protocol,
    parse_spec,
    ratio_spread,
    rows_to_csv,
    run_trials,
    result_row,
    summary_to_json,
    sweep,
    sweep_to_csv,
    write_trace,
    RunSpec,
)
from .verifier import ExploreBounds, Violation, aggregate, all_binary_inputs, explore_all


def _load(spec_path, **overrides) -> RunSpec:
    try:
        return parse_spec(Path(spec_path).read_text(), **overrides)
    except ConsimError as e:
        raise click.UsageError(str(e)) from None


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@click.group()
def main():
    """Randomized consensus simulator."""


@main.command("run")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV rows (default stdout)")
@click.option("--summary", "summary_path", type=click.Path(dir_okay=False), default=None, help="JSON summary file")
@click.option("--traces", type=click.Path(file_okay=False), default=None, help="directory for per-trial traces")
def run_cmd(spec_path, seed, trials, max_steps, out, summary_path, traces):
    """Run the run spec's trials; exit 1 if any trial violated safety."""
    spec = _load(spec_path, seed=seed, trials=trials, max_steps=max_steps)
    reports = run_trials(spec)
    rows = [result_row(spec, i, r) for i, r in enumerate(reports)]
    _emit(rows_to_csv(rows, spec.protocol), out)
    if traces:
        Path(traces).mkdir(parents=True, exist_ok=True)
        for i in range(spec.trials):
            write_trace(Path(traces) / f"trial_{i:05d}.trace", spec, i)
    if not reports:
        click.echo("no trials: nothing to summarize", err=True)
        sys.exit(2)
    summary = aggregate(reports)
    text = summary_to_json(spec, summary)
    if summary_path:
        Path(summary_path).write_text(text)
    elif out:
        click.echo(text, nl=False)
    else:
        click.echo(text, nl=False, err=True)
    if any_violation(rows):
        click.echo(f"{summary.violations} trial(s) violated safety", err=True)
        sys.exit(1)


@main.command("sweep")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", "ns", required=True, help="comma-separated ascending n values, e.g. 4,8,16")
@click.option("--seed", type=int, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def sweep_cmd(spec_path, ns, seed, trials, out):
    """Scaling table: mean steps and rounds per n, with mean_steps / f(n)."""
    spec = _load(spec_path, seed=seed, trials=trials)
    try:
        values = [int(x) for x in ns.split(",") if x.strip()]
        rows = sweep(spec, values)
    except ValueError:
        raise click.UsageError(f"--n must be integers, got {ns!r}") from None
    except ConsimError as e:
        raise click.UsageError(str(e)) from None
    _emit(sweep_to_csv(rows), out)
    spread = ratio_spread(rows)
    if spread is not None:
        click.echo(f"ratio spread (max/min): {spread:.3f}", err=True)
    if any(r.violations for r in rows):
        sys.exit(1)


@main.command("check")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--max-rounds", type=int, required=True)
@click.option("--max-steps", type=int, default=400, show_default=True)
@click.option("--coin-budget", type=int, default=20, show_default=True)
@click.option("--witness", type=click.Path(dir_okay=False), default=None, help="write the first violation's trace here")
def check_cmd(spec_path, max_rounds, max_steps, coin_budget, witness):
    """Exhaustive bounded check over every schedule (crashes included) and coin outcome.

    An explicit input list checks that vector; otherwise all 2^n binary vectors.
    """
    spec = _load(spec_path)
    protocol = build_protocol(spec)
    vectors = [tuple(spec.inputs)] if isinstance(spec.inputs, list) else all_binary_inputs(spec.n)
    bounds = ExploreBounds(max_rounds=max_rounds, max_steps=max_steps, coin_budget=coin_budget)
    try:
        results = explore_all(protocol, vectors, bounds)
    except ConsimError as e:
        raise click.ClickException(str(e)) from None
    failed = False
    for v, res in results.items():
        click.echo(f"{','.join(map(str, v))}: {res}")
        if isinstance(res, Violation) and not failed:
            failed = True
            if witness:
                header = {"protocol": spec.protocol, "n": spec.n, "t": spec.t, "atomic": spec.atomic,
                          "halting": spec.halting, "inputs": list(v), "violation": res.report.kind}
                Path(witness).write_text(dump_trace(res.report.witness, header))
    sys.exit(1 if failed else 0)


@main.command("replay")
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
def replay_cmd(trace_path):
    """Re-execute a trace file and pretty-print it."""
    header, rows = parse_trace(Path(trace_path).read_text())
    if header is None:
        raise click.UsageError("trace has no '# {...}' header naming the protocol and inputs")
    spec = RunSpec(protocol=header["protocol"], n=header["n"], t=header["t"], inputs=header["inputs"],
                   atomic=header.get("atomic", True), halting=header.get("halting", True))
    protocol = build_protocol(spec)
    try:
        config, trace = replay(protocol, header["inputs"], rows)
    except ConsimError as e:
        raise click.ClickException(f"trace does not replay: {e}") from None
    for i, (step, result) in enumerate(trace):
        res = "" if result is None else f" -> {result}"
        click.echo(f"{i:6d}  p{step.actor:<3d} {step.kind:<9s} {step.arg}{res}")
    click.echo(f"decisions: {config.decided}  crashed: {[not a for a in config.alive]}")


if __name__ == "__main__":
    main()

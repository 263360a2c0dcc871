"""Experiment specs, trial execution, CSV/JSON emission and n-sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import random
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .adversaries import KINDS, StrategyConfig
from .benor import BenOr
from .brcoin import BrCoin
from .cil import Cil
from .core import CoinSource, ConfigurationError, TrialReport, derive_seed, dump_trace, run
from .ladder import Ladder
from .verifier import StatSummary, aggregate

SCHEMA_VERSION = 1
PROTOCOLS = ("ben-or", "cil", "ladder-br", "br-coin")

# per-protocol extra CSV columns, in order
COUNTER_COLUMNS = {
    "ben-or": ("messages",),
    "cil": ("passes_total", "passes_max"),
    "ladder-br": ("br_flips",),
    "br-coin": ("br_flips",),
}
BASE_COLUMNS = ("schema_version", "trial_id", "seed", "terminated", "decision", "rounds", "total_steps", "safety_violation")

# stream tag separating the scheduler's randomness from the coins
_ADVERSARY_STREAM = 0xAD

_GENERATOR = re.compile(r"^\s*(unanimous|random)\s*\(\s*(-?\d+)\s*\)\s*$|^\s*(split)\s*$")


def _parse_inputs(value):
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, str):
        m = _GENERATOR.match(value)
        if m:
            return value.strip().replace(" ", "")
    raise ConfigurationError(
        f"inputs must be a list or one of unanimous(v), split, random(seed); got {value!r}"
    )


def materialize_inputs(inputs, n: int, trial_seed: int = 0) -> list:
    """Concrete input vector for one trial."""
    if isinstance(inputs, list):
        if len(inputs) != n:
            raise ConfigurationError(f"{len(inputs)} inputs given for n={n}")
        return list(inputs)
    if inputs == "split":
        return [i % 2 for i in range(n)]
    kind, arg = inputs[:-1].split("(")
    if kind == "unanimous":
        return [int(arg)] * n
    rng = random.Random(derive_seed(int(arg), trial_seed))
    return [rng.randrange(2) for _ in range(n)]


@dataclass
class RunSpec:
    protocol: str
    n: int
    t: Optional[int] = None
    inputs: object = "split"
    adversary: StrategyConfig = field(default_factory=StrategyConfig)
    atomic: bool = True  # cil: FlipAndWrite instead of Flip-then-Write
    halting: bool = True  # ben-or: stop one round after deciding
    seed: int = 0
    trials: int = 100
    max_steps: int = 10**6

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigurationError(f"unknown protocol {self.protocol!r}; valid: {', '.join(PROTOCOLS)}")
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigurationError(f"n must be a positive integer, got {self.n!r}")
        if self.t is None:
            self.t = (self.n - 1) // 2 if self.protocol == "ben-or" else self.n - 1
        if self.t < 0:
            raise ConfigurationError(f"t must be >= 0, got {self.t}")
        if self.protocol == "ben-or":
            if 2 * self.t >= self.n:
                raise ConfigurationError(
                    f"Ben-Or tolerates only t < n/2 crash failures; t={self.t} violates t < {self.n}/2"
                )
        elif self.t > self.n - 1:
            raise ConfigurationError(f"wait-free protocols tolerate at most t = n-1 = {self.n - 1} crashes, got t={self.t}")
        if self.trials < 0 or self.max_steps < 1:
            raise ConfigurationError("trials must be >= 0 and max_steps >= 1")
        self.inputs = _parse_inputs(self.inputs)
        if isinstance(self.inputs, list):
            materialize_inputs(self.inputs, self.n)
        self.adversary.build(self.t)  # validates kind and crash plan

    def with_n(self, n: int, t: Optional[int] = None) -> "RunSpec":
        inputs = self.inputs if not isinstance(self.inputs, list) else "split"
        return dataclasses.replace(self, n=n, t=t, inputs=inputs)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adversary"]["crash_plan"] = [list(c) for c in self.adversary.crash_plan]
        return d


def _strategy_from(value) -> StrategyConfig:
    if isinstance(value, StrategyConfig):
        return value
    if isinstance(value, str):
        value = {"kind": value}
    if not isinstance(value, dict):
        raise ConfigurationError(f"adversary must be a name or a mapping, got {value!r}")
    value = dict(value)
    kind = value.get("kind", "round-robin")
    if kind not in KINDS:
        raise ConfigurationError(f"unknown adversary {kind!r}; valid: {', '.join(KINDS)}")
    known = {f.name for f in dataclasses.fields(StrategyConfig)}
    extra = set(value) - known
    if extra:
        raise ConfigurationError(f"unknown adversary fields {sorted(extra)}; valid: {sorted(known)}")
    if "crash_plan" in value:
        value["crash_plan"] = tuple(tuple(c) for c in value["crash_plan"])
    return StrategyConfig(**value)


def spec_from_dict(doc: dict) -> RunSpec:
    if not isinstance(doc, dict):
        raise ConfigurationError("a spec document must be a mapping")
    known = {f.name for f in dataclasses.fields(RunSpec)}
    extra = set(doc) - known
    if extra:
        raise ConfigurationError(f"unknown spec fields {sorted(extra)}; valid: {sorted(known)}")
    if "protocol" not in doc or "n" not in doc:
        raise ConfigurationError("a spec needs at least 'protocol' and 'n'")
    doc = dict(doc)
    if "adversary" in doc:
        doc["adversary"] = _strategy_from(doc["adversary"])
    return RunSpec(**doc)


def parse_spec(text: str, **overrides) -> RunSpec:
    """Parse a YAML/JSON key-value spec; non-None ``overrides`` win."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"malformed spec: {e}") from None
    doc = dict(doc or {})
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return spec_from_dict(doc)


def build_protocol(spec: RunSpec):
    if spec.protocol == "ben-or":
        return BenOr(spec.n, spec.t, halting=spec.halting)
    if spec.protocol == "cil":
        return Cil(spec.n, spec.t, atomic=spec.atomic)
    if spec.protocol == "ladder-br":
        return Ladder(spec.n, spec.t)
    return BrCoin(spec.n, spec.t)


def trial_seed(spec: RunSpec, trial_id: int) -> int:
    return spec.seed ^ trial_id


def run_trial(spec: RunSpec, trial_id: int, keep_trace: bool = False) -> TrialReport:
    seed = trial_seed(spec, trial_id)
    protocol = build_protocol(spec)
    inputs = materialize_inputs(spec.inputs, spec.n, seed)
    strategy = spec.adversary.with_seed(derive_seed(seed, _ADVERSARY_STREAM, spec.adversary.seed)).build(spec.t)
    return run(protocol, inputs, strategy, CoinSource(seed), spec.max_steps, keep_trace=keep_trace)


def trace_header(spec: RunSpec, trial_id: int, report: TrialReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "protocol": spec.protocol,
        "n": spec.n,
        "t": spec.t,
        "atomic": spec.atomic,
        "halting": spec.halting,
        "inputs": report.inputs,
        "seed": trial_seed(spec, trial_id),
        "trial_id": trial_id,
        "adversary": spec.adversary.label(),
    }


def result_row(spec: RunSpec, trial_id: int, report: TrialReport) -> dict:
    row = {
        "schema_version": SCHEMA_VERSION,
        "trial_id": trial_id,
        "seed": trial_seed(spec, trial_id),
        "terminated": int(report.terminated),
        "decision": "" if report.decision is None else report.decision,
        "rounds": report.max_round,
        "total_steps": report.total_steps,
        "safety_violation": int(not report.safe),
    }
    for c in COUNTER_COLUMNS[spec.protocol]:
        row[c] = report.counters[c]
    return row


def columns(protocol: str) -> tuple:
    return BASE_COLUMNS + COUNTER_COLUMNS[protocol]


def _trial_job(args):
    spec, trial_id = args
    return run_trial(spec, trial_id)


def worker_count(trials: int) -> int:
    env = os.environ.get("CONSIM_WORKERS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, trials))


def run_trials(spec: RunSpec, workers: Optional[int] = None) -> list[TrialReport]:
    """All trials, in trial_id order whatever order they finish in."""
    jobs = [(spec, i) for i in range(spec.trials)]
    workers = worker_count(spec.trials) if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_trial_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def run_experiment(spec: RunSpec, workers: Optional[int] = None) -> tuple[list[dict], StatSummary]:
    """Rows and summary; raises ContractError for zero trials (nothing to summarize)."""
    reports = run_trials(spec, workers)
    rows = [result_row(spec, i, r) for i, r in enumerate(reports)]
    return rows, aggregate(reports)


def rows_to_csv(rows: list[dict], protocol: str) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns(protocol), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def summary_to_json(spec: RunSpec, summary: StatSummary) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "spec": spec.as_dict(), "summary": summary.as_dict()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def any_violation(rows) -> bool:
    return any(int(r["safety_violation"]) for r in rows)


# -- sweeps ----------------------------------------------------------------

def claimed_work(protocol: str):
    """The total-work bound the protocol is claimed to meet, as f(n)."""
    if protocol == "cil":
        return lambda n: n * n
    if protocol in ("ladder-br", "br-coin"):
        return lambda n: n * n * math.log2(n) if n > 1 else 1.0
    return None


@dataclass
class SweepRow:
    n: int
    trials: int
    terminated: int
    mean_steps: float
    mean_rounds: float
    ratio: Optional[float]
    violations: int


def sweep(template: RunSpec, ns, workers: Optional[int] = None) -> list[SweepRow]:
    ns = list(ns)
    if ns != sorted(ns) or len(set(ns)) != len(ns):
        raise ConfigurationError(f"the n-list must be strictly ascending, got {ns}")
    f = claimed_work(template.protocol)
    out = []
    for n in ns:
        _, summary = run_experiment(template.with_n(n), workers)
        ratio = summary.mean_steps / f(n) if f is not None else None
        out.append(SweepRow(n, summary.trials, summary.terminated, summary.mean_steps,
                            summary.mean_rounds, ratio, summary.violations))
    return out


def ratio_spread(rows: list[SweepRow]) -> Optional[float]:
    """max/min of the fitted ratios; 1.0 for a single n."""
    rs = [r.ratio for r in rows if r.ratio is not None]
    if not rs:
        return None
    return max(rs) / min(rs)


def sweep_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema_version", "n", "trials", "terminated", "mean_total_steps", "mean_rounds", "ratio", "violations"])
    for r in rows:
        w.writerow([SCHEMA_VERSION, r.n, r.trials, r.terminated, repr(r.mean_steps), repr(r.mean_rounds),
                    "" if r.ratio is None else repr(r.ratio), r.violations])
    return buf.getvalue()


def write_trace(path, spec: RunSpec, trial_id: int) -> TrialReport:
    report = run_trial(spec, trial_id, keep_trace=True)
    with open(path, "w") as fh:
        fh.write(dump_trace(report.trace, trace_header(spec, trial_id, report)))
    return report

"""Bounded exhaustive exploration and trial statistics.

``explore`` walks every adversary choice (crash pseudo-steps included) and
every coin outcome under a round/step/coin-draw budget, checking agreement,
validity and irrevocability on every prefix.  Identical configurations are
memoized: a configuration is revisited only when it is reached at a smaller
depth and its earlier exploration was cut short by the step bound, which
cannot change the verdict.
"""

from __future__ import annotations

import copy
import itertools
import math
import random
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .adversaries import View
from .core import (
    COIN_KINDS,
    DELIVER,
    ContractError,
    FixedCoins,
    ForcedCoin,
    SystemConfig,
    apply_step,
    check_safety,
    enabled_steps,
)

AGREEMENT = "AgreementViolation"
VALIDITY = "ValidityViolation"
IRREVOCABILITY = "IrrevocabilityViolation"
INVARIANT = "InvariantViolation"


class BoundsTooLarge(ContractError):
    def __init__(self, msg, estimate):
        super().__init__(msg)
        self.estimate = estimate


@dataclass(frozen=True)
class ExploreBounds:
    max_rounds: int
    max_steps: int = 400
    # "all" enumerates every outcome of every draw; otherwise a
    # {(process, draw_index): value} assignment
    coin_universe: object = "all"
    coin_budget: int = 20
    # "all" or a sequence of StrategyConfig
    schedule_universe: object = "all"
    node_budget: int = 20_000_000
    memo: bool = True


@dataclass
class ViolationReport:
    kind: str
    witness: list
    name: Optional[str] = None
    config: Optional[SystemConfig] = field(default=None, repr=False)

    def __str__(self):
        label = f"{self.kind}({self.name})" if self.name else self.kind
        return f"{label} after {len(self.witness)} steps"


@dataclass
class Exhausted:
    states: int
    executions: int
    decided_executions: int
    bounded_executions: int
    ok: bool = True


@dataclass
class Violation:
    report: ViolationReport
    states: int
    ok: bool = False


_COMPLETE = -1

Invariant = Callable[[SystemConfig], Optional[str]]


def _violations(config, protocol, inputs, invariants):
    agreement, validity = check_safety(config, inputs, protocol)
    if agreement:
        return AGREEMENT, None
    if validity:
        return VALIDITY, None
    if config.irrevocability_violation:
        return IRREVOCABILITY, None
    for name in protocol_invariants(config, protocol):
        return INVARIANT, name
    for inv in invariants:
        name = inv(config)
        if name:
            return INVARIANT, name
    return None


def protocol_invariants(config, protocol):
    check = getattr(protocol, "invariant_violations", None)
    return check(config) if check is not None else []


class _Explorer:
    def __init__(self, protocol, inputs, bounds: ExploreBounds, invariants, leaf_check):
        self.protocol = protocol
        self.inputs = list(inputs)
        self.bounds = bounds
        self.invariants = list(invariants)
        self.leaf_check = leaf_check
        self.visited: dict = {}
        self.executions = 0
        self.decided = 0
        self.bounded = 0
        self.nodes = 0
        self.path: list = []
        self.cut = False
        if bounds.coin_universe == "all":
            self.fixed = None
        else:
            self.fixed = FixedCoins(dict(bounds.coin_universe))

    def _children(self, config, steps):
        for step in steps:
            if step.kind in COIN_KINDS:
                if self.fixed is not None:
                    yield step, self.fixed
                elif sum(config.coin_counts) < self.bounds.coin_budget:
                    yield step, ForcedCoin(0)
                    yield step, ForcedCoin(1)
            else:
                yield step, None

    def _steps(self, config):
        steps = enabled_steps(config, self.protocol, self.bounds.max_rounds)
        if self.bounds.memo and self.protocol.substrate == "message":
            wants = self.protocol.wants
            steps = [
                s for s in steps
                if s.kind != DELIVER or wants(config.procs[s.actor], config.pool[s.arg].payload)
            ]
        return steps

    def visit(self, config, depth, strategy=None):
        """Returns a ViolationReport or None; sets ``self.cut`` when the
        subtree was (possibly) truncated by the step bound."""
        self.nodes += 1
        key = None
        if self.bounds.memo:
            key = config.key(self.protocol)
            seen = self.visited.get(key)
            if seen is not None and (seen == _COMPLETE or seen <= depth):
                # an incomplete or still-open subtree may hide deeper states
                if seen != _COMPLETE:
                    self.cut = True
                return None
            self.visited[key] = depth
            if len(self.visited) > self.bounds.node_budget:
                raise BoundsTooLarge(
                    f"more than {self.bounds.node_budget} distinct configurations", len(self.visited)
                )
        outer_cut, self.cut = self.cut, False
        found = self._expand(config, depth, strategy)
        if key is not None and not self.cut:
            # nothing below depended on the step bound: never worth revisiting
            self.visited[key] = _COMPLETE
        self.cut = self.cut or outer_cut
        return found

    def _expand(self, config, depth, strategy):
        bad = _violations(config, self.protocol, self.inputs, self.invariants)
        if bad is not None:
            return ViolationReport(bad[0], list(self.path), bad[1], config)

        if config.all_decided():
            return self._leaf(config, decided=True)
        if depth >= self.bounds.max_steps:
            self.cut = True
            return self._leaf(config, decided=False)
        steps = self._steps(config)
        if strategy is not None and steps:
            strategy = copy.deepcopy(strategy)
            choice = strategy.choose(View(strategy.visibility, config, self.path, self.protocol), steps)
            steps = [choice]
        children = list(self._children(config, steps))
        if not children:
            return self._leaf(config, decided=False)
        for step, coins in children:
            child = config.clone()
            _, result = apply_step(child, step, coins, self.protocol)
            self.path.append((step, result))
            found = self.visit(child, depth + 1, strategy)
            self.path.pop()
            if found is not None:
                return found
        return None

    def _leaf(self, config, decided):
        self.executions += 1
        if decided:
            self.decided += 1
        else:
            self.bounded += 1
        if self.leaf_check is not None:
            name = self.leaf_check(config)
            if name:
                return ViolationReport(INVARIANT, list(self.path), name, config)
        return None


def explore(
    protocol,
    inputs,
    bounds: ExploreBounds,
    invariants: Sequence[Invariant] = (),
    leaf_check: Optional[Invariant] = None,
    memo_table: Optional[dict] = None,
):
    """Exhaustively explore one input vector; returns Exhausted or Violation.

    ``memo_table`` lets several calls share visited configurations; only
    sound across input vectors that are renamings of each other under a
    symmetric protocol (see ``explore_all``).
    """
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * bounds.max_steps + 1000))
    ex = _Explorer(protocol, inputs, bounds, invariants, leaf_check)
    if memo_table is not None:
        ex.visited = memo_table
    try:
        if not bounds.memo:
            est = estimate_tree(protocol, inputs, bounds)
            if est > bounds.node_budget:
                raise BoundsTooLarge(f"estimated {est:.3g} nodes exceeds budget {bounds.node_budget}", est)
        root = SystemConfig.initial(protocol, inputs)
        if bounds.schedule_universe == "all":
            found = ex.visit(root, 0)
        else:
            found = None
            for cfg in bounds.schedule_universe:
                strat = cfg.build(protocol.t)
                strat.bind(protocol)
                ex.visited.clear()
                found = ex.visit(root.clone(), 0, strat)
                if found is not None:
                    break
    finally:
        sys.setrecursionlimit(limit)
    states = len(ex.visited) if bounds.memo else ex.nodes
    if found is not None:
        return Violation(found, states)
    return Exhausted(states, ex.executions, ex.decided, ex.bounded)


def all_binary_inputs(n: int) -> list[tuple]:
    return list(itertools.product((0, 1), repeat=n))


def explore_all(protocol, vectors, bounds: ExploreBounds, invariants=(), leaf_check=None) -> dict:
    """``explore`` every input vector.

    For a symmetric protocol, vectors with the same multiset of inputs reach
    the same configurations up to renaming, so they share one memo table and
    the later ones finish almost immediately.
    """
    shared = protocol.symmetric and bounds.memo and bounds.schedule_universe == "all"
    tables: dict = {}
    out = {}
    for v in vectors:
        v = tuple(v)
        table = tables.setdefault(tuple(sorted(v, key=repr)), {}) if shared else None
        out[v] = explore(protocol, v, bounds, invariants, leaf_check, memo_table=table)
    return out


def estimate_tree(protocol, inputs, bounds: ExploreBounds, probes: int = 200, seed: int = 0) -> float:
    """Knuth's random-probe estimate of the unmemoized tree size."""
    rng = random.Random(seed)
    ex = _Explorer(protocol, inputs, bounds, (), None)
    total = 0.0
    for _ in range(probes):
        config = SystemConfig.initial(protocol, inputs)
        weight, nodes = 1.0, 1.0
        for _ in range(bounds.max_steps):
            if config.all_decided():
                break
            children = list(ex._children(config, ex._steps(config)))
            if not children:
                break
            weight *= len(children)
            nodes += weight
            step, coins = children[rng.randrange(len(children))]
            apply_step(config, step, coins, protocol)
        total += nodes
    return total / probes


# -- statistics ------------------------------------------------------------

@dataclass
class StatSummary:
    trials: int
    terminated: int
    mean_rounds: float
    max_rounds: int
    rounds_radius: float
    mean_steps: float
    max_steps: int
    steps_radius: float
    histogram: dict
    violations: int

    def as_dict(self):
        return {
            "trials": self.trials,
            "terminated": self.terminated,
            "mean_rounds": self.mean_rounds,
            "max_rounds": self.max_rounds,
            "rounds_radius95": self.rounds_radius,
            "mean_total_steps": self.mean_steps,
            "max_total_steps": self.max_steps,
            "steps_radius95": self.steps_radius,
            "decisions": {str(k): v for k, v in sorted(self.histogram.items(), key=lambda kv: str(kv[0]))},
            "safety_violations": self.violations,
        }


def _mean_radius(xs):
    m = sum(xs) / len(xs)
    if len(xs) < 2:
        return m, 0.0
    var = sum((x - m) ** 2 for x in xs) / (len(xs) - 1)
    return m, 1.96 * math.sqrt(var / len(xs))


def aggregate(reports) -> StatSummary:
    """Summary of identically configured trials with 95% normal-approximation radii."""
    reports = list(reports)
    if not reports:
        raise ContractError("cannot aggregate an empty list of reports")
    rounds = [r.max_round for r in reports]
    steps = [r.total_steps for r in reports]
    mr, rr = _mean_radius(rounds)
    ms, rs = _mean_radius(steps)
    hist: dict = {}
    for r in reports:
        if r.terminated and r.decision is not None:
            hist[r.decision] = hist.get(r.decision, 0) + 1
    return StatSummary(
        trials=len(reports),
        terminated=sum(1 for r in reports if r.terminated),
        mean_rounds=mr,
        max_rounds=max(rounds),
        rounds_radius=rr,
        mean_steps=ms,
        max_steps=max(steps),
        steps_radius=rs,
        histogram=hist,
        violations=sum(1 for r in reports if not r.safe),
    )

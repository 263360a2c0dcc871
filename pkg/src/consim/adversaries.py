"""Schedulers.

A strategy sees the partial execution through a ``View`` filtered by its
visibility level and returns one of the enabled steps.  Crash pseudo-steps
are only taken when a crash plan (or the crashing vote hider) asks for them.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    CRASH,
    WRITE,
    ConfigurationError,
    ContractError,
    SystemConfig,
    VisibilityError,
    apply_step,
    enabled_steps,
)

STRONG = "strong"
CONTENT_OBLIVIOUS = "content-oblivious"
OBLIVIOUS = "oblivious"
LEVELS = (STRONG, CONTENT_OBLIVIOUS, OBLIVIOUS)


class View:
    """What a strategy may look at.

    Strong strategies see the full history (steps with parameters and
    results) and the live configuration.  Content-oblivious strategies see
    (actor, kind) pairs only; oblivious ones see actors only.
    """

    __slots__ = ("level", "_config", "_trace", "protocol")

    def __init__(self, level, config, trace, protocol):
        self.level = level
        self._config = config
        self._trace = trace
        self.protocol = protocol

    def __len__(self):
        return len(self._trace)

    @property
    def history(self):
        if self.level == STRONG:
            return list(self._trace)
        if self.level == CONTENT_OBLIVIOUS:
            return [(s.actor, s.kind) for s, _ in self._trace]
        return [s.actor for s, _ in self._trace]

    @property
    def config(self) -> SystemConfig:
        if self.level != STRONG:
            raise VisibilityError(f"a {self.level} adversary cannot inspect process or memory contents")
        return self._config


class Strategy:
    visibility = STRONG

    def __init__(self, crash_plan=()):
        self.crash_plan = sorted(tuple(c) for c in crash_plan)
        self._plan_pos = 0
        self._cursor = -1
        self.protocol = None

    def bind(self, protocol):
        self.protocol = protocol

    def _planned_crash(self, view, enabled):
        while self._plan_pos < len(self.crash_plan):
            at, pid = self.crash_plan[self._plan_pos]
            if at > len(view):
                return None
            self._plan_pos += 1
            step = next((s for s in enabled if s.kind == CRASH and s.actor == pid), None)
            if step is not None:
                return step
        return None

    def _round_robin(self, steps):
        """Next actor after the cursor; its local action before its oldest delivery."""
        by_actor = {}
        for s in steps:
            by_actor.setdefault(s.actor, s)
        actors = sorted(by_actor)
        nxt = next((a for a in actors if a > self._cursor), actors[0])
        self._cursor = nxt
        return by_actor[nxt]

    def choose(self, view, enabled):
        crash = self._planned_crash(view, enabled)
        if crash is not None:
            return crash
        steps = [s for s in enabled if s.kind != CRASH]
        if not steps:
            return enabled[0]
        return self.pick(view, steps, enabled)

    def pick(self, view, steps, enabled):
        raise NotImplementedError


class RoundRobin(Strategy):
    visibility = CONTENT_OBLIVIOUS

    def pick(self, view, steps, enabled):
        return self._round_robin(steps)

    def __repr__(self):
        return "RoundRobin()"


class UniformRandom(Strategy):
    """Uniform choice among enabled steps, seeded independently of the coins.

    The most starved enabled actor is forced once it has gone
    (window - 1) * n + 1 choices unscheduled; even if all n actors hit the
    limit together, each appears within any ``window * n`` consecutive
    choices.
    """

    visibility = OBLIVIOUS

    def __init__(self, seed: int, window: int = 2, crash_plan=()):
        super().__init__(crash_plan)
        self.seed = seed
        self.window = window
        self.rng = random.Random(seed)
        self._last: dict = {}
        self._count = 0

    def pick(self, view, steps, enabled):
        n = self.protocol.n
        i = self._count
        self._count += 1
        limit = (self.window - 1) * n + 1
        starved, gap = None, -1
        for s in steps:
            g = i - self._last.get(s.actor, -1)
            if g > gap:
                starved, gap = s.actor, g
        if gap >= limit:
            pool = [s for s in steps if s.actor == starved]
        else:
            pool = steps
        choice = pool[self.rng.randrange(len(pool))]
        self._last[choice.actor] = i
        return choice

    def __repr__(self):
        return f"UniformRandom(seed={self.seed})"


class Lockstep(Strategy):
    """Keeps every race-protocol process at the same round.

    A process whose local round is ahead of the slowest alive process is
    not scheduled.  Once all are level, round-raising writes are released
    before anybody reads, so no collect ever observes a lone leader.
    """

    visibility = STRONG

    def pick(self, view, steps, enabled):
        config = view.config
        procs = config.procs
        round_of = self.protocol.round_of
        low = min(round_of(procs[s.actor]) for s in steps)
        level = [s for s in steps if round_of(procs[s.actor]) == low]
        raises = getattr(self.protocol, "raises_round", None)
        if len(level) == len(steps) and raises is not None:
            raising = [s for s in steps if raises(config, s)]
            if raising:
                return raising[0]
        return self._round_robin(level)

    def __repr__(self):
        return "Lockstep()"


class VoteHider(Strategy):
    """Withholds shared-coin vote writes whose coin equals ``target_bit``.

    A held write stays pending, so each process hides at most one vote.
    Held writes are released, oldest holder first, as soon as some process
    is in its final scan, or when nothing else can run.  With ``crash=True``
    a holder due for release is crashed instead while the fault budget
    lasts, so its hidden vote is never written.
    """

    visibility = STRONG

    def __init__(self, target_bit: int, crash: bool = False, crash_plan=()):
        super().__init__(crash_plan)
        if target_bit not in (0, 1):
            raise ConfigurationError(f"target_bit must be 0 or 1, got {target_bit}")
        self.target_bit = target_bit
        self.crash = crash
        self._held_since: dict = {}

    def pick(self, view, steps, enabled):
        config = view.config
        proto = self.protocol
        pending_vote = getattr(proto, "pending_vote", None)
        held, free = [], []
        for s in steps:
            c = pending_vote(config.procs[s.actor]) if pending_vote is not None else None
            if c is not None and s.kind == WRITE and c == self.target_bit:
                held.append(s)
                self._held_since.setdefault(s.actor, len(view))
            else:
                free.append(s)
        if not held:
            return self._round_robin(free)
        final = getattr(proto, "in_final_scan", None)
        releasing = final is not None and any(
            a and final(st) for st, a in zip(config.procs, config.alive)
        )
        if free and not releasing:
            return self._round_robin(free)
        victim = min(held, key=lambda s: (self._held_since[s.actor], s.actor))
        self._held_since.pop(victim.actor, None)
        if self.crash and config.crashed < config.t:
            step = next((s for s in enabled if s.kind == CRASH and s.actor == victim.actor), None)
            if step is not None:
                return step
        return victim

    def __repr__(self):
        suffix = ", crash=True" if self.crash else ""
        return f"VoteHider({self.target_bit}{suffix})"


KINDS = ("round-robin", "uniform", "lockstep", "vote-hider")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "round-robin"
    seed: int = 0
    target_bit: int = 1
    crash: bool = False
    window: int = 2
    crash_plan: tuple = field(default_factory=tuple)

    def build(self, t: int) -> Strategy:
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown adversary {self.kind!r}; valid: {', '.join(KINDS)}")
        if len(self.crash_plan) > t:
            raise ConfigurationError(f"crash plan has {len(self.crash_plan)} crashes but t={t}")
        if self.kind == "round-robin":
            return RoundRobin(crash_plan=self.crash_plan)
        if self.kind == "uniform":
            return UniformRandom(self.seed, window=self.window, crash_plan=self.crash_plan)
        if self.kind == "lockstep":
            return Lockstep(crash_plan=self.crash_plan)
        return VoteHider(self.target_bit, crash=self.crash, crash_plan=self.crash_plan)

    def with_seed(self, seed: int) -> "StrategyConfig":
        return StrategyConfig(self.kind, seed, self.target_bit, self.crash, self.window, self.crash_plan)

    def label(self) -> str:
        if self.kind == "vote-hider":
            return f"vote-hider({self.target_bit}{',crash' if self.crash else ''})"
        return self.kind


class _ScrambledCoins:
    """Inverts a seeded subset of another source's draws."""

    def __init__(self, coins, seed):
        self.coins = coins
        self.seed = seed

    def value(self, p, k, m=2):
        v = self.coins.value(p, k, m)
        flip = random.Random(self.seed * 1_000_003 + p * 7919 + k).random() < 0.5
        return 1 - v if flip else v


def visibility_check(strategy: StrategyConfig, protocol, inputs, coins, max_steps: int, scramble_seed: int = 0) -> bool:
    """Do two scheduling worlds that differ only in contents get the same schedule?

    World B inverts a random subset of coin results and, for binary
    protocols, possibly all inputs.  Both worlds are driven by fresh
    instances of ``strategy``; their choices are compared by position in
    the enabled list for as long as the two executions remain equivalent
    (same enabled operations ignoring parameters).
    """
    rng = random.Random(scramble_seed)
    inputs = list(inputs)
    inputs_b = [1 - v for v in inputs] if protocol.binary and rng.random() < 0.5 else list(inputs)
    coins_b = _ScrambledCoins(coins, rng.getrandbits(32))

    sa, sb = strategy.build(protocol.t), strategy.build(protocol.t)
    sa.bind(protocol)
    sb.bind(protocol)
    ca, cb = SystemConfig.initial(protocol, inputs), SystemConfig.initial(protocol, inputs_b)
    ta, tb = [], []
    for _ in range(max_steps):
        if ca.all_decided() or cb.all_decided():
            break
        ea, eb = enabled_steps(ca, protocol), enabled_steps(cb, protocol)
        if not ea or [(s.actor, s.kind) for s in ea] != [(s.actor, s.kind) for s in eb]:
            break
        xa = sa.choose(View(sa.visibility, ca, ta, protocol), ea)
        xb = sb.choose(View(sb.visibility, cb, tb, protocol), eb)
        try:
            ia, ib = ea.index(xa), eb.index(xb)
        except ValueError:
            raise ContractError("strategy chose a step that is not enabled") from None
        if ia != ib:
            return False
        _, ra = apply_step(ca, xa, coins, protocol)
        _, rb = apply_step(cb, xb, coins_b, protocol)
        ta.append((xa, ra))
        tb.append((xb, rb))
    return True

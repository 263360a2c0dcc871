"""The CIL race protocol over single-writer registers.

Each pass a process publishes (preference, round), collects all n
registers one read at a time, and either wins the race, follows the
leaders, or flips a 1/(2n) coin to move up a round.  With ``atomic=True``
the advancement flip and the next publish are one FlipAndWrite step, so a
scheduler cannot react to the coin before it is visible in memory.
"""

from __future__ import annotations

from typing import Any, NamedTuple, Optional

from .core import FLIP, FLIPWRITE, READ, WRITE, ContractError, Protocol


class CilRegister(NamedTuple):
    preference: Any
    round: int


EMPTY = CilRegister(None, 0)


class Decide(NamedTuple):
    value: Any


class Continue(NamedTuple):
    preference: Any


class CilState(NamedTuple):
    pid: int
    preference: Any
    round: int
    phase: str  # write, collect, flip, done
    idx: int = 0
    view: tuple = ()
    maxround: int = 0
    passes: int = 0
    output: Any = None


def _unanimous(entries):
    prefs = {r.preference for r in entries}
    if len(prefs) == 1:
        return True, next(iter(prefs))
    return False, None


def cil_evaluate(view, preference) -> Decide | Continue:
    """Win test, then the follow-the-leaders rule."""
    view = list(view)
    if not view:
        raise ContractError("cannot evaluate an empty view")
    maxround = max(r.round for r in view)
    ok, v = _unanimous([r for r in view if r.round >= maxround - 1])
    if ok and v is not None:
        return Decide(v)
    ok, v = _unanimous([r for r in view if r.round == maxround])
    if ok and v is not None:
        return Continue(v)
    return Continue(preference)


def cil_advance(round: int, maxround: int, coin: int) -> int:
    if coin:
        return max(round + 1, maxround - 2)
    return round


def cil_flip_advancement(coins, p: int, k: int, n: int) -> int:
    """The k-th draw of process p: 1 with probability 1/(2n)."""
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    return coins.value(p, k, 2 * n)


class Cil(Protocol):
    name = "cil"
    binary = False

    def __init__(self, n: int, t: Optional[int] = None, atomic: bool = True):
        super().__init__(n, n - 1 if t is None else t)
        if self.t > n - 1:
            raise ContractError(f"at most n-1 = {n - 1} crashes make sense, got t={self.t}")
        self.atomic = atomic
        self.advance_odds = 2 * n

    def options(self):
        return {"atomic": self.atomic}

    def initial_state(self, pid, value):
        return CilState(pid, value, 1, "write")

    def register_default(self, key):
        return EMPTY

    def halted(self, s):
        return s.phase == "done"

    def next_action(self, s):
        key = ("cil", s.pid)
        if s.phase == "write":
            return (WRITE, (key, CilRegister(s.preference, s.round)))
        if s.phase == "collect":
            return (READ, ("cil", s.idx))
        if s.phase == "flip":
            if self.atomic:
                up = cil_advance(s.round, s.maxround, 1)
                return (FLIPWRITE, (key, CilRegister(s.preference, s.round), CilRegister(s.preference, up), self.advance_odds))
            return (FLIP, self.advance_odds)
        return None

    def on_result(self, s, kind, arg, result):
        if kind == WRITE:
            return s._replace(phase="collect", idx=0, view=(), passes=s.passes + 1)
        if kind == READ:
            view = s.view + (result,)
            if len(view) < self.n:
                return s._replace(idx=s.idx + 1, view=view)
            outcome = cil_evaluate(view, s.preference)
            maxround = max(r.round for r in view)
            if isinstance(outcome, Decide):
                return s._replace(phase="done", view=view, maxround=maxround, output=outcome.value)
            return s._replace(phase="flip", view=view, maxround=maxround, preference=outcome.preference)
        if kind == FLIP:
            return s._replace(phase="write", round=cil_advance(s.round, s.maxround, result))
        if kind == FLIPWRITE:
            return s._replace(
                phase="collect", idx=0, view=(), passes=s.passes + 1,
                round=cil_advance(s.round, s.maxround, result),
            )
        raise ContractError(f"unexpected {kind} result for CIL")

    def raises_round(self, config, step) -> bool:
        """Does ``step`` publish a round above the actor's published one?"""
        if step.kind != WRITE:
            return False
        key, reg = step.arg
        return reg.round > config.registers.get(key, EMPTY).round

    def counters(self, config):
        passes = [s.passes for s in config.procs]
        return {"passes_total": sum(passes), "passes_max": max(passes)}

"""Round-ladder consensus over two growable columns of multi-writer bits,
parameterized by a shared coin.

Per round a process marks mark[p][r], reads the opposite column at r+1,
r and r-1 (in that order), and concludes it is behind, tied, ahead, or far
enough ahead to decide.  Before moving to r+1 it keeps its old preference
if somebody with that preference already marked r+1.
"""

from __future__ import annotations

from typing import Any, NamedTuple, Optional

from .brcoin import ZERO, BrMachine
from .core import FLIP, READBIT, SETBIT, ConfigurationError, ContractError, Protocol

BEHIND = "behind"
TIED = "tied"
AHEAD = "ahead"
CLEAR = "clear"


def ladder_classify(behind: bool, tied: bool, ahead: bool) -> str:
    if behind:
        return BEHIND
    if tied:
        return TIED
    if ahead:
        return AHEAD
    return CLEAR


class LadderState(NamedTuple):
    p: int
    r: int
    p_new: Optional[int]
    phase: str  # write, behind, tied, ahead, coin, commit, done
    coin: Any = None
    coin_slot: Any = None  # opaque token owned by the coin; the ladder never reads it
    output: Optional[int] = None
    grid_ops: int = 0


# -- coins -----------------------------------------------------------------

class SharedCoinHandle:
    """A family of coin instances, one per round.

    Instances are step machines: ``begin`` creates the sub-state of one
    process joining round r's coin, ``action``/``advance`` drive it, and
    ``result`` is its bit once finished.
    """

    def bind(self, n: int):
        return self

    def slot(self, pid: int):
        return None

    def for_round(self, r: int) -> "SharedCoinHandle":
        return self

    def begin(self, r: int, slot):
        raise NotImplementedError

    def action(self, sub):
        return None

    def advance(self, sub, kind, arg, result):
        raise ContractError(f"{self!r} takes no steps")

    def result(self, sub) -> Optional[int]:
        raise NotImplementedError

    def pending_vote(self, sub) -> Optional[int]:
        return None

    def in_final_scan(self, sub) -> bool:
        return False


class DeterministicCoin(SharedCoinHandle):
    def __init__(self, value: int):
        if value not in (0, 1):
            raise ConfigurationError(f"coin value must be 0 or 1, got {value}")
        self.value = value

    def begin(self, r, slot):
        return ("fixed", self.value)

    def result(self, sub):
        return sub[1]

    def __repr__(self):
        return f"DeterministicCoin({self.value})"


def make_deterministic_coin(value: int) -> DeterministicCoin:
    return DeterministicCoin(value)


class LocalCoin(SharedCoinHandle):
    """Each caller flips its own fair coin: the weakest possible shared coin."""

    def begin(self, r, slot):
        return ("local", None)

    def action(self, sub):
        return (FLIP, None) if sub[1] is None else None

    def advance(self, sub, kind, arg, result):
        return ("local", result)

    def result(self, sub):
        return sub[1]

    def __repr__(self):
        return "LocalCoin()"


class BrSharedCoin(SharedCoinHandle):
    """The voting coin, with one register array per round."""

    def __init__(self):
        self.machine = None

    def bind(self, n):
        h = BrSharedCoin()
        h.machine = BrMachine(n)
        return h

    def slot(self, pid):
        return pid

    def begin(self, r, slot):
        return self.machine.begin(r, slot)

    def action(self, sub):
        return self.machine.action(sub)

    def advance(self, sub, kind, arg, result):
        return self.machine.advance(sub, kind, arg, result)

    def result(self, sub):
        return sub.output

    def pending_vote(self, sub):
        return self.machine.pending_vote(sub)

    def in_final_scan(self, sub):
        return self.machine.in_final_scan(sub)

    def __repr__(self):
        return "BrSharedCoin()"


class PerRoundCoin(SharedCoinHandle):
    """``default`` everywhere except rounds listed in ``overrides``."""

    def __init__(self, default: SharedCoinHandle, overrides: dict):
        self.default = default
        self.overrides = dict(overrides)

    def bind(self, n):
        return PerRoundCoin(self.default.bind(n), {r: h.bind(n) for r, h in self.overrides.items()})

    def slot(self, pid):
        return pid

    def for_round(self, r):
        return self.overrides.get(r, self.default)

    def __repr__(self):
        return f"PerRoundCoin({self.default!r}, {self.overrides!r})"


# -- protocol --------------------------------------------------------------

class Ladder(Protocol):
    name = "ladder"

    def __init__(self, n: int, t: Optional[int] = None, coin: Optional[SharedCoinHandle] = None):
        super().__init__(n, n - 1 if t is None else t)
        self.coin = (coin if coin is not None else BrSharedCoin()).bind(n)
        if isinstance(self.coin, BrSharedCoin):
            self.name = "ladder-br"

    def options(self):
        return {"coin": repr(self.coin)}

    def initial_state(self, pid, value):
        if value not in (0, 1):
            raise ConfigurationError(f"the ladder is binary; got input {value!r}")
        return LadderState(value, 1, None, "write", coin_slot=self.coin.slot(pid))

    def initial_registers(self):
        return {("mark", 0, 0): True, ("mark", 1, 0): True}

    def register_default(self, key):
        if key[0] == "br":
            return ZERO
        return False

    def halted(self, s):
        return s.phase == "done"

    def round_of(self, s):
        return s.r

    def next_action(self, s):
        ph = s.phase
        if ph == "write":
            return (SETBIT, (s.p, s.r))
        if ph == "behind":
            return (READBIT, (1 - s.p, s.r + 1))
        if ph == "tied":
            return (READBIT, (1 - s.p, s.r))
        if ph == "ahead":
            return (READBIT, (1 - s.p, s.r - 1))
        if ph == "commit":
            return (READBIT, (s.p, s.r + 1))
        if ph == "coin":
            return self.coin.for_round(s.r).action(s.coin)
        return None

    def on_result(self, s, kind, arg, result):
        ph = s.phase
        if ph == "coin":
            handle = self.coin.for_round(s.r)
            sub = handle.advance(s.coin, kind, arg, result)
            return self._after_coin(s._replace(coin=sub), handle)
        ops = s.grid_ops + 1
        if ph == "write":
            return s._replace(phase="behind", grid_ops=ops)
        if ph == "behind":
            if result:
                return s._replace(phase="commit", p_new=1 - s.p, grid_ops=ops)
            return s._replace(phase="tied", grid_ops=ops)
        if ph == "tied":
            if result:
                handle = self.coin.for_round(s.r)
                sub = handle.begin(s.r, s.coin_slot)
                return self._after_coin(s._replace(phase="coin", coin=sub, grid_ops=ops), handle)
            return s._replace(phase="ahead", grid_ops=ops)
        if ph == "ahead":
            if result:
                return s._replace(phase="commit", p_new=s.p, grid_ops=ops)
            return s._replace(phase="done", output=s.p, grid_ops=ops)
        if ph == "commit":
            p = s.p if result else s.p_new
            return s._replace(p=p, r=s.r + 1, p_new=None, phase="write", grid_ops=0)
        raise ContractError(f"unexpected {kind} result in ladder phase {ph}")

    def _after_coin(self, s, handle):
        bit = handle.result(s.coin)
        if bit is None:
            return s
        return s._replace(phase="commit", p_new=bit, coin=None)

    def pending_vote(self, s):
        if s.phase != "coin":
            return None
        return self.coin.for_round(s.r).pending_vote(s.coin)

    def in_final_scan(self, s):
        return s.phase == "coin" and self.coin.for_round(s.r).in_final_scan(s.coin)

    def state_key(self, s):
        return s

    def invariant_violations(self, config):
        bad = []
        if any(s.grid_ops > 5 for s in config.procs):
            bad.append("grid-ops-per-round")
        if not (config.registers.get(("mark", 0, 0)) and config.registers.get(("mark", 1, 0))):
            bad.append("mark-row-zero")
        return bad

    def counters(self, config):
        flips = sum(v.flips for k, v in config.registers.items() if k[0] == "br")
        return {"br_flips": flips}


def ladder_round(state: LadderState, grid: dict, coin: SharedCoinHandle) -> tuple:
    """One whole round of a process run in isolation against a fixed grid.

    Returns ("decided", p) or ("next", new_state).  The coin must finish
    without steps (deterministic).  Mutates ``grid`` with this round's mark.
    """
    p, r = state.p, state.r
    grid[(p, r)] = True
    kind = ladder_classify(grid.get((1 - p, r + 1), False), grid.get((1 - p, r), False), grid.get((1 - p, r - 1), False))
    if kind == CLEAR:
        return ("decided", p)
    if kind == BEHIND:
        p_new = 1 - p
    elif kind == AHEAD:
        p_new = p
    else:
        handle = coin.for_round(r)
        p_new = handle.result(handle.begin(r, None))
        if p_new is None:
            raise ContractError("ladder_round needs a coin that finishes without steps")
    if not grid.get((p, r + 1), False):
        p = p_new
    return ("next", state._replace(p=p, r=r + 1, p_new=None))

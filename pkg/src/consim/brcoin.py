"""The BR weak shared coin.

Processes cast local fair votes in batches of n / log2 n, publishing a
running (flips, ones) pair in their own register, and check after every
batch whether more than n^2 votes have been written.  Once they have, a
fresh scan decides the coin by the majority of ones.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

from .core import FLIP, READ, WRITE, ContractError, Protocol


class VoteRegister(NamedTuple):
    flips: int
    ones: int


ZERO = VoteRegister(0, 0)


class BrState(NamedTuple):
    slot: int
    instance: int
    phase: str  # flip, write, scan, final, done
    batch_left: int
    flips: int = 0
    ones: int = 0
    c: Optional[int] = None
    idx: int = 0
    scan_total: int = 0
    scan_ones: int = 0
    output: Optional[int] = None


def batch_size(n: int) -> int:
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    if n <= 2:
        return n
    return max(1, int(n // math.log2(n)))


def br_termination_scan(view, n: int) -> bool:
    """True (finish) iff more than n^2 votes are visible."""
    return sum(r.flips for r in view) > n * n


def br_output(view) -> int:
    total = sum(r.flips for r in view)
    ones = sum(r.ones for r in view)
    if total == 0:
        raise ContractError("final scan saw no votes")
    return 1 if 2 * ones >= total else 0


def br_vote(register: VoteRegister, c: int) -> VoteRegister:
    return VoteRegister(register.flips + 1, register.ones + c)


def register_key(instance: int, slot: int):
    return ("br", instance, slot)


class BrMachine:
    """Shared-coin subprotocol as a step machine; embedded by the ladder."""

    def __init__(self, n: int):
        self.n = n
        self.batch = batch_size(n)
        self.threshold = n * n

    def begin(self, instance: int, slot: int) -> BrState:
        return BrState(slot, instance, "flip", self.batch)

    def action(self, s: BrState):
        if s.phase == "flip":
            return (FLIP, None)
        if s.phase == "write":
            return (WRITE, (register_key(s.instance, s.slot), VoteRegister(s.flips + 1, s.ones + s.c)))
        if s.phase in ("scan", "final"):
            return (READ, register_key(s.instance, s.idx))
        return None

    def advance(self, s: BrState, kind, arg, result) -> BrState:
        if kind == FLIP:
            return s._replace(phase="write", c=result)
        if kind == WRITE:
            reg = br_vote(VoteRegister(s.flips, s.ones), s.c)
            left = s.batch_left - 1
            if left > 0:
                return s._replace(phase="flip", flips=reg.flips, ones=reg.ones, c=None, batch_left=left)
            return s._replace(phase="scan", flips=reg.flips, ones=reg.ones, c=None, batch_left=0,
                              idx=0, scan_total=0, scan_ones=0)
        if kind == READ:
            total = s.scan_total + result.flips
            ones = s.scan_ones + result.ones
            if s.idx + 1 < self.n:
                return s._replace(idx=s.idx + 1, scan_total=total, scan_ones=ones)
            if s.phase == "scan":
                if total > self.threshold:
                    return s._replace(phase="final", idx=0, scan_total=0, scan_ones=0)
                return s._replace(phase="flip", batch_left=self.batch, idx=0, scan_total=0, scan_ones=0)
            out = br_output([VoteRegister(total, ones)])
            return s._replace(phase="done", scan_total=total, scan_ones=ones, output=out)
        raise ContractError(f"unexpected {kind} result for the shared coin")

    def pending_vote(self, s: Optional[BrState]) -> Optional[int]:
        if s is not None and s.phase == "write":
            return s.c
        return None

    def in_final_scan(self, s: Optional[BrState]) -> bool:
        return s is not None and s.phase == "final"


class BrCoin(Protocol):
    """The coin on its own: every process outputs a bit; agreement is not promised."""

    name = "br-coin"
    consensus = False

    def __init__(self, n: int, t: Optional[int] = None):
        super().__init__(n, n - 1 if t is None else t)
        self.machine = BrMachine(n)

    def initial_state(self, pid, value):
        return self.machine.begin(0, pid)

    def register_default(self, key):
        return ZERO

    def next_action(self, s):
        return self.machine.action(s)

    def on_result(self, s, kind, arg, result):
        return self.machine.advance(s, kind, arg, result)

    def halted(self, s):
        return s.phase == "done"

    def round_of(self, s):
        return 1

    def pending_vote(self, s):
        return self.machine.pending_vote(s)

    def in_final_scan(self, s):
        return self.machine.in_final_scan(s)

    def counters(self, config):
        return {"br_flips": sum(r.flips for r in config.registers.values())}


class VoteAccounting(NamedTuple):
    max_hidden: int
    threshold_step: Optional[int]
    common_votes: Optional[int]
    max_after_threshold: int
    batch: int


def vote_accounting(trace, n: int) -> VoteAccounting:
    """Replay the vote flips and writes of a standalone coin trace.

    Every flip in such a trace is a vote.  Common votes are the flips taken
    before the write that pushes the written total past n^2; "after
    threshold" counts each process's writes that follow that write.
    """
    threshold = n * n
    flips = [0] * n
    writes = [0] * n
    after = [0] * n
    written = 0
    max_hidden = 0
    t_step = None
    common = None
    for i, (step, _) in enumerate(trace):
        p = step.actor
        if step.kind == FLIP:
            flips[p] += 1
            max_hidden = max(max_hidden, flips[p] - writes[p])
        elif step.kind == WRITE:
            writes[p] += 1
            written += 1
            if t_step is not None:
                after[p] += 1
            elif written > threshold:
                t_step = i
                common = sum(flips)
    return VoteAccounting(max_hidden, t_step, common, max(after), batch_size(n))

"""Ben-Or's two-stage round protocol over asynchronous message passing.

Each round: broadcast a vote, wait for n - t votes, broadcast either a
ratify for a strict-majority value or a placeholder "?", wait for n - t of
those, then adopt/decide/flip.  Tolerates t < n/2 crashes.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

from .core import FLIP, SEND, ConfigurationError, ContractError, Protocol

VOTE = "vote"
RATIFY = "ratify"
QUESTION = "?"


class BenOrMsg(NamedTuple):
    stage: int
    round: int
    kind: str
    value: Optional[int]


class RatifyConflict(ContractError):
    """Ratify messages for both values arrived in one round."""


class BenOrState(NamedTuple):
    pref: int
    round: int
    phase: str  # send1, wait1, send2, wait2, flip, halted
    out: Optional[BenOrMsg]
    buf: frozenset  # (stage, round, sender, kind, value) saved for later
    output: Optional[int] = None
    decide_round: Optional[int] = None
    conflict: bool = False


def _same_stage(msgs, stage):
    keys = {(m.stage, m.round) for m in msgs}
    if len(keys) > 1:
        raise ContractError(f"messages from mixed stages/rounds: {sorted(keys)}")
    if keys and next(iter(keys))[0] != stage:
        raise ContractError(f"expected stage-{stage} messages, got {sorted(keys)}")


def stage1_tally(msgs, n: int) -> Optional[int]:
    """Value carried by strictly more than n/2 of the votes, else None."""
    msgs = list(msgs)
    _same_stage(msgs, 1)
    for v in (0, 1):
        if 2 * sum(1 for m in msgs if m.kind == VOTE and m.value == v) > n:
            return v
    return None


def stage2_resolve(msgs, t: int, coin: Optional[int] = None) -> tuple[Optional[int], Optional[int]]:
    """(new preference, decision) from a quorum of stage-2 messages.

    With only placeholders the preference is ``coin``; pass None to learn
    that a flip is needed (returns (None, None)).
    """
    msgs = list(msgs)
    _same_stage(msgs, 2)
    ratified = [m.value for m in msgs if m.kind == RATIFY]
    if not ratified:
        return coin, None
    if len(set(ratified)) > 1:
        raise RatifyConflict(f"ratify for both values: {sorted(ratified)}")
    v = ratified[0]
    return v, (v if len(ratified) > t else None)


class BenOr(Protocol):
    name = "ben-or"
    substrate = "message"
    symmetric = True

    def __init__(self, n: int, t: int, halting: bool = True):
        super().__init__(n, t)
        if not 2 * t < n:
            raise ConfigurationError(f"Ben-Or tolerates only t < n/2 crash failures (got n={n}, t={t})")
        self.halting = halting
        self.quorum = n - t

    def options(self):
        return {"halting": self.halting}

    def initial_state(self, pid, value):
        if value not in (0, 1):
            raise ConfigurationError(f"Ben-Or is binary; got input {value!r}")
        return BenOrState(value, 1, "send1", BenOrMsg(1, 1, VOTE, value), frozenset())

    def next_action(self, s):
        if s.phase == "send1" or s.phase == "send2":
            return (SEND, s.out)
        if s.phase == "flip":
            return (FLIP, None)
        return None

    def halted(self, s):
        return s.phase == "halted"

    def decided_in(self, s):
        return s.decide_round

    def _decides(self, ratify_count: int) -> bool:
        return ratify_count > self.t

    # phase machine

    def _stage_open(self, s, stage, r):
        """Would a (stage, r) message still be counted by ``s``?"""
        if s.phase == "halted" or r < s.round:
            return False
        if r > s.round:
            return True
        if stage == 1:
            return s.phase in ("send1", "wait1")
        return s.phase in ("send1", "wait1", "send2", "wait2")

    # Each sender broadcasts once per (stage, round), so duplicates never
    # reach a buffer and sender identities cannot influence the future.
    def state_key(self, s):
        return s._replace(buf=tuple(sorted((e[0], e[1], e[3], -1 if e[4] is None else e[4]) for e in s.buf)))

    def message_key(self, m):
        return (m.recipient, m.payload)

    def wants(self, s, payload):
        return self._stage_open(s, payload[0], payload[1])

    def on_message(self, s, sender, payload):
        stage, r, kind, value = payload
        if not self._stage_open(s, stage, r):
            return s
        if any(e[0] == stage and e[1] == r and e[2] == sender for e in s.buf):
            return s
        s = s._replace(buf=s.buf | {(stage, r, sender, kind, value)})
        return self._check_quorum(s)

    def _collected(self, s, stage):
        return [BenOrMsg(e[0], e[1], e[3], e[4]) for e in s.buf if e[0] == stage and e[1] == s.round]

    def _check_quorum(self, s):
        if s.phase == "wait1":
            msgs = self._collected(s, 1)
            if len(msgs) < self.quorum:
                return s
            v = stage1_tally(msgs, self.n)
            out = BenOrMsg(2, s.round, RATIFY, v) if v is not None else BenOrMsg(2, s.round, QUESTION, None)
            buf = frozenset(e for e in s.buf if not (e[0] == 1 and e[1] == s.round))
            return s._replace(phase="send2", out=out, buf=buf)
        if s.phase == "wait2":
            msgs = self._collected(s, 2)
            if len(msgs) < self.quorum:
                return s
            conflict = s.conflict
            try:
                pref, _ = stage2_resolve(msgs, self.t)
            except RatifyConflict:
                conflict = True
                ones = sum(1 for m in msgs if m.kind == RATIFY and m.value == 1)
                zeros = sum(1 for m in msgs if m.kind == RATIFY and m.value == 0)
                pref = 1 if ones >= zeros else 0
            s = s._replace(conflict=conflict)
            if pref is None:
                return s._replace(phase="flip")
            count = sum(1 for m in msgs if m.kind == RATIFY and m.value == pref)
            if self._decides(count):
                if s.output is None:
                    s = s._replace(output=pref, decide_round=s.round)
                elif s.output != pref:
                    s = s._replace(output=pref)
            return self._next_round(s, pref)
        return s

    def _next_round(self, s, pref):
        r = s.round + 1
        buf = frozenset(e for e in s.buf if e[1] >= r)
        return s._replace(pref=pref, round=r, phase="send1", out=BenOrMsg(1, r, VOTE, pref), buf=buf)

    def on_result(self, s, kind, arg, result):
        if kind == SEND:
            if s.phase == "send1":
                return self._check_quorum(s._replace(phase="wait1", out=None))
            if self.halting and s.output is not None and s.round > s.decide_round:
                return s._replace(phase="halted", out=None)
            return self._check_quorum(s._replace(phase="wait2", out=None))
        if kind == FLIP:
            return self._next_round(s, result)
        raise ContractError(f"unexpected {kind} result for Ben-Or")

    def counters(self, config):
        return {"messages": config.next_msg_id}

    def invariant_violations(self, config):
        bad = []
        if any(s.conflict for s in config.procs):
            bad.append("ratify-conflict")
        if any(len(vs) > 1 for vs in ratified_values(config).values()):
            bad.append("two-values-ratified")
        return bad


def ratified_values(config) -> dict:
    """round -> set of values some visible ratify message carries.

    Looks at pending broadcasts, undelivered messages and receive buffers.
    """
    seen: dict = {}

    def note(stage, r, kind, value):
        if stage == 2 and kind == RATIFY:
            seen.setdefault(r, set()).add(value)

    for s in config.procs:
        if s.out is not None:
            note(*s.out)
        for e in s.buf:
            note(e[0], e[1], e[3], e[4])
    for m in config.pool.values():
        note(*m.payload)
    return seen

"""Execution fabric shared by every protocol.

A run is a loop: the adversary looks at the (projected) partial execution,
picks one of the enabled steps, and the engine applies it.  Coin flips are
drawn from a counter-based source so the k-th flip of process p never
depends on the schedule.
"""

from __future__ import annotations

from collections import Counter

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Optional

MASK64 = (1 << 64) - 1

# step kinds
SEND = "send"
DELIVER = "deliver"
READ = "read"
WRITE = "write"
SETBIT = "setbit"
READBIT = "readbit"
FLIP = "flip"
FLIPWRITE = "flipwrite"
LOCAL = "local"
CRASH = "crash"

LOCAL_KINDS = frozenset({SEND, READ, WRITE, SETBIT, READBIT, FLIP, FLIPWRITE, LOCAL})
COIN_KINDS = frozenset({FLIP, FLIPWRITE})


class ConsimError(Exception):
    pass


class ConfigurationError(ConsimError):
    """Run parameters violate a protocol precondition."""


class ContractError(ConsimError):
    """An operation was invoked outside its contract."""


class AdversaryContractError(ContractError):
    """The adversary returned a step that is not enabled."""


class VisibilityError(ContractError):
    """A strategy asked for information its visibility level hides."""


class Step(NamedTuple):
    actor: int
    kind: str
    arg: Any = None


class Message(NamedTuple):
    id: int
    sender: int
    recipient: int
    payload: Any


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *salt: int) -> int:
    h = splitmix64(seed & MASK64)
    for s in salt:
        h = splitmix64(h ^ (s & MASK64))
    return h


class CoinSource:
    """Counter-based fair coins: bit j of flip k of process p is a pure
    function of (master_seed, p, k, j).

    ``value(p, k, m)`` returns 1 with probability 1/m.  m == 2 is a single
    fair bit.  Other m use rejection sampling over ceil(log2 m) bits per
    attempt; after 32 rejected attempts the draw falls back to 0, which
    biases the result by less than 2**-32.
    """

    MAX_ATTEMPTS = 32

    def __init__(self, master_seed: int):
        self.master_seed = master_seed & MASK64

    def bit(self, p: int, k: int, j: int = 0) -> int:
        return derive_seed(self.master_seed, p, k, j) >> 63

    def value(self, p: int, k: int, m: int = 2) -> int:
        if m == 2:
            return self.bit(p, k)
        if m < 1:
            raise ContractError(f"coin denominator must be >= 1, got {m}")
        if m == 1:
            return 1
        width = (m - 1).bit_length()
        j = 0
        for _ in range(self.MAX_ATTEMPTS):
            # u == 0 exactly when every bit of the attempt came up 1
            u = 0
            for i in range(width):
                u |= (1 - self.bit(p, k, j)) << i
                j += 1
            if u < m:
                return int(u == 0)
        return 0

    def __repr__(self):
        return f"CoinSource({self.master_seed:#x})"


class FixedCoins:
    """Coin source backed by an explicit (process, draw-index) -> value map."""

    def __init__(self, assignment: dict[tuple[int, int], int], default: Optional[int] = None):
        self.assignment = dict(assignment)
        self.default = default

    def value(self, p: int, k: int, m: int = 2) -> int:
        try:
            return self.assignment[(p, k)]
        except KeyError:
            if self.default is None:
                raise ContractError(f"no coin assigned for process {p}, draw {k}") from None
            return self.default


class ForcedCoin:
    """Every draw returns the same value; the explorer branches with two of these."""

    __slots__ = ("b",)

    def __init__(self, b: int):
        self.b = b

    def value(self, p: int, k: int, m: int = 2) -> int:
        return self.b


class Protocol:
    """Base class for a configured protocol instance.

    Subclasses describe one process as a state machine over immutable
    (hashable) states.  ``next_action`` names the single local operation a
    process wants to perform next, or None while it is waiting for messages
    or is finished.  The engine executes the operation and hands the
    observable result back through ``on_result``.
    """

    name = "protocol"
    substrate = "memory"  # or "message"
    binary = True
    # False for subprotocols (the coin) that promise no agreement
    consensus = True
    # True when renaming processes maps runs to runs: states carry no
    # process ids (after state_key) and registers are not per-process.
    # The explorer then identifies configurations up to renaming.
    symmetric = False

    def __init__(self, n: int, t: int):
        if n < 1:
            raise ConfigurationError(f"n must be >= 1, got {n}")
        if t < 0:
            raise ConfigurationError(f"t must be >= 0, got {t}")
        self.n = n
        self.t = t

    def initial_state(self, pid: int, value: Any):
        raise NotImplementedError

    def initial_registers(self) -> dict:
        return {}

    def register_default(self, key) -> Any:
        return None

    def next_action(self, state) -> Optional[tuple]:
        raise NotImplementedError

    def on_result(self, state, kind: str, arg, result):
        raise NotImplementedError

    def on_message(self, state, sender: int, payload):
        raise ContractError(f"{self.name} does not receive messages")

    def state_key(self, state):
        """Projection of a process state used for memoization."""
        return state

    def message_key(self, m: "Message"):
        return (m.sender, m.recipient, m.payload)

    def wants(self, state, payload) -> bool:
        """False when delivering ``payload`` now cannot change ``state``."""
        return True

    def decision(self, state) -> Optional[Any]:
        return getattr(state, "output", None)

    def round_of(self, state) -> int:
        return getattr(state, "round", 0)

    def decided_in(self, state) -> int:
        return self.round_of(state)

    def halted(self, state) -> bool:
        return False

    def counters(self, config: "SystemConfig") -> dict:
        return {}

    def options(self) -> dict:
        return {}


@dataclass
class SystemConfig:
    n: int
    t: int
    procs: list
    alive: list
    pool: dict = field(default_factory=dict)
    registers: dict = field(default_factory=dict)
    decided: list = field(default_factory=list)
    decide_round: list = field(default_factory=list)
    coin_counts: list = field(default_factory=list)
    crashed: int = 0
    next_msg_id: int = 0
    irrevocability_violation: bool = False

    @classmethod
    def initial(cls, protocol: Protocol, inputs: Iterable) -> "SystemConfig":
        inputs = list(inputs)
        n = protocol.n
        if len(inputs) != n:
            raise ConfigurationError(f"expected {n} inputs, got {len(inputs)}")
        return cls(
            n=n,
            t=protocol.t,
            procs=[protocol.initial_state(p, v) for p, v in enumerate(inputs)],
            alive=[True] * n,
            registers=protocol.initial_registers(),
            decided=[None] * n,
            decide_round=[None] * n,
            coin_counts=[0] * n,
        )

    def clone(self) -> "SystemConfig":
        return SystemConfig(
            n=self.n,
            t=self.t,
            procs=list(self.procs),
            alive=list(self.alive),
            pool=dict(self.pool),
            registers=dict(self.registers),
            decided=list(self.decided),
            decide_round=list(self.decide_round),
            coin_counts=list(self.coin_counts),
            crashed=self.crashed,
            next_msg_id=self.next_msg_id,
            irrevocability_violation=self.irrevocability_violation,
        )

    def key(self, protocol: Optional[Protocol] = None):
        """Hashable identity of the configuration, ignoring message ids.

        With a protocol, states and messages go through its projections,
        messages whose delivery is a no-op are left out, and a crashed
        process is reduced to its decision.
        """
        if protocol is None:
            msgs = [(m.sender, m.recipient, m.payload) for m in self.pool.values()]
            procs = tuple(self.procs)
        elif protocol.symmetric:
            return self._symmetric_key(protocol)
        else:
            msgs = []
            for m in self.pool.values():
                r = m.recipient
                if self.alive[r] and protocol.wants(self.procs[r], m.payload):
                    msgs.append(protocol.message_key(m))
            procs = tuple(
                protocol.state_key(s) if a else ("crashed", d)
                for s, a, d in zip(self.procs, self.alive, self.decided)
            )
        # multisets: order-free and cheaper than sorting mixed-type payloads
        bag = frozenset(Counter(msgs).items())
        regs = frozenset(self.registers.items())
        return (procs, tuple(self.alive), bag, regs, self.crashed, sum(self.coin_counts))

    def _symmetric_key(self, protocol):
        inbox: list = [[] for _ in self.procs]
        for m in self.pool.values():
            r = m.recipient
            if self.alive[r] and protocol.wants(self.procs[r], m.payload):
                inbox[r].append(m.payload)
        entries = []
        for p, s in enumerate(self.procs):
            if self.alive[p]:
                entries.append((protocol.state_key(s), frozenset(Counter(inbox[p]).items())))
            else:
                entries.append(("crashed", self.decided[p]))
        regs = frozenset(self.registers.items())
        return ("sym", frozenset(Counter(entries).items()), regs, self.crashed, sum(self.coin_counts))

    def all_decided(self) -> bool:
        return all(d is not None for d, a in zip(self.decided, self.alive) if a)


def active(config: SystemConfig, protocol: Protocol, p: int, max_rounds: Optional[int] = None) -> bool:
    if not config.alive[p]:
        return False
    s = config.procs[p]
    if protocol.halted(s):
        return False
    if max_rounds is not None and protocol.round_of(s) > max_rounds:
        return False
    return True


def enabled_steps(config: SystemConfig, protocol: Protocol, max_rounds: Optional[int] = None) -> list[Step]:
    """Every step some alive process could take next, in a fixed order:
    local actions by process id, deliveries by message id, then crashes."""
    act = [active(config, protocol, p, max_rounds) for p in range(config.n)]
    steps = []
    for p in range(config.n):
        if act[p]:
            a = protocol.next_action(config.procs[p])
            if a is not None:
                steps.append(Step(p, a[0], a[1]))
    for m in config.pool.values():
        if act[m.recipient]:
            steps.append(Step(m.recipient, DELIVER, m.id))
    if config.crashed < config.t:
        for p in range(config.n):
            if act[p]:
                steps.append(Step(p, CRASH))
    return steps


def apply_step(config: SystemConfig, step: Step, coins, protocol: Protocol):
    """Apply ``step`` to ``config`` in place and return (config, result)."""
    p, kind, arg = step
    if not 0 <= p < config.n:
        raise ContractError(f"no such process {p}")
    if not config.alive[p]:
        raise ContractError(f"process {p} has crashed")
    state = config.procs[p]
    if protocol.halted(state):
        raise ContractError(f"process {p} has halted")

    result = None
    if kind == CRASH:
        if config.crashed >= config.t:
            raise ContractError(f"fault budget t={config.t} exhausted")
        config.alive[p] = False
        config.crashed += 1
        return config, None

    if kind == DELIVER:
        m = config.pool.get(arg)
        if m is None or m.recipient != p:
            raise ContractError(f"message {arg} is not deliverable to {p}")
        del config.pool[arg]
        result = (m.sender, m.payload)
        state = protocol.on_message(state, m.sender, m.payload)
    else:
        action = protocol.next_action(state)
        if action is None or action[0] != kind or action[1] != arg:
            raise ContractError(f"step {step} is not the pending action {action} of process {p}")
        regs = config.registers
        if kind == SEND:
            mid = config.next_msg_id
            for q in range(config.n):
                config.pool[mid] = Message(mid, p, q, arg)
                mid += 1
            config.next_msg_id = mid
        elif kind == READ:
            result = regs[arg] if arg in regs else protocol.register_default(arg)
        elif kind == WRITE:
            regs[arg[0]] = arg[1]
        elif kind == SETBIT:
            regs[("mark",) + tuple(arg)] = True
        elif kind == READBIT:
            result = regs.get(("mark",) + tuple(arg), False)
        elif kind == FLIP:
            k = config.coin_counts[p]
            result = coins.value(p, k, arg or 2)
            config.coin_counts[p] = k + 1
        elif kind == FLIPWRITE:
            key, if0, if1, m = arg
            k = config.coin_counts[p]
            result = coins.value(p, k, m)
            config.coin_counts[p] = k + 1
            regs[key] = if1 if result else if0
        state = protocol.on_result(state, kind, arg, result)

    config.procs[p] = state
    d = protocol.decision(state)
    if d is not None or config.decided[p] is not None:
        if config.decided[p] is None:
            config.decided[p] = d
            config.decide_round[p] = protocol.decided_in(state)
        elif d != config.decided[p]:
            config.irrevocability_violation = True
    return config, result


@dataclass
class TrialReport:
    protocol: str
    n: int
    t: int
    inputs: list
    decisions: list
    decide_rounds: list
    rounds: list
    total_steps: int
    terminated: bool
    crashed: list
    agreement_violation: bool
    validity_violation: bool
    irrevocability_violation: bool
    counters: dict = field(default_factory=dict)
    trace: Optional[list] = field(default=None, repr=False, compare=False)

    @property
    def decision(self):
        """The common decision, or None if nobody decided or deciders disagree."""
        vals = {d for d in self.decisions if d is not None}
        if len(vals) == 1:
            return next(iter(vals))
        return None

    @property
    def max_round(self) -> int:
        rs = [r for r in self.decide_rounds if r is not None]
        return max(rs) if rs else max(self.rounds)

    @property
    def safe(self) -> bool:
        return not (self.agreement_violation or self.validity_violation or self.irrevocability_violation)


def check_safety(config: SystemConfig, inputs, protocol: Optional[Protocol] = None) -> tuple[bool, bool]:
    """(agreement_violated, validity_violated) for the decisions in ``config``.

    Protocols that are not consensus protocols (a bare shared coin) promise
    neither, so nothing is flagged for them.
    """
    if protocol is not None and not protocol.consensus:
        return False, False
    vals = {d for d in config.decided if d is not None}
    agreement = len(vals) > 1
    validity = any(v not in inputs for v in vals)
    return agreement, validity


def run(protocol: Protocol, inputs, adversary, coins, max_steps: int, keep_trace: bool = False) -> TrialReport:
    """Drive adversary-choose / apply until every alive process has decided
    or ``max_steps`` steps have been taken."""
    from .adversaries import View  # circular at import time

    inputs = list(inputs)
    config = SystemConfig.initial(protocol, inputs)
    adversary.bind(protocol)
    trace: list = []
    steps = 0
    while not config.all_decided() and steps < max_steps:
        enabled = enabled_steps(config, protocol)
        if not enabled:
            break
        view = View(adversary.visibility, config, trace, protocol)
        choice = adversary.choose(view, enabled)
        if choice not in enabled:
            raise AdversaryContractError(f"{adversary!r} chose {choice}, which is not enabled")
        _, result = apply_step(config, choice, coins, protocol)
        trace.append((choice, result))
        steps += 1

    agreement, validity = check_safety(config, inputs, protocol)
    return TrialReport(
        protocol=protocol.name,
        n=protocol.n,
        t=protocol.t,
        inputs=inputs,
        decisions=list(config.decided),
        decide_rounds=list(config.decide_round),
        rounds=[protocol.round_of(s) for s in config.procs],
        total_steps=steps,
        terminated=config.all_decided(),
        crashed=[not a for a in config.alive],
        agreement_violation=agreement,
        validity_violation=validity,
        irrevocability_violation=config.irrevocability_violation,
        counters=protocol.counters(config),
        trace=trace if keep_trace else None,
    )


# -- trace dump -------------------------------------------------------------

def _tok(x) -> str:
    if x is None:
        return "-"
    return json.dumps(x, separators=(",", ":"))


def _untok(s: str):
    if s == "-":
        return None
    return json.loads(s)


def dump_trace(trace, header: Optional[dict] = None) -> str:
    """One step per line: ``seq actor action arg result``."""
    lines = []
    if header is not None:
        lines.append("# " + json.dumps(header, sort_keys=True))
    for seq, (step, result) in enumerate(trace):
        lines.append(f"{seq} {step.actor} {step.kind} {_tok(step.arg)} {_tok(result)}")
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> tuple[Optional[dict], list]:
    header = None
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            header = json.loads(line[1:])
            continue
        seq, actor, kind, arg, result = line.split(" ", 4)
        rows.append((int(seq), int(actor), kind, _untok(arg), _untok(result)))
    return header, rows


def same_arg(a, b) -> bool:
    return _tok(a) == _tok(b)


def replay(protocol: Protocol, inputs, rows) -> tuple[SystemConfig, list]:
    """Re-execute parsed trace rows, taking coin values from the recorded results."""
    config = SystemConfig.initial(protocol, inputs)
    assignment = {}
    counts = [0] * protocol.n
    for _, actor, kind, _, result in rows:
        if kind in COIN_KINDS:
            assignment[(actor, counts[actor])] = result
            counts[actor] += 1
    coins = FixedCoins(assignment)
    trace = []
    for seq, actor, kind, arg, recorded in rows:
        match = None
        for s in enabled_steps(config, protocol):
            if s.actor == actor and s.kind == kind and same_arg(s.arg, arg):
                match = s
                break
        if match is None:
            raise ContractError(f"trace line {seq}: {actor} {kind} {_tok(arg)} is not enabled")
        _, result = apply_step(config, match, coins, protocol)
        if not same_arg(result, recorded):
            raise ContractError(f"trace line {seq}: result {_tok(result)} differs from recorded {_tok(recorded)}")
        trace.append((match, result))
    return config, trace

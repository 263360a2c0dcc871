import pytest
from hypothesis import given
from hypothesis import strategies as st

from consim.adversaries import RoundRobin, StrategyConfig, UniformRandom
from consim.benor import BenOr
from consim.brcoin import BrCoin
from consim.cil import Cil, CilRegister
from consim.core import (
    CRASH,
    DELIVER,
    FLIP,
    READ,
    SEND,
    WRITE,
    AdversaryContractError,
    CoinSource,
    ConfigurationError,
    ContractError,
    FixedCoins,
    Step,
    SystemConfig,
    apply_step,
    derive_seed,
    dump_trace,
    enabled_steps,
    parse_trace,
    replay,
    run,
)
from consim.ladder import Ladder

seeds = st.integers(min_value=0, max_value=2**64 - 1)


def protocols():
    return st.sampled_from(["ben-or", "cil", "cil-split", "ladder", "br"]).map(_make)


def _make(name):
    return {
        "ben-or": lambda: (BenOr(3, 1), [0, 1, 1]),
        "cil": lambda: (Cil(3), [0, 1, 2]),
        "cil-split": lambda: (Cil(3, atomic=False), [2, 0, 0]),
        "ladder": lambda: (Ladder(3), [1, 0, 1]),
        "br": lambda: (BrCoin(3), [0, 0, 0]),
    }[name]()


# -- coins -----------------------------------------------------------------

@given(seeds, st.integers(0, 63), st.integers(0, 10**6), st.integers(0, 40))
def test_coin_bit_is_a_pure_function(seed, p, k, j):
    assert CoinSource(seed).bit(p, k, j) == CoinSource(seed).bit(p, k, j)
    assert CoinSource(seed).bit(p, k, j) in (0, 1)


@given(seeds, st.integers(0, 7), st.integers(0, 1000))
def test_fair_value_is_one_bit(seed, p, k):
    c = CoinSource(seed)
    assert c.value(p, k) == c.bit(p, k, 0)


@given(seeds, st.integers(0, 7), st.integers(0, 1000))
def test_quarter_needs_two_ones(seed, p, k):
    # 2n = 4 is a power of two: exactly one attempt of two bits, both 1
    c = CoinSource(seed)
    assert c.value(p, k, 4) == (c.bit(p, k, 0) & c.bit(p, k, 1))


def test_one_in_six_frequency():
    # n = 3: advancement probability 1/(2n) = 1/6 by rejection sampling
    c = CoinSource(20240917)
    draws = 1_000_000
    ones = sum(c.value(0, k, 6) for k in range(draws))
    assert abs(ones / draws - 1 / 6) <= 0.01


def test_coin_denominator_checked():
    with pytest.raises(ContractError):
        CoinSource(1).value(0, 0, 0)
    assert CoinSource(1).value(0, 0, 1) == 1


def test_derive_seed_depends_on_every_salt():
    base = derive_seed(5, 1, 2)
    assert base != derive_seed(5, 2, 1)
    assert base != derive_seed(6, 1, 2)
    assert base == derive_seed(5, 1, 2)


def test_fixed_coins():
    c = FixedCoins({(0, 0): 1})
    assert c.value(0, 0) == 1
    with pytest.raises(ContractError):
        c.value(0, 1)
    assert FixedCoins({}, default=0).value(3, 9, 6) == 0


# -- enabled steps and apply -----------------------------------------------

def test_benor_initial_steps():
    p = BenOr(3, 1)
    config = SystemConfig.initial(p, [0, 1, 1])
    steps = enabled_steps(config, p)
    assert sorted(s.kind for s in steps) == [CRASH] * 3 + [SEND] * 3
    assert {s.actor for s in steps} == {0, 1, 2}


def test_pooled_message_is_deliverable():
    p = BenOr(3, 1)
    config = SystemConfig.initial(p, [0, 0, 0])
    apply_step(config, Step(0, SEND, p.next_action(config.procs[0])[1]), CoinSource(0), p)
    delivers = [s for s in enabled_steps(config, p) if s.kind == DELIVER]
    assert len(delivers) == 3
    assert {s.actor for s in delivers} == {0, 1, 2}


def test_all_decided_means_no_steps():
    p = Cil(2)
    config = SystemConfig.initial(p, [7, 7])
    while not config.all_decided():
        first = next(x for x in enabled_steps(config, p) if x.kind != CRASH)
        apply_step(config, first, CoinSource(0), p)
    assert enabled_steps(config, p) == []


def test_flip_consumes_one_coin():
    p = BenOr(1, 0)
    config = SystemConfig.initial(p, [0])
    config.procs[0] = config.procs[0]._replace(phase="flip")
    coins = CoinSource(99)
    _, result = apply_step(config, Step(0, FLIP, None), coins, p)
    assert result == coins.value(0, 0)
    assert config.coin_counts == [1]


def test_crash_step():
    p = BenOr(3, 1)
    config = SystemConfig.initial(p, [0, 0, 0])
    apply_step(config, Step(1, CRASH, None), CoinSource(0), p)
    assert config.alive == [True, False, True]
    assert config.crashed == 1
    # budget spent: no more crash pseudo-steps, and crashed processes are frozen
    assert all(s.kind != CRASH for s in enabled_steps(config, p))
    assert all(s.actor != 1 for s in enabled_steps(config, p))
    with pytest.raises(ContractError):
        apply_step(config, Step(1, SEND, config.procs[1].out), CoinSource(0), p)
    with pytest.raises(ContractError):
        apply_step(config, Step(0, CRASH, None), CoinSource(0), p)


def test_write_then_read():
    p = Cil(2, atomic=False)
    config = SystemConfig.initial(p, [4, 5])
    apply_step(config, Step(0, WRITE, (("cil", 0), CilRegister(4, 1))), CoinSource(0), p)
    apply_step(config, Step(1, WRITE, (("cil", 1), CilRegister(5, 1))), CoinSource(0), p)
    _, got = apply_step(config, Step(1, READ, ("cil", 0)), CoinSource(0), p)
    assert got == CilRegister(4, 1)


def test_only_the_pending_action_applies():
    p = Cil(2)
    config = SystemConfig.initial(p, [0, 1])
    with pytest.raises(ContractError):
        apply_step(config, Step(0, READ, ("cil", 1)), CoinSource(0), p)


class _Rogue(RoundRobin):
    def choose(self, view, enabled):
        return Step(0, READ, ("nowhere",))


def test_adversary_must_choose_enabled():
    with pytest.raises(AdversaryContractError):
        run(Cil(2), [0, 1], _Rogue(), CoinSource(0), 10)


def test_configuration_errors():
    with pytest.raises(ConfigurationError):
        BenOr(4, 2)
    with pytest.raises(ConfigurationError):
        BenOr(3, 1).initial_state(0, 2)
    with pytest.raises(ConfigurationError):
        Ladder(2).initial_state(0, "x")


# -- run examples ------------------------------------------------------------

def test_ladder_solo_run():
    for adv in (RoundRobin(), UniformRandom(3)):
        r = run(Ladder(1), [1], adv, CoinSource(0), 100)
        assert r.terminated and r.decisions == [1]
        assert r.decide_rounds == [2]
        assert r.total_steps <= 12


def test_benor_unanimous_round_robin():
    r = run(BenOr(3, 1), [1, 1, 1], RoundRobin(), CoinSource(0), 10_000)
    assert r.terminated
    assert r.decisions == [1, 1, 1]
    assert r.decide_rounds == [1, 1, 1]


def test_cil_lockstep_split_never_terminates():
    r = run(Cil(4, atomic=False), [0, 1, 0, 1], StrategyConfig("lockstep").build(3), CoinSource(1), 10_000)
    assert not r.terminated
    assert r.decisions == [None] * 4


# -- properties --------------------------------------------------------------

adversaries = st.sampled_from(["round-robin", "uniform", "lockstep", "vote-hider"])


@given(protocols(), adversaries, seeds, st.integers(0, 2**32))
def test_replay_determinism(proto_inputs, kind, seed, adv_seed):
    proto, inputs = proto_inputs
    a = run(proto, inputs, StrategyConfig(kind, seed=adv_seed).build(proto.t), CoinSource(seed), 3000, keep_trace=True)
    b = run(proto, inputs, StrategyConfig(kind, seed=adv_seed).build(proto.t), CoinSource(seed), 3000, keep_trace=True)
    assert a == b
    assert a.trace == b.trace
    # step accounting
    assert a.total_steps == len(a.trace)


@given(protocols(), seeds, st.integers(0, 2**32), st.integers(0, 2**32))
def test_coins_do_not_depend_on_the_schedule(proto_inputs, seed, s1, s2):
    proto, inputs = proto_inputs
    coins = CoinSource(seed)
    for adv_seed in (s1, s2):
        r = run(proto, inputs, UniformRandom(adv_seed), coins, 2000, keep_trace=True)
        counts: dict = {}
        for step, result in r.trace:
            if step.kind in (FLIP, "flipwrite"):
                k = counts.get(step.actor, 0)
                m = step.arg if step.kind == FLIP else step.arg[3]
                assert result == coins.value(step.actor, k, m or 2)
                counts[step.actor] = k + 1


@given(protocols(), seeds, st.integers(0, 2**32), st.lists(st.tuples(st.integers(0, 400), st.integers(0, 2)), max_size=3))
def test_irrevocability_and_fault_budget(proto_inputs, seed, adv_seed, plan):
    proto, inputs = proto_inputs
    plan = tuple(plan[: proto.t])
    strat = StrategyConfig("uniform", seed=adv_seed, crash_plan=plan).build(proto.t)
    r = run(proto, inputs, strat, CoinSource(seed), 3000, keep_trace=True)
    assert sum(1 for s, _ in r.trace if s.kind == CRASH) <= proto.t
    assert not r.irrevocability_violation
    # replay step by step: each decided slot goes empty -> value exactly once
    config = SystemConfig.initial(proto, inputs)
    for step, _ in r.trace:
        before = list(config.decided)
        apply_step(config, step, CoinSource(seed), proto)
        for x, y in zip(before, config.decided):
            assert x is None or x == y


def test_crash_plan_beyond_budget_is_rejected():
    with pytest.raises(ConfigurationError):
        StrategyConfig("round-robin", crash_plan=((1, 0), (2, 1))).build(1)


# -- trace format ------------------------------------------------------------

@given(protocols(), seeds)
def test_trace_dump_replays(proto_inputs, seed):
    proto, inputs = proto_inputs
    r = run(proto, inputs, UniformRandom(seed), CoinSource(seed), 1500, keep_trace=True)
    text = dump_trace(r.trace, {"inputs": inputs})
    header, rows = parse_trace(text)
    assert header == {"inputs": inputs}
    assert len(rows) == len(r.trace)
    config, trace = replay(proto, inputs, rows)
    assert [s for s, _ in trace] == [s for s, _ in r.trace]
    assert config.decided == r.decisions
    assert dump_trace(trace, header) == text


def test_trace_line_format():
    r = run(Ladder(1), [1], RoundRobin(), CoinSource(0), 100, keep_trace=True)
    first = dump_trace(r.trace).splitlines()[0]
    assert first == "0 0 setbit [1,1] -"


def test_tampered_trace_fails_replay():
    proto = Ladder(1)
    r = run(proto, [1], RoundRobin(), CoinSource(0), 100, keep_trace=True)
    _, rows = parse_trace(dump_trace(r.trace))
    seq, actor, kind, arg, result = rows[2]
    rows[2] = (seq, actor, kind, arg, not result)
    with pytest.raises(ContractError):
        replay(proto, [1], rows)

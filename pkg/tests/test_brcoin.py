import pytest
from hypothesis import given
from hypothesis import strategies as st

from consim.adversaries import StrategyConfig
from consim.brcoin import (
    ZERO,
    BrCoin,
    VoteRegister,
    batch_size,
    br_output,
    br_termination_scan,
    br_vote,
    vote_accounting,
)
from consim.core import FLIP, READ, WRITE, CoinSource, ContractError, run


def regs(*flips):
    return [VoteRegister(f, 0) for f in flips]


def test_batch_size():
    assert batch_size(16) == 4
    assert batch_size(2) == 2
    assert batch_size(1) == 1
    assert batch_size(8) == 2
    assert batch_size(4) == 2
    with pytest.raises(ContractError):
        batch_size(0)


@given(st.integers(1, 4096))
def test_batch_size_bounds(n):
    b = batch_size(n)
    assert 1 <= b <= n


def test_vote():
    assert br_vote(VoteRegister(4, 2), 1) == VoteRegister(5, 3)
    assert br_vote(ZERO, 0) == VoteRegister(1, 0)


def test_termination_scan():
    assert not br_termination_scan(regs(3, 3, 3), 3)
    assert br_termination_scan(regs(4, 3, 3), 3)
    assert br_termination_scan(regs(2), 1)


def test_output():
    assert br_output([VoteRegister(5, 3)]) == 1
    assert br_output([VoteRegister(4, 2)]) == 1
    assert br_output([VoteRegister(9, 4)]) == 0
    assert br_output([VoteRegister(4, 1), VoteRegister(5, 4)]) == 1
    with pytest.raises(ContractError):
        br_output([ZERO, ZERO])


strategies = st.sampled_from([
    StrategyConfig("round-robin"),
    StrategyConfig("uniform"),
    StrategyConfig("vote-hider", target_bit=0),
    StrategyConfig("vote-hider", target_bit=1),
    StrategyConfig("vote-hider", target_bit=1, crash=True),
])


@given(st.integers(1, 9), strategies, st.integers(0, 2**32))
def test_register_monotonicity_and_accounting(n, strat, seed):
    proto = BrCoin(n)
    r = run(proto, [0] * n, strat.with_seed(seed).build(proto.t), CoinSource(seed), 10**6, keep_trace=True)
    assert r.terminated
    last: dict = {}
    for step, _ in r.trace:
        if step.kind == WRITE:
            key, reg = step.arg
            prev = last.get(key, ZERO)
            assert prev.flips <= reg.flips and prev.ones <= reg.ones and reg.ones <= reg.flips
            last[key] = reg
    acc = vote_accounting(r.trace, n)
    assert acc.max_hidden <= 1
    assert acc.max_after_threshold <= batch_size(n)
    if not any(r.crashed):
        assert n * n + 1 <= acc.common_votes <= n * n + n


@given(st.integers(2, 9), st.integers(0, 2**32))
def test_exactly_one_batch_between_scans(n, seed):
    proto = BrCoin(n)
    r = run(proto, [0] * n, StrategyConfig("uniform", seed=seed).build(proto.t), CoinSource(seed), 10**6, keep_trace=True)
    b = batch_size(n)
    writes = [0] * n
    reads = [0] * n
    for step, _ in r.trace:
        p = step.actor
        if step.kind == WRITE:
            writes[p] += 1
        elif step.kind == READ:
            reads[p] += 1
            if reads[p] % n == 1 and writes[p]:
                # a scan starts only after a whole batch
                assert writes[p] % b == 0


def test_vote_accounting_on_hand_trace():
    from consim.core import Step

    n = 1
    trace = [
        (Step(0, FLIP, None), 1),
        (Step(0, WRITE, (("br", 0, 0), VoteRegister(1, 1))), None),
        (Step(0, FLIP, None), 0),
        (Step(0, WRITE, (("br", 0, 0), VoteRegister(2, 1))), None),
    ]
    acc = vote_accounting(trace, n)
    assert acc.threshold_step == 3
    assert acc.common_votes == 2
    assert acc.max_hidden == 1
    assert acc.max_after_threshold == 0


def test_no_agreement_promised():
    p = BrCoin(3)
    assert not p.consensus
    seen = set()
    for seed in range(60):
        r = run(p, [0, 0, 0], StrategyConfig("uniform", seed=seed).build(p.t), CoinSource(seed), 10**5)
        assert r.safe  # never flagged, even when outputs differ
        seen.add(r.decision)
    assert {0, 1} <= seen

import pytest

from consim.adversaries import RoundRobin
from consim.benor import QUESTION, RATIFY, VOTE, BenOr, BenOrMsg, RatifyConflict, stage1_tally, stage2_resolve
from consim.core import SEND, CoinSource, ContractError, Step, SystemConfig, apply_step, run
from consim.verifier import Exhausted, ExploreBounds, explore


def votes(*vs, r=1):
    return [BenOrMsg(1, r, VOTE, v) for v in vs]


def test_stage1_tally():
    assert stage1_tally(votes(0, 0), 3) == 0
    assert stage1_tally(votes(0, 1), 3) is None
    assert stage1_tally(votes(1, 1, 1), 5) == 1
    assert stage1_tally(votes(1, 1, 0), 5) is None  # 2 is not > 2.5


def test_stage1_rejects_mixed_rounds():
    with pytest.raises(ContractError):
        stage1_tally(votes(0) + votes(0, r=2), 3)
    with pytest.raises(ContractError):
        stage1_tally([BenOrMsg(2, 1, QUESTION, None)], 3)


def test_stage2_resolve():
    rat = lambda v: BenOrMsg(2, 1, RATIFY, v)  # noqa: E731
    q = BenOrMsg(2, 1, QUESTION, None)
    assert stage2_resolve([rat(0), rat(0)], t=1) == (0, 0)
    assert stage2_resolve([rat(1), q], t=1) == (1, None)
    assert stage2_resolve([q, q], t=1, coin=1) == (1, None)
    assert stage2_resolve([q, q], t=1) == (None, None)
    with pytest.raises(RatifyConflict):
        stage2_resolve([rat(0), rat(1)], t=1)


def test_fresh_process_broadcasts_its_vote():
    p = BenOr(3, 1)
    s = p.initial_state(0, 0)
    assert p.next_action(s) == (SEND, BenOrMsg(1, 1, VOTE, 0))
    config = SystemConfig.initial(p, [0, 1, 1])
    apply_step(config, Step(0, SEND, config.procs[0].out), CoinSource(0), p)
    payloads = [(m.recipient, m.payload) for m in config.pool.values()]
    assert payloads == [(q, BenOrMsg(1, 1, VOTE, 0)) for q in range(3)]


def test_quorum_boundary_moves_to_stage_two():
    p = BenOr(3, 1)
    s = p.initial_state(0, 0)._replace(phase="wait1", out=None)
    s = p.on_message(s, 1, BenOrMsg(1, 1, VOTE, 0))
    assert s.phase == "wait1"
    s = p.on_message(s, 2, BenOrMsg(1, 1, VOTE, 0))
    assert s.phase == "send2"
    assert s.out == BenOrMsg(2, 1, RATIFY, 0)


def test_duplicates_and_late_messages_are_ignored():
    p = BenOr(5, 2)
    s = p.initial_state(0, 1)._replace(phase="wait1", out=None)
    s = p.on_message(s, 1, BenOrMsg(1, 1, VOTE, 1))
    s2 = p.on_message(s, 1, BenOrMsg(1, 1, VOTE, 0))
    assert s2 == s
    # a future-round message is saved, a past-round one dropped
    s3 = p.on_message(s, 3, BenOrMsg(1, 2, VOTE, 0))
    assert len(s3.buf) == 2
    later = s._replace(round=3)
    assert p.on_message(later, 4, BenOrMsg(2, 2, QUESTION, None)) == later


def test_round_robin_reference_runs():
    # frozen reference results for the three kinds of input
    r = run(BenOr(3, 1), [0, 0, 1], RoundRobin(), CoinSource(7), 10_000)
    assert r.terminated and r.decisions == [0, 0, 0] and r.decide_rounds == [1, 1, 1]
    r = run(BenOr(3, 1), [0, 1, 0], RoundRobin(), CoinSource(7), 10_000)
    assert r.terminated and r.decisions == [0, 0, 0] and r.decide_rounds == [2, 2, 2]


def test_non_halting_variant_keeps_running():
    r = run(BenOr(3, 1, halting=False), [1, 1, 1], RoundRobin(), CoinSource(0), 10_000)
    assert r.terminated and r.decisions == [1, 1, 1]


def test_unanimous_one_round_exhaustive():
    ex = explore(BenOr(3, 1), (0, 0, 0), ExploreBounds(max_rounds=1))
    assert isinstance(ex, Exhausted)
    # every complete execution decides, all in round 1 (decisions are checked
    # for validity on every prefix, so 0 is the only possible value)
    assert ex.decided_executions == ex.executions > 0
    assert ex.bounded_executions == 0


def test_unanimous_decides_in_round_one_on_every_leaf():
    rounds = set()

    def leaf(config):
        for d, r, a in zip(config.decided, config.decide_round, config.alive):
            if a and d is not None:
                rounds.add((d, r))
        return None

    ex = explore(BenOr(3, 1), (1, 1, 1), ExploreBounds(max_rounds=2), leaf_check=leaf)
    assert isinstance(ex, Exhausted)
    assert rounds == {(1, 1)}

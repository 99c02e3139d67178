import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from remidi.learners import TabularActorCritic
from remidi.oracle import make_scorer
from remidi.plr import (
    BufferEntry,
    Decision,
    FrozenBufferError,
    LevelBuffer,
    Outcome,
    Rank,
    Streams,
    TopK,
    consider_level,
    curation_step,
    decide_replay,
    run_plr,
    sample_replay,
)


def filled(lever, scores, last=None, **kw):
    buf = LevelBuffer(len(scores), **kw)
    for i, s in enumerate(scores):
        consider_level(buf, lever.make_level(i, False), s, 0 if last is None else last[i])
    return buf


def test_buffer_validation():
    with pytest.raises(ValueError):
        LevelBuffer(4, replay_rate=1.5)
    with pytest.raises(ValueError):
        LevelBuffer(4, staleness_coeff=-0.1)
    with pytest.raises(ValueError):
        LevelBuffer(-1)
    with pytest.raises(ValueError):
        TopK(0)
    with pytest.raises(ValueError):
        Rank(0.0)


def test_decide_replay_frequency(lever):
    buf = filled(lever, [1.0])
    rng = np.random.default_rng(0)
    n = 20_000
    hits = sum(decide_replay(buf, rng) is Decision.REPLAY for _ in range(n))
    se = math.sqrt(0.8 * 0.2 / n)
    assert abs(hits / n - 0.8) <= 4 * se


def test_empty_buffer_always_explores():
    rng = np.random.default_rng(0)
    assert all(decide_replay(LevelBuffer(4), rng) is Decision.EXPLORE for _ in range(50))


def test_replay_distribution_closed_form(lever):
    buf = filled(lever, [3.0, 1.0, 2.0], last=[0, 2, 5], staleness_coeff=0.3)
    h = np.array([1.0, 1 / 3, 1 / 2])
    c = np.array([10.0, 8.0, 5.0])
    want = 0.7 * h / h.sum() + 0.3 * c / c.sum()
    assert buf.replay_distribution(10) == pytest.approx(want, abs=1e-12)


def test_topk_distribution(lever):
    buf = filled(lever, [3.0, 1.0, 2.0, 0.5], prioritization=TopK(2), staleness_coeff=0.0)
    assert buf.score_distribution() == pytest.approx([0.5, 0.0, 0.5, 0.0])


def test_sample_replay_frequencies(lever):
    buf = filled(lever, [3.0, 1.0, 2.0], staleness_coeff=0.0)
    want = buf.replay_distribution(0)
    rng = np.random.default_rng(1)
    n = 20_000
    counts = np.zeros(3)
    for _ in range(n):
        counts[sample_replay(buf, 0, rng).id] += 1
    se = np.sqrt(want * (1 - want) / n)
    assert np.all(np.abs(counts / n - want) <= 4 * se)


def test_sample_replay_marks_staleness(lever):
    buf = filled(lever, [1.0], staleness_coeff=0.3)
    level = sample_replay(buf, 17, np.random.default_rng(0))
    assert buf.entry(level).last_sampled == 17


def test_consider_level_outcomes(lever):
    buf = LevelBuffer(2)
    a, b, c, d = (lever.make_level(i, False) for i in range(4))
    assert consider_level(buf, a, 0.5, 0).outcome is Outcome.INSERTED
    assert consider_level(buf, b, 0.2, 1).outcome is Outcome.INSERTED
    assert consider_level(buf, c, 0.1, 2).outcome is Outcome.REJECTED
    res = consider_level(buf, d, 0.3, 3)
    assert res.outcome is Outcome.REPLACED and res.evicted == b
    assert set(buf.levels) == {a, d}
    assert consider_level(buf, a, 0.9, 4).outcome is Outcome.UPDATED
    assert buf.entry(a).score == 0.9
    with pytest.raises(ValueError):
        consider_level(buf, c, float("nan"), 5)
    buf.frozen = True
    with pytest.raises(FrozenBufferError):
        consider_level(buf, c, 1.0, 6)


def test_tie_evicts_oldest(lever):
    buf = LevelBuffer(2)
    a, b, c = (lever.make_level(i, False) for i in range(3))
    consider_level(buf, a, 0.2, 0)
    consider_level(buf, b, 0.2, 1)
    assert consider_level(buf, c, 0.3, 2).evicted == a


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=40), st.integers(1, 6))
def test_min_score_nondecreasing_when_full(scores, capacity):
    buf = LevelBuffer(capacity)
    last = -math.inf
    for i, s in enumerate(scores):
        consider_level(buf, lever_level(i), s, i)
        if len(buf) == capacity:
            assert buf.min_score() >= last
            last = buf.min_score()
        assert len(buf) <= capacity


def lever_level(i):
    from remidi.core import Level

    return Level(i, "lever", {"correct": i, "visible": False})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 5, allow_nan=False), min_size=1, max_size=12), st.floats(0, 1), st.integers(0, 50))
def test_replay_distribution_is_a_distribution(scores, rho, episode):
    buf = LevelBuffer(len(scores), staleness_coeff=rho)
    for i, s in enumerate(scores):
        buf.entries.append(BufferEntry(lever_level(i), s, i, i))
    buf._reindex()
    p = buf.replay_distribution(episode)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)


def test_robust_explore_leaves_agent_unchanged(lever):
    tr = TabularActorCritic(64)
    buf = LevelBuffer(8)
    h = tr.param_hash()
    streams = Streams.for_seed(0)
    rec = curation_step(0, buf, lever, lever.generate, tr, make_scorer("perfect", lever), streams, robust=True, batch_size=4)
    assert rec["decision"] == "explore" and rec["updated_steps"] == 0
    assert tr.param_hash() == h and len(buf) == 4


def test_non_robust_explore_trains(lever):
    tr = TabularActorCritic(64)
    h = tr.param_hash()
    rec = curation_step(0, LevelBuffer(8), lever, lever.generate, tr, make_scorer("perfect", lever), Streams.for_seed(0),
                        robust=False, batch_size=4)
    assert rec["updated_steps"] == 4 and tr.param_hash() != h


def test_zero_capacity_non_robust_is_domain_randomisation(lever):
    tr = TabularActorCritic(64)
    hist = run_plr(lever, lever.generate, tr, make_scorer("perfect", lever), 20, seed=0, robust=False,
                   buffer=LevelBuffer(0), batch_size=2)
    assert all(r["decision"] == "explore" and r["trained"] == 2 for r in hist.records)
    assert len(hist.buffer) == 0
    assert all(r.get("explore_rejected") == 2 for r in hist.records)


def test_run_plr_deterministic(lever):
    def go():
        tr = TabularActorCritic(64)
        hist = run_plr(lever, lever.generate, tr, make_scorer("perfect", lever), 60, seed=4, buffer=LevelBuffer(16), batch_size=4)
        return tr.param_hash(), [r["decision"] for r in hist.records], [lv.id for lv in hist.buffer.levels]

    assert go() == go()


def test_streams_independent():
    s = Streams.for_seed(3)
    draws = [g.random() for g in (s.decide, s.generate, s.sample, s.rollout)]
    assert len(set(draws)) == 4
    assert Streams.for_seed(3).decide.random() == draws[0]

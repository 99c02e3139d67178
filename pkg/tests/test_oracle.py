import math

import numpy as np
import pytest

from remidi.core import DeterministicPolicy, TabularPolicy, Trajectory, expected_return, sample_rollout
from remidi.envs.lottery import lottery_policy_table
from remidi.oracle import (
    MaxMC,
    PerfectRegret,
    make_scorer,
    mc_regret,
    optimal_return,
    regret,
    score_maxmc,
    score_neg_return,
    score_pvl,
)

UNIFORM_INVISIBLE_REGRET = 10 - ((1 / 64) * 10 + (63 / 64) * (-10))


def test_optimal_return_examples(lever, grid, lottery):
    assert optimal_return(lever.make_level(5, False), lever)[0] == 10.0
    assert optimal_return(grid.make_tmaze(0), grid)[0] == 1.0
    value, witness = optimal_return(lottery.levels[0], lottery)
    assert value == pytest.approx(100.0)
    for key, action in lottery_policy_table("a1a1").items():
        assert witness.action_probs(key)[action] == 1.0


def test_regret_examples(lever, lottery):
    level = lever.make_level(7, False)
    _, witness = optimal_return(level, lever)
    assert regret(witness, level, lever) == 0.0
    assert UNIFORM_INVISIBLE_REGRET == pytest.approx(19.6875)
    assert regret(TabularPolicy(64), level, lever) == pytest.approx(19.6875, abs=1e-9)
    a1a2 = DeterministicPolicy(2, lottery_policy_table("a1a2"))
    assert regret(a1a2, lottery.levels[1], lottery) == pytest.approx(2.0, abs=1e-9)


def test_mc_regret_deterministic_equals_exact(lever):
    level = lever.make_level(2, True)
    pol = DeterministicPolicy(64, {Trajectory.initial(3): 5})
    assert mc_regret(pol, level, lever, episodes=3, seed=0) == regret(pol, level, lever)


def test_mc_regret_uniform_invisible(lever):
    level = lever.make_level(9, False)
    est = mc_regret(TabularPolicy(64), level, lever, episodes=10_000, seed=1)
    se = 20 * math.sqrt((1 / 64) * (63 / 64) / 10_000)
    assert abs(est - 19.6875) <= 3 * se


def test_mc_regret_grid_baseline_from_shortest_path(grid):
    maze = grid.eval_suite()[0]
    assert grid.optimal_return_hint(maze) == 0.9
    assert optimal_return(maze, grid)[0] == pytest.approx(0.9)


def test_mc_regret_converges_at_scale(lever):
    level = lever.make_level(0, False)
    pol = TabularPolicy(64, {Trajectory.initial(0): np.r_[0.5, np.full(63, 0.5 / 63)]})
    exact = regret(pol, level, lever)
    est = mc_regret(pol, level, lever, episodes=100_000, seed=3)
    se = 20 * math.sqrt(0.25 / 100_000)
    assert abs(est - exact) <= 3 * se


def test_pvl_examples():
    assert score_pvl([1.0, 1.0], [0.0, 1.0], 1.0, 1.0) == 0.0
    assert score_pvl([0.0], [1.0], 1.0, 1.0) == 1.0
    assert score_pvl([2.0], [1.0], 1.0, 1.0) == 0.0
    assert score_pvl([], [], 0.99, 0.95) == 0.0


def test_maxmc_examples():
    assert score_maxmc(-math.inf, 0.3) == 0.0
    assert score_maxmc(0.9, 0.5) == pytest.approx(0.4)
    assert score_maxmc(0.9, 1.0) == 0.0
    scorer = MaxMC()
    lv = object()

    class R:
        def __init__(self, ret):
            self.ret = ret

    scorer(lv, [R(0.9)], None)
    assert scorer(lv, [R(0.5)], None) == pytest.approx(0.4)
    assert scorer(lv, [R(1.0)], None) == 0.0 and scorer.best[lv] == 1.0


def test_neg_return_examples():
    assert score_neg_return(1.0) == -1.0
    assert score_neg_return(0.0) == 0.0
    assert score_neg_return(-9.6875) == 9.6875


def test_perfect_regret_modes(lever, grid):
    level = lever.make_level(4, False)
    pol = TabularPolicy(64)
    rng = np.random.default_rng(0)
    ros = [sample_rollout(pol, level, lever, rng) for _ in range(5)]
    assert PerfectRegret(lever)(level, ros, pol) == pytest.approx(19.6875)
    mc = PerfectRegret(lever, exact=False)(level, ros, pol)
    assert mc == pytest.approx(10 - np.mean([r.ret for r in ros]))
    tm = grid.make_tmaze(1)
    assert PerfectRegret(grid, exact="auto")(tm, [], TabularPolicy(4)) == pytest.approx(
        1.0 - expected_return(TabularPolicy(4), tm, grid)
    )
    with pytest.raises(ValueError):
        PerfectRegret(lever, exact="sometimes")
    with pytest.raises(ValueError):
        make_scorer("nope", lever)


def test_regret_nonnegative_for_random_policies(lottery):
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = rng.random(2)
        pol = TabularPolicy(2, {Trajectory.initial("sA"): [a, 1 - a], Trajectory.initial("sB"): [b, 1 - b]})
        for lv in lottery.levels:
            assert regret(pol, lv, lottery) >= -1e-9

import numpy as np
import pytest

from remidi.core import DomainError, Level, TabularPolicy, expected_return
from remidi.envs import GridEnv, LeverEnv, eval_suite, generate_level, make_env, random_upomdp, solve_rate
from remidi.envs.tabular import REWARDS
from remidi.learners import TabularActorCritic
from remidi.oracle import optimal_return


def test_make_env_families():
    assert isinstance(make_env("lever"), LeverEnv)
    assert isinstance(make_env("grid", {"size": 7, "horizon": 20, "wall_count": 5}), GridEnv)
    assert make_env("tabular", {"pairing": "paired"}).pairing == "paired"
    with pytest.raises(ValueError):
        make_env("atari")


def test_lever_rewards_and_ids(lever):
    vis, hid = lever.make_level(3, True), lever.make_level(3, False)
    assert vis.id == 67 and hid.id == 3
    assert lever.step(vis, "start", 3)[0][2] == 1.0
    assert lever.step(hid, "start", 2)[0][2] == -10.0
    assert lever.observe(vis, "start") == 4 and lever.observe(hid, "start") == 0
    with pytest.raises(DomainError):
        lever.make_level(64, True)


def test_lever_generator_balanced(lever):
    rng = np.random.default_rng(0)
    levels = [lever.generate(rng) for _ in range(4000)]
    frac = np.mean([lv.params["visible"] for lv in levels])
    assert abs(frac - 0.5) < 4 * np.sqrt(0.25 / 4000)
    assert all(lever.contains(lv) for lv in levels)


def test_tabular_rewards(tab_distinct):
    for i, (r1, r2) in enumerate(REWARDS, start=1):
        lv = tab_distinct.level(i)
        assert optimal_return(lv, tab_distinct)[0] == pytest.approx(max(r1, r2))


def test_grid_generator_solvable(grid):
    rng = np.random.default_rng(0)
    for _ in range(50):
        lv = grid.generate(rng)
        assert grid.contains(lv)
        assert grid.shortest_path(lv) is not None and grid.shortest_path(lv) <= grid.horizon


def test_grid_eval_suite(grid):
    suite = grid.eval_suite()
    mazes = [lv for lv in suite if grid.subset(lv) == "maze"]
    assert len(mazes) >= 10
    assert all(grid.shortest_path(lv) is not None for lv in suite)
    assert {grid.subset(lv) for lv in suite} == {"maze"}


def test_grid_tmaze_decorations_share_observations(grid):
    a, b = grid.make_tmaze(0, 0), grid.make_tmaze(1, 3)
    s = grid.initial(a)[0][1]
    assert grid.observe(a, s) == grid.observe(b, s)
    assert a.id != b.id


def test_ascii_round_trip(grid):
    lv = grid.generate_maze(np.random.default_rng(3))
    rows = [r[1:-1] for r in grid.render(lv).splitlines()[1:-1]]
    again = grid.from_ascii(rows)
    assert grid.shortest_path(again) == grid.shortest_path(lv)


def test_level_json_round_trip(grid, lever):
    for lv in (grid.make_tmaze(1, 2), lever.make_level(7, True), grid.generate_maze(np.random.default_rng(1))):
        back = Level.from_json(lv.to_json())
        assert back == lv and hash(back) == hash(lv)


def test_random_upomdp_is_valid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        env = random_upomdp(rng)
        assert 2 <= len(env.levels) <= 4
        pol = TabularPolicy(env.action_count)
        for lv in env.levels:
            assert -2.0 - 1e-9 <= expected_return(pol, lv, env) <= 2.0 + 1e-9


def test_solve_rate_exact_and_sampled(lever):
    tr = TabularActorCritic(64)
    suite = [lever.make_level(i, v) for i in range(4) for v in (False, True)]
    exact = solve_rate(tr, suite, lever, None)
    assert exact["overall"] == pytest.approx(1 / 64) and exact["visible_se"] == 0.0
    mc = solve_rate(tr, suite, lever, 50, seed=1)
    assert mc == solve_rate(tr, suite, lever, 50, seed=1, threads=2)
    assert mc["visible_se"] > 0 or mc["visible"] == 0
    with pytest.raises(ValueError):
        solve_rate(tr, [], lever, 5)


def test_generic_helpers(tab_distinct, lever):
    assert generate_level(tab_distinct, np.random.default_rng(0)) in tab_distinct.levels
    assert len(eval_suite(lever)) == 128

import numpy as np
import pytest

from remidi.blp import (
    ChainStep,
    RefinementChain,
    RefinementStalled,
    bayes_consistency_check,
    blp_solve,
    combine,
    per_level_regrets,
    verify_theorem_4_4,
)
from remidi.core import Trajectory, expected_return, realisable_trajectories
from remidi.games import solve_zero_sum
from remidi.oracle import optimal_return, regret


def worst_by_observation(policy, env):
    worst = {}
    for lv in env.levels:
        obs = env.observation_of(lv)
        worst[obs] = max(worst.get(obs, 0.0), regret(policy, lv, env))
    return worst


def pair_equilibrium(env, i, j):
    """Independent oracle: the 2x2 regret game of one observation pair."""
    a, b = env.level(i), env.level(j)
    payoffs = np.array([[max(r) - r[0], max(r) - r[1]] for r in (env.rewards[i - 1], env.rewards[j - 1])])
    return solve_zero_sum(payoffs).value, a, b


def test_variant2_chain(tab_paired):
    chain = blp_solve(tab_paired)
    assert 2 <= len(chain) <= 3 and chain.complete
    assert chain.steps[0].solution.value == pytest.approx(1.0, abs=1e-6)
    policy = combine(chain, tab_paired)
    worst = worst_by_observation(policy, tab_paired)
    assert sorted(worst.values()) == pytest.approx([0.175, 0.175, 1.0], abs=1e-6)
    for i, j in ((1, 2), (3, 4), (5, 6)):
        value, _, _ = pair_equilibrium(tab_paired, i, j)
        assert worst[f"tau{i}"] == pytest.approx(value, abs=1e-6)


def test_protected_sets_grow(tab_paired):
    chain = blp_solve(tab_paired)
    covered = frozenset()
    for step in chain.steps:
        assert step.protected == covered
        assert step.support - covered
        covered |= step.support
    assert covered == frozenset(tab_paired.levels)


def test_single_level_chain(lever):
    level = lever.make_level(11, False)
    chain = blp_solve(lever, levels=[level])
    assert len(chain) == 1
    assert regret(combine(chain, lever), level, lever) == pytest.approx(0.0, abs=1e-9)
    rep = bayes_consistency_check(combine(chain, lever), chain, lever)
    assert rep.ok and rep.checked == 1


def test_lever_chain(lever):
    chain = blp_solve(lever)
    first = chain.steps[0]
    assert first.solution.value == pytest.approx(19.6875, abs=1e-6)
    assert all(lever.subset(lv) == "invisible" for lv in first.support)
    policy = combine(chain, lever)
    for lv in lever.levels:
        if lever.subset(lv) == "visible":
            assert regret(policy, lv, lever) == pytest.approx(0.0, abs=1e-6)


def test_combine_length_one_is_identity(tab_distinct):
    chain = blp_solve(tab_distinct)
    assert len(chain) == 1
    assert combine(chain, tab_distinct) is chain.steps[0].policy


def test_combine_matches_pair_solutions(tab_paired):
    chain = blp_solve(tab_paired)
    policy = combine(chain, tab_paired)
    assert policy.action_probs(Trajectory.initial("tau5")) == pytest.approx([0.5, 0.5], abs=1e-6)
    assert policy.action_probs(Trajectory.initial("tau1")) == pytest.approx([0.875, 0.125], abs=1e-6)
    assert policy.action_probs(Trajectory.initial("tau3")) == pytest.approx([0.125, 0.875], abs=1e-6)


def test_combine_frozen_entry_wins(tab_paired):
    chain = blp_solve(tab_paired)
    key = Trajectory.initial("tau5")
    tampered = chain.steps[1].policy.with_entries({key: [1.0, 0.0]})
    chain.steps[1] = ChainStep(tampered, chain.steps[1].solution, chain.steps[1].protected, chain.steps[1].frozen)
    combined = combine(chain, tab_paired)
    assert np.array_equal(combined.action_probs(key), chain.steps[0].policy.action_probs(key))


def test_chain_property_flags(tab_paired, tab_distinct):
    assert verify_theorem_4_4(blp_solve(tab_paired), tab_paired).ok
    assert verify_theorem_4_4(blp_solve(tab_distinct), tab_distinct).ok


def test_chain_properties_detect_corruption(tab_paired):
    chain = blp_solve(tab_paired)
    key = Trajectory.initial("tau5")
    bad = chain.steps[1].policy.with_entries({key: [1.0, 0.0]})
    chain.steps[1] = ChainStep(bad, chain.steps[1].solution, chain.steps[1].protected, chain.steps[1].frozen)
    rep = verify_theorem_4_4(chain, tab_paired)
    assert not rep.support_regret_preserved


def test_bayes_check_variant2(tab_paired):
    chain = blp_solve(tab_paired)
    rep = bayes_consistency_check(combine(chain, tab_paired), chain, tab_paired)
    assert rep.ok and rep.checked == 3 and not rep.skipped


def test_bayes_check_flags_bad_policy(lever):
    level = lever.make_level(11, False)
    chain = blp_solve(lever, levels=[level])
    key = Trajectory.initial(0)
    wrong = np.zeros(64)
    wrong[12] = 1.0
    rep = bayes_consistency_check(combine(chain, lever).with_entries({key: wrong}), chain, lever)
    assert not rep.ok and rep.max_gain == pytest.approx(20.0)


def test_final_policy_is_mmr(tab_paired, lottery):
    for env in (tab_paired, lottery):
        chain = blp_solve(env)
        worst = max(per_level_regrets(combine(chain, env), env.levels, env).values())
        assert worst == pytest.approx(chain.steps[0].solution.value, abs=1e-6)


def test_idempotent_when_one_policy_is_optimal_everywhere(tab_distinct):
    chain = blp_solve(tab_distinct)
    assert len(chain) == 1
    assert chain.steps[0].solution.value == pytest.approx(0.0, abs=1e-9)


def test_stalled_refinement_raises(tab_paired, monkeypatch):
    import remidi.blp as blp

    real = blp.solve_refined_game

    def no_progress(spec, upomdp, *a, **k):
        pol, sol = real(spec, upomdp, *a, **k)
        levels = tuple(sorted(spec.protected_levels, key=lambda lv: lv.id))
        return pol, type(sol)(sol.agent_mixture, np.ones(len(levels)) / len(levels), sol.value, sol.duality_gap, levels,
                              sol.strategies, sol.method)

    monkeypatch.setattr(blp, "solve_refined_game", no_progress)
    with pytest.raises(RefinementStalled):
        blp_solve(tab_paired)

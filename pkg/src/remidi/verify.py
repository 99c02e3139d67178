"""Executable checks: golden fixtures and refinement properties on random small UPOMDPs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .blp import RefinementChain, bayes_consistency_check, blp_solve, combine, verify_theorem_4_4
from .core import DeterministicPolicy, TabularPolicy, Trajectory, expected_return
from .envs import TabularGameEnv, lottery_mdp, random_upomdp
from .envs.lottery import EXAMPLE_COLUMNS, EXAMPLE_UTILITIES, POLICY_LABELS, lottery_policy_table
from .envs.tabular import REWARDS
from .games import (
    DecisionMatrix,
    RefinedGameSpec,
    regret_matrix,
    rule_leximin,
    rule_minimax,
    rule_minimax_regret,
    solve_mmr_game,
    verify_theorem_4_3,
)
from .oracle import regret

# Reference values transcribed from the source tables.
TABLE_REGRETS = np.array([[0.0, 0.0, 1.0, 1.0], [91.0, 3.0, 2.0, 0.0], [90.0, 0.0, 1.0, 2.0]])
LOTTERY_UTILITIES = np.array([[100.0, 98.0, -98.0, -100.0], [-100.0, 98.0, -98.0, 100.0]])
LOTTERY_REGRETS = np.array([[0.0, 2.0, 198.0, 200.0], [200.0, 2.0, 198.0, 0.0]])


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    expected: Any = ""
    measured: Any = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: expected {self.expected}, measured {self.measured}"


def _labels(idx) -> str:
    return "{" + ",".join(EXAMPLE_COLUMNS[j] for j in sorted(idx)) + "}"


def lottery_matrix() -> np.ndarray:
    """Utility of each deterministic lottery policy (columns) on each level (rows)."""
    env = lottery_mdp()
    return np.array(
        [
            [expected_return(DeterministicPolicy(2, lottery_policy_table(lab)), lv, env) for lab in POLICY_LABELS]
            for lv in env.levels
        ]
    )


def fixture_checks() -> list[Check]:
    out = []
    m = DecisionMatrix(EXAMPLE_UTILITIES)
    for name, rule, want in (
        ("minimax rule", rule_minimax, {0, 1}),
        ("leximin rule", rule_leximin, {1}),
        ("minimax-regret rule", rule_minimax_regret, {2, 3}),
    ):
        got = rule(m)
        out.append(Check(name, got == want, _labels(want), _labels(got)))
    reg = regret_matrix(m).utilities
    out.append(Check("example regret matrix", bool(np.array_equal(reg, TABLE_REGRETS)), TABLE_REGRETS.tolist(), reg.tolist()))

    lot = lottery_matrix()
    out.append(Check("lottery utilities", bool(np.allclose(lot, LOTTERY_UTILITIES, atol=1e-9)), LOTTERY_UTILITIES.tolist(), lot.round(9).tolist()))
    lreg = regret_matrix(DecisionMatrix(lot)).utilities
    out.append(Check("lottery regrets", bool(np.allclose(lreg, LOTTERY_REGRETS, atol=1e-9)), LOTTERY_REGRETS.tolist(), lreg.round(9).tolist()))

    out.extend(lottery_game_checks())

    env = TabularGameEnv()
    got = tuple(tuple(env.level(i + 1).params["rewards"]) for i in range(6))
    out.append(Check("tabular reward table", got == REWARDS, REWARDS, got))
    paired = TabularGameEnv("paired")
    groups = sorted(tuple(sorted(lv.id for lv in paired.levels if paired.observation_of(lv) == o)) for o in {paired.observation_of(lv) for lv in paired.levels})
    out.append(Check("tabular observation pairing", groups == [(1, 2), (3, 4), (5, 6)], [(1, 2), (3, 4), (5, 6)], groups))
    return out


def lottery_game_checks(tol: float = 1e-6) -> list[Check]:
    env = lottery_mdp()
    policy, sol = solve_mmr_game(env, tolerance=1e-9)
    sa, sb = Trajectory.initial("sA"), Trajectory.initial("sB")
    picks = (int(np.argmax(policy.action_probs(sa))), int(np.argmax(policy.action_probs(sb))))
    deterministic = max(policy.action_probs(sa)) > 1 - tol and max(policy.action_probs(sb)) > 1 - tol
    out = [
        Check("lottery minimax-regret value", abs(sol.value - 2.0) <= tol, 2.0, round(sol.value, 9)),
        Check("lottery minimax-regret policy", deterministic and picks == (0, 1), "a1a2", f"a{picks[0] + 1}a{picks[1] + 1}"),
    ]
    half = TabularPolicy(2).with_entries({sa: [0.5, 0.5], sb: [0.5, 0.5]})
    worst = max(regret(half, lv, env) for lv in env.levels)
    out.append(Check("lottery 50/50 composition worst regret", abs(worst - 100.0) <= tol, 100.0, round(worst, 9)))
    return out


def chain_checks(chain: RefinementChain, upomdp, tol: float = 1e-6, label: str = "") -> list[Check]:
    """Refinement-step, chain-level and sequential-rationality checks for one solved chain."""
    out = []
    for i in range(1, len(chain.steps)):
        prev, step = chain.steps[i - 1], chain.steps[i]
        spec = RefinedGameSpec.build(upomdp, prev.policy, step.protected, chain.levels)
        rep = verify_theorem_4_3(prev.policy, step.policy, spec, upomdp, tol)
        out.append(Check(f"{label}refinement step {i + 1}", rep.ok, True, rep.ok))
    rep = verify_theorem_4_4(chain, upomdp, tol)
    out.append(
        Check(
            f"{label}chain properties",
            rep.ok,
            True,
            f"mmr={rep.is_mmr_at_every_step} monotone={rep.monotone_free_regret} preserved={rep.support_regret_preserved}",
        )
    )
    bayes = bayes_consistency_check(combine(chain, upomdp), chain, upomdp, tol)
    out.append(Check(f"{label}sequential rationality", bayes.ok, f"gain <= {tol}", f"max gain {bayes.max_gain:.3g}"))
    return out


def theorem_checks(instances: int = 50, seed: int = 0, tol: float = 1e-6) -> list[Check]:
    """Solve the refinement chain on ``instances`` random UPOMDPs and check every property."""
    rng = np.random.default_rng(seed)
    out = []
    for n in range(instances):
        env = random_upomdp(rng)
        chain = blp_solve(env, tolerance=tol * 1e-2)
        out.extend(chain_checks(chain, env, tol, label=f"instance {n}: "))
    return out


def tabular_chain_checks(tol: float = 1e-6) -> list[Check]:
    env = TabularGameEnv("paired")
    chain = blp_solve(env)
    policy = combine(chain, env)
    worst = {}
    for lv in env.levels:
        obs = env.observation_of(lv)
        worst[obs] = max(worst.get(obs, 0.0), regret(policy, lv, env))
    got = sorted(worst.values())
    want = [0.175, 0.175, 1.0]
    checks = [
        Check("paired tabular first value", abs(chain.steps[0].solution.value - 1.0) <= tol, 1.0, round(chain.steps[0].solution.value, 9)),
        Check("paired tabular worst regrets", all(abs(a - b) <= tol for a, b in zip(got, want)), want, [round(x, 9) for x in got]),
    ]
    return checks + chain_checks(chain, env, tol, label="paired tabular: ")


def run_suite(name: str, instances: int = 50, tol: float = 1e-6) -> list[Check]:
    checks = []
    if name in ("fixtures", "all"):
        checks += fixture_checks()
    if name in ("theorems", "all"):
        checks += tabular_chain_checks(tol)
        checks += theorem_checks(instances, tol=tol)
    return checks

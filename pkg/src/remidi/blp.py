"""Iterated refinement of minimax regret until every level has been played by some adversary."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .core import (
    DEFAULT_NODE_BUDGET,
    UPOMDP,
    BudgetExceeded,
    Level,
    Policy,
    RealisableSet,
    TabularPolicy,
    Trajectory,
    _walk,
    realisable_trajectories,
)
from .games import (
    SUPPORT_EPS,
    GameSolution,
    RefinedGameSpec,
    solve_mmr_game,
    solve_refined_game,
)
from .oracle import regret


class RefinementStalled(RuntimeError):
    """An adversary's support added no new level, so the chain would never cover the level space."""


@dataclass
class ChainStep:
    policy: TabularPolicy
    solution: GameSolution
    protected: frozenset
    frozen: RealisableSet

    @property
    def support(self) -> frozenset:
        return frozenset(self.solution.support(SUPPORT_EPS))


@dataclass
class RefinementChain:
    steps: list[ChainStep] = field(default_factory=list)
    levels: tuple = ()

    @property
    def covered(self) -> frozenset:
        out: frozenset = frozenset()
        for step in self.steps:
            out |= step.support
        return out

    @property
    def complete(self) -> bool:
        return self.covered == frozenset(self.levels)

    @property
    def policies(self) -> list[TabularPolicy]:
        return [s.policy for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)


def blp_solve(
    upomdp: UPOMDP,
    tolerance: float = 1e-6,
    max_steps: int = 64,
    levels: Sequence[Level] | None = None,
    method: str = "auto",
    budget: int = DEFAULT_NODE_BUDGET,
) -> RefinementChain:
    """Solve the global minimax-regret game, then refined games on the uncovered levels.

    Step ``i`` freezes the previous policy on everything it can produce on the levels
    already played by earlier adversaries. Stops once the adversaries' supports cover the
    level space or after ``max_steps`` steps.
    """
    levels = tuple(levels if levels is not None else upomdp.levels)
    chain = RefinementChain(levels=levels)
    policy, sol = solve_mmr_game(upomdp, levels, tolerance, method=method, budget=budget)
    chain.steps.append(ChainStep(policy, sol, frozenset(), RealisableSet.empty()))
    while not chain.complete and len(chain.steps) < max_steps:
        covered = chain.covered
        spec = RefinedGameSpec.build(upomdp, chain.steps[-1].policy, covered, levels)
        policy, sol = solve_refined_game(spec, upomdp, tolerance, method=method, budget=budget)
        step = ChainStep(policy, sol, covered, spec.frozen_trajectories)
        if not step.support - covered:
            raise RefinementStalled(f"step {len(chain.steps) + 1} added no level beyond {len(covered)} covered")
        chain.steps.append(step)
    return chain


def combine(chain: RefinementChain, upomdp: UPOMDP) -> TabularPolicy:
    """Policy acting as the earlier combined policy wherever earlier adversaries can lead, else as the newest one."""
    if not chain.steps:
        raise ValueError("empty chain")
    current = chain.steps[0].policy
    covered: set = set()
    for prev, step in zip(chain.steps, chain.steps[1:]):
        covered |= prev.support
        frozen = realisable_trajectories(current, covered, upomdp)
        keys = set(current.keys()) | set(step.policy.keys())
        table = {}
        for key in keys:
            src = current if key in frozen else step.policy
            table[key] = src.action_probs(key)
        nxt = TabularPolicy(upomdp.action_count)
        nxt._table = dict(table)
        current = nxt
    return current


def per_level_regrets(policy: Policy, levels, upomdp: UPOMDP) -> dict:
    return {lv: regret(policy, lv, upomdp) for lv in levels}


@dataclass
class Theorem44Report:
    is_mmr_at_every_step: bool
    monotone_free_regret: bool
    support_regret_preserved: bool
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.is_mmr_at_every_step and self.monotone_free_regret and self.support_regret_preserved


def verify_theorem_4_4(chain: RefinementChain, upomdp: UPOMDP, tol: float = 1e-6) -> Theorem44Report:
    """Every step stays minimax regret, free-level worst case never grows, earlier supports keep their regret."""
    levels = chain.levels
    regs = [per_level_regrets(s.policy, levels, upomdp) for s in chain.steps]
    global_value = chain.steps[0].solution.value
    worst = [max(r.values()) for r in regs]
    mmr = all(w <= global_value + tol for w in worst)

    monotone = True
    free_worst = []
    for i in range(1, len(chain.steps)):
        free = [lv for lv in levels if lv not in chain.steps[i].protected]
        if not free:
            continue
        now = max(regs[i][lv] for lv in free)
        before = max(regs[i - 1][lv] for lv in free)
        free_worst.append((i + 1, before, now))
        monotone &= now <= before + tol

    preserved = True
    drift = []
    for j, step_j in enumerate(chain.steps):
        for i in range(j + 1, len(chain.steps)):
            for lv in step_j.support:
                d = abs(regs[i][lv] - regs[j][lv])
                drift.append(d)
                preserved &= d <= tol
    return Theorem44Report(
        mmr,
        monotone,
        preserved,
        {
            "global_value": global_value,
            "worst_regret_per_step": worst,
            "free_worst": free_worst,
            "max_support_drift": max(drift, default=0.0),
        },
    )


@dataclass
class BayesReport:
    checked: int
    violations: list
    skipped: list
    max_gain: float

    @property
    def ok(self) -> bool:
        return not self.violations


def bayes_consistency_check(
    policy: Policy, chain: RefinementChain, upomdp: UPOMDP, tol: float = 1e-6, budget: int = DEFAULT_NODE_BUDGET
) -> BayesReport:
    """Check sequential rationality of ``policy`` on every realisable decision point.

    The belief at a trajectory uses, as prior, the earliest adversary in the chain whose
    support can produce it, updated by Bayes' rule. The policy's expected continuation
    return under that belief is compared against the best continuation return.
    """
    levels = chain.levels
    reach: dict[Trajectory, list] = defaultdict(list)
    for lv in levels:
        for item in _walk(upomdp, lv, policy, budget):
            if item[0] == "node":
                _, traj, state, prob, t = item
                reach[traj].append((lv, state, prob, t))
    priors = []
    for step in chain.steps:
        dist = dict(zip(step.solution.levels, step.solution.adversary_distribution))
        priors.append({lv: p for lv, p in dist.items() if p > SUPPORT_EPS})

    checked, violations, skipped = 0, [], []
    max_gain = 0.0
    for traj, entries in reach.items():
        belief = None
        for prior in priors:
            weights = defaultdict(float)
            for lv, state, prob, t in entries:
                if lv in prior and prob > 0:
                    weights[(lv, state)] += prior[lv] * prob
            total = math.fsum(weights.values())
            if total > 0:
                belief = {k: w / total for k, w in weights.items()}
                break
        if belief is None:
            skipped.append(traj)
            continue
        t = entries[0][3]
        v_pol, v_best = _continuation(upomdp, policy, traj, belief, t, budget)
        gain = v_best - v_pol
        max_gain = max(max_gain, gain)
        checked += 1
        if gain > tol:
            violations.append((traj, gain))
    return BayesReport(checked, violations, skipped, max_gain)


def _continuation(upomdp: UPOMDP, policy: Policy, traj: Trajectory, belief: dict, t: int, budget: int):
    """Expected return-to-go of ``policy`` and of the best continuation under a joint (level, state) belief."""
    A, gamma = upomdp.action_count, upomdp.discount
    count = [0]

    def rec(traj, belief, t):
        if t >= upomdp.horizon:
            return 0.0, 0.0
        probs = policy.action_probs(traj)
        q_pol = np.zeros(A)
        q_best = np.zeros(A)
        for a in range(A):
            imm = 0.0
            groups: dict[Hashable, dict] = defaultdict(lambda: defaultdict(float))
            for (lv, s), b in belief.items():
                for p, s2, r, done in upomdp.step(lv, s, a):
                    if p <= 0:
                        continue
                    count[0] += 1
                    if count[0] > budget:
                        raise BudgetExceeded("continuation check", count[0], budget)
                    imm += b * p * r
                    if not done:
                        groups[upomdp.observe(lv, s2)][(lv, s2)] += b * p
            vp, vb = imm, imm
            for obs, mass in groups.items():
                m = math.fsum(mass.values())
                cp, cb = rec(traj.extend(a, obs), {k: w / m for k, w in mass.items()}, t + 1)
                vp += gamma * m * cp
                vb += gamma * m * cb
            q_pol[a], q_best[a] = vp, vb
        return float(probs @ q_pol), float(q_best.max())

    return rec(traj, belief, t)

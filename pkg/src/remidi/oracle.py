"""Per-level optimal values, exact and Monte Carlo regret, and approximate level scores."""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Hashable, Sequence

import numpy as np

from .core import (
    DEFAULT_NODE_BUDGET,
    UPOMDP,
    BudgetExceeded,
    DeterministicPolicy,
    Level,
    Policy,
    Rollout,
    Trajectory,
    expected_return,
    sample_rollout,
)


def _cache(upomdp: UPOMDP) -> dict:
    return upomdp.__dict__.setdefault("_optimal_cache", {})


def optimal_return(level: Level, upomdp: UPOMDP, budget: int = DEFAULT_NODE_BUDGET) -> tuple[float, DeterministicPolicy]:
    """Best achievable expected return on a single known level, with a witness policy.

    Backward induction over the level's trajectory tree: at each history the belief over
    hidden states is exact, so a deterministic history-conditioned policy is optimal.
    """
    upomdp.check_level(level)
    cache = _cache(upomdp)
    if level in cache:
        return cache[level]
    if upomdp.deterministic:
        result = _optimal_deterministic(level, upomdp, budget)
    else:
        result = _optimal_belief(level, upomdp, budget)
    cache[level] = result
    return result


def _optimal_deterministic(level, upomdp, budget):
    A, gamma, horizon = upomdp.action_count, upomdp.discount, upomdp.horizon
    memo: dict[tuple[Hashable, int], tuple[float, int]] = {}
    count = [0]

    def value(state, t) -> float:
        if t >= horizon:
            return 0.0
        key = (state, t)
        hit = memo.get(key)
        if hit is not None:
            return hit[0]
        best, best_a = -math.inf, 0
        for a in range(A):
            count[0] += 1
            if count[0] > budget:
                raise BudgetExceeded(f"backward induction on {level!r}", count[0], budget)
            ((_, nxt, reward, done),) = [o for o in upomdp.step(level, state, a) if o[0] > 0]
            q = reward + (0.0 if done else gamma * value(nxt, t + 1))
            if q > best + 1e-12:
                best, best_a = q, a
        memo[key] = (best, best_a)
        return best

    ((_, s0),) = [x for x in upomdp.initial(level) if x[0] > 0]
    total = value(s0, 0)
    table = {}
    traj = Trajectory.initial(upomdp.observe(level, s0))
    state, t = s0, 0
    while t < horizon:
        a = memo[(state, t)][1]
        table[traj] = a
        ((_, nxt, _, done),) = [o for o in upomdp.step(level, state, a) if o[0] > 0]
        traj = traj.extend(a, upomdp.observe(level, nxt))
        if done:
            break
        state, t = nxt, t + 1
    return total, DeterministicPolicy(A, table)


def _optimal_belief(level, upomdp, budget):
    A, gamma, horizon = upomdp.action_count, upomdp.discount, upomdp.horizon
    table: dict[Trajectory, int] = {}
    count = [0]

    def value(traj: Trajectory, belief: dict, t: int) -> float:
        if t >= horizon:
            return 0.0
        best, best_a = -math.inf, 0
        for a in range(A):
            immediate = 0.0
            groups: dict[Hashable, dict] = defaultdict(lambda: defaultdict(float))
            for s, b in belief.items():
                for p, s2, r, done in upomdp.step(level, s, a):
                    if p <= 0:
                        continue
                    count[0] += 1
                    if count[0] > budget:
                        raise BudgetExceeded(f"backward induction on {level!r}", count[0], budget)
                    immediate += b * p * r
                    if not done:
                        groups[upomdp.observe(level, s2)][s2] += b * p
            q = immediate
            for obs, mass in groups.items():
                total = math.fsum(mass.values())
                child = {s: m / total for s, m in mass.items()}
                q += gamma * total * value(traj.extend(a, obs), child, t + 1)
            if q > best + 1e-12:
                best, best_a = q, a
        table[traj] = best_a
        return best

    total = 0.0
    by_obs: dict[Hashable, dict] = defaultdict(lambda: defaultdict(float))
    for p, s in upomdp.initial(level):
        if p > 0:
            by_obs[upomdp.observe(level, s)][s] += p
    for obs, mass in by_obs.items():
        m = math.fsum(mass.values())
        total += m * value(Trajectory.initial(obs), {s: q / m for s, q in mass.items()}, 0)
    return total, DeterministicPolicy(A, table)


def regret(policy: Policy, level: Level, upomdp: UPOMDP, budget: int = DEFAULT_NODE_BUDGET) -> float:
    """Optimal return on ``level`` minus the policy's exact expected return."""
    best, _ = optimal_return(level, upomdp, budget)
    return best - expected_return(policy, level, upomdp, budget)


def optimal_baseline(level: Level, upomdp: UPOMDP) -> float:
    """Optimal return, using the environment's closed-form hint (e.g. shortest path) when it has one."""
    hint = getattr(upomdp, "optimal_return_hint", None)
    if hint is not None:
        return hint(level)
    return optimal_return(level, upomdp)[0]


def mc_regret(policy: Policy, level: Level, upomdp: UPOMDP, episodes: int, seed: int) -> float:
    """Optimal return minus the mean return of ``episodes`` seeded rollouts."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    rng = np.random.default_rng(seed)
    total = math.fsum(sample_rollout(policy, level, upomdp, rng).ret for _ in range(episodes))
    return optimal_baseline(level, upomdp) - total / episodes


def gae_advantages(values: Sequence[float], rewards: Sequence[float], discount: float, gae_lambda: float) -> np.ndarray:
    """Generalised advantage estimates for one episode that ends after the last reward."""
    values = np.asarray(values, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    if values.shape != rewards.shape:
        raise ValueError("values and rewards must have equal length")
    adv = np.zeros_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        nxt = values[t + 1] if t + 1 < len(values) else 0.0
        delta = rewards[t] + discount * nxt - values[t]
        running = delta + discount * gae_lambda * running
        adv[t] = running
    return adv


def score_pvl(values: Sequence[float], rewards: Sequence[float], discount: float, gae_lambda: float) -> float:
    """Positive value loss: mean of the positive advantages in an episode (0 if none)."""
    if len(rewards) == 0:
        return 0.0
    adv = gae_advantages(values, rewards, discount, gae_lambda)
    pos = adv[adv > 0]
    return float(pos.mean()) if pos.size else 0.0


def score_maxmc(best_seen_return: float, episode_return: float) -> float:
    """Gap between the best return ever seen on a level and this episode's return."""
    return max(best_seen_return, episode_return) - episode_return


def score_neg_return(episode_return: float) -> float:
    return -episode_return


# ----- pluggable scorers -------------------------------------------------------------
# A scorer maps (level, rollouts collected on it, policy that produced them) to a score.


class PerfectRegret:
    """Regret against the true optimum.

    ``exact=True`` enumerates the policy's outcomes; ``exact=False`` uses the mean return
    of the given rollouts; ``exact="auto"`` enumerates when that takes at most
    ``exact_budget`` transitions and otherwise falls back to the rollouts.
    """

    name = "perfect"

    def __init__(self, upomdp: UPOMDP, exact: bool | str = True, exact_budget: int = 512):
        if exact not in (True, False, "auto"):
            raise ValueError(f"exact must be True, False or 'auto', got {exact!r}")
        self.upomdp = upomdp
        self.exact = exact
        self.exact_budget = exact_budget

    def __call__(self, level: Level, rollouts: Sequence[Rollout], policy: Policy) -> float:
        if self.exact is True:
            return regret(policy, level, self.upomdp)
        if self.exact == "auto":
            try:
                return optimal_baseline(level, self.upomdp) - expected_return(policy, level, self.upomdp, self.exact_budget)
            except BudgetExceeded:
                pass
        if not rollouts:
            raise ValueError("Monte Carlo regret needs at least one rollout")
        mean = math.fsum(r.ret for r in rollouts) / len(rollouts)
        return optimal_baseline(level, self.upomdp) - mean


class PositiveValueLoss:
    name = "pvl"

    def __init__(self, discount: float, gae_lambda: float = 0.95):
        self.discount = discount
        self.gae_lambda = gae_lambda

    def __call__(self, level, rollouts, policy) -> float:
        return float(np.mean([score_pvl(r.values, r.rewards, self.discount, self.gae_lambda) for r in rollouts]))


class MaxMC:
    name = "maxmc"

    def __init__(self):
        self.best: dict[Level, float] = {}

    def __call__(self, level, rollouts, policy) -> float:
        best = self.best.get(level, -math.inf)
        scores = []
        for r in rollouts:
            scores.append(score_maxmc(best, r.ret))
            best = max(best, r.ret)
        self.best[level] = best
        return float(np.mean(scores))


class NegativeReturn:
    name = "neg_return"

    def __call__(self, level, rollouts, policy) -> float:
        return float(np.mean([score_neg_return(r.ret) for r in rollouts]))


def make_scorer(name: str, upomdp: UPOMDP, exact: bool = True, discount: float = 0.99, gae_lambda: float = 0.95):
    if name == "perfect":
        return PerfectRegret(upomdp, exact=exact)
    if name == "pvl":
        return PositiveValueLoss(discount, gae_lambda)
    if name == "maxmc":
        return MaxMC()
    if name == "neg_return":
        return NegativeReturn()
    raise ValueError(f"unknown score function {name!r}")

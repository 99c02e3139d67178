"""Environment families and fixtures."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Any, Mapping

import numpy as np

from ..core import UPOMDP, Level
from .grid import GridEnv
from .lever import LeverEnv
from .lottery import EXAMPLE_COLUMNS, EXAMPLE_ROWS, EXAMPLE_UTILITIES, lottery_mdp
from .random_game import random_upomdp
from .tabular import TabularGameEnv

__all__ = [
    "GridEnv",
    "LeverEnv",
    "TabularGameEnv",
    "lottery_mdp",
    "random_upomdp",
    "EXAMPLE_UTILITIES",
    "EXAMPLE_ROWS",
    "EXAMPLE_COLUMNS",
    "make_env",
    "generate_level",
    "eval_suite",
    "solve_rate",
]


def make_env(family: str, params: Mapping[str, Any] | None = None) -> UPOMDP:
    params = dict(params or {})
    if family == "tabular":
        return TabularGameEnv(**params)
    if family == "lever":
        return LeverEnv(**params)
    if family == "grid":
        return GridEnv(**params)
    if family == "lottery":
        return lottery_mdp(**params)
    if family == "random":
        seed = int(params.pop("seed", 0))
        return random_upomdp(np.random.default_rng(seed), **params)
    raise ValueError(f"unknown environment family {family!r}")


def generate_level(env: UPOMDP, rng: np.random.Generator) -> Level:
    """Draw one level from the family's generator (finite spaces draw uniformly)."""
    gen = getattr(env, "generate", None)
    if gen is not None:
        return gen(rng)
    levels = env.levels
    return levels[int(rng.integers(len(levels)))]


def eval_suite(env: UPOMDP) -> list[Level]:
    suite = getattr(env, "eval_suite", None)
    if suite is not None:
        return suite()
    return list(env.levels)


def solve_rate(
    policy, suite, upomdp: UPOMDP, episodes: int | None, seed: int = 0, threads: int = 1
) -> dict[str, float]:
    """Fraction of successful episodes, overall and per subset.

    ``episodes`` rollouts are run per level; ``episodes=None`` computes the exact success
    probability instead. Each level draws from its own seeded stream, so the result does
    not depend on ``threads``. Returned keys: ``"overall"``, each subset name, and
    ``"<subset>_se"`` standard errors (zero for exact evaluation).
    """
    from ..core import sample_rollout, success_probability

    if not suite:
        raise ValueError("evaluation suite is empty")

    def rate(item) -> float:
        index, level = item
        if episodes is None:
            return success_probability(policy, level, upomdp)
        rng = np.random.default_rng([int(seed), index])
        wins = 0
        for _ in range(episodes):
            ro = sample_rollout(policy, level, upomdp, rng)
            wins += bool(upomdp.is_success(level, ro.ret))
        return wins / episodes

    items = list(enumerate(suite))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rates = list(pool.map(rate, items))
    else:
        rates = [rate(it) for it in items]
    per_subset: dict[str, list[float]] = {}
    for level, r in zip(suite, rates):
        per_subset.setdefault(upomdp.subset(level), []).append(r)
    out: dict[str, float] = {}
    for tag, vals in per_subset.items():
        mean = float(np.mean(vals))
        out[tag] = mean
        n = 0 if episodes is None else episodes * len(vals)
        out[f"{tag}_se"] = float(np.sqrt(mean * (1 - mean) / n)) if n else 0.0
    out["overall"] = float(np.mean(rates))
    return out

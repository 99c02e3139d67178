"""Random small UPOMDPs with deliberately colliding observations, for property checks."""

from __future__ import annotations

import numpy as np

from ..core import Level, TableUPOMDP


def random_upomdp(
    rng: np.random.Generator,
    max_levels: int = 4,
    max_steps: int = 2,
    max_actions: int = 3,
    stochastic_prob: float = 0.25,
) -> TableUPOMDP:
    """Draw a UPOMDP with 2..max_levels levels, 1..max_steps steps and 2..max_actions actions.

    Observations come from a two-letter alphabet per depth so that levels share
    information sets; rewards are multiples of 0.25 in [-1, 1].
    """
    n_levels = int(rng.integers(2, max_levels + 1))
    actions = int(rng.integers(2, max_actions + 1))
    steps = int(rng.integers(1, max_steps + 1))
    levels = [Level(i, "random", {"index": i}) for i in range(n_levels)]
    dynamics = {}
    for lv in levels:
        obs = {}
        trans = {}
        counter = [0]

        def new_state(depth: int) -> str:
            counter[0] += 1
            name = f"d{depth}s{counter[0]}"
            obs[name] = f"o{depth}{'ab'[int(rng.integers(2))]}"
            return name

        def reward() -> float:
            return float(rng.integers(-4, 5)) / 4.0

        root = new_state(0)
        frontier = [root]
        for depth in range(steps):
            nxt_frontier = []
            last = depth == steps - 1
            for s in frontier:
                for a in range(actions):
                    if rng.random() < stochastic_prob:
                        outs = []
                        for p in (0.5, 0.5):
                            s2 = new_state(depth + 1)
                            done = last or bool(rng.random() < 0.2)
                            outs.append((p, s2, reward(), done))
                            if not done:
                                nxt_frontier.append(s2)
                    else:
                        s2 = new_state(depth + 1)
                        done = last or bool(rng.random() < 0.2)
                        outs = [(1.0, s2, reward(), done)]
                        if not done:
                            nxt_frontier.append(s2)
                    trans[(s, a)] = tuple(outs)
            frontier = nxt_frontier
        dynamics[lv.id] = {"initial": [(1.0, root)], "obs": obs, "trans": trans}
    return TableUPOMDP(levels, dynamics, action_count=actions, horizon=steps, discount=1.0)

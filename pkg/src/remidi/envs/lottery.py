"""Decision-matrix fixtures: the three-state example and the two-level betting MDP."""

from __future__ import annotations

import numpy as np

from ..core import TableUPOMDP, Level

# Example decision matrix: rows are world states, columns actions a1..a4.
# The source table labels its rows "s1, s1, s2"; three distinct states are meant.
EXAMPLE_UTILITIES = np.array(
    [
        [-100.0, -100.0, -101.0, -101.0],
        [-90.0, -2.0, -1.0, 1.0],
        [-90.0, 0.0, -1.0, -2.0],
    ]
)
EXAMPLE_ROWS = ("s1", "s2", "s3")
EXAMPLE_COLUMNS = ("a1", "a2", "a3", "a4")

STAKE = 100.0
SIGNAL_ACCURACY = 0.99


def lottery_mdp(stake: float = STAKE, accuracy: float = SIGNAL_ACCURACY) -> TableUPOMDP:
    """Two levels A/B emitting a noisy signal s_A/s_B, then a single bet on the level.

    The forced first move from the shared start state carries no decision, so the
    episode starts directly at the signal; policies are pairs (bet at s_A, bet at s_B).
    Action 0 bets on A, action 1 bets on B.
    """
    levels = [Level(0, "lottery", {"name": "A"}), Level(1, "lottery", {"name": "B"})]
    dynamics = {}
    for lv in levels:
        truth = lv.id
        p_a = accuracy if truth == 0 else 1.0 - accuracy
        trans = {}
        for s in ("sA", "sB"):
            for a in (0, 1):
                r = stake if a == truth else -stake
                trans[(s, a)] = ((1.0, "end", r, True),)
        dynamics[lv.id] = {
            "initial": [(p_a, "sA"), (1.0 - p_a, "sB")],
            "obs": {"sA": "sA", "sB": "sB", "end": "end"},
            "trans": trans,
        }
    return TableUPOMDP(levels, dynamics, action_count=2, horizon=1, discount=1.0)


POLICY_LABELS = ("a1a1", "a1a2", "a2a1", "a2a2")


def lottery_policy_table(label: str) -> dict:
    """Trajectory table for a deterministic lottery policy such as ``"a1a2"``."""
    from ..core import Trajectory

    i, j = int(label[1]) - 1, int(label[3]) - 1
    return {Trajectory.initial("sA"): i, Trajectory.initial("sB"): j}

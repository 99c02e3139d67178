"""One-step tabular game: six levels, two actions, optionally paired observations."""

from __future__ import annotations

from ..core import UPOMDP, DomainError, Level

ACTIONS = ("A", "B")

# (reward for A, reward for B) per level, levels numbered 1..6
REWARDS = (
    (-0.1, +0.1),
    (+0.7, -0.7),
    (-0.7, +0.7),
    (+0.1, -0.1),
    (-1.0, +1.0),
    (+1.0, -1.0),
)

TERMINAL = "end"


class TabularGameEnv(UPOMDP):
    """Six one-step levels; ``pairing="paired"`` makes levels 2k-1 and 2k look identical."""

    family = "tabular"
    action_count = 2
    horizon = 1
    deterministic = True

    def __init__(self, pairing: str = "distinct", discount: float = 0.95, rewards=REWARDS):
        if pairing not in ("distinct", "paired"):
            raise ValueError(f"pairing must be 'distinct' or 'paired', got {pairing!r}")
        self.pairing = pairing
        self.discount = discount
        self.rewards = tuple(tuple(map(float, r)) for r in rewards)
        self._levels = tuple(
            Level(i + 1, self.family, {"index": i + 1, "rewards": list(r), "observation": self._obs_for(i + 1)})
            for i, r in enumerate(self.rewards)
        )

    def _obs_for(self, index: int) -> str:
        if self.pairing == "paired":
            index = index if index % 2 == 1 else index - 1
        return f"tau{index}"

    @property
    def levels(self):
        return self._levels

    def contains(self, level):
        return level.family == self.family and 1 <= level.id <= len(self._levels)

    def level(self, index: int) -> Level:
        if not 1 <= index <= len(self._levels):
            raise DomainError(f"no tabular level {index}")
        return self._levels[index - 1]

    def observation_of(self, level: Level) -> str:
        return self._obs_for(level.id)

    def initial(self, level):
        return ((1.0, "start"),)

    def observe(self, level, state):
        return self._obs_for(level.id) if state == "start" else TERMINAL

    def step(self, level, state, action):
        return ((1.0, TERMINAL, self.rewards[level.id - 1][action], True),)

    def observation_groups(self) -> dict[str, list[Level]]:
        """Levels grouped by their (shared) initial observation, in level order."""
        groups: dict[str, list[Level]] = {}
        for lv in self._levels:
            groups.setdefault(self.observation_of(lv), []).append(lv)
        return groups

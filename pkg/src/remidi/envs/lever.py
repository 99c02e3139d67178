"""One-step lever game: pick the correct lever, which is shown to the agent or hidden."""

from __future__ import annotations

import numpy as np

from ..core import UPOMDP, DomainError, Level

LEVER_COUNT = 64
HIDDEN = 0
TERMINAL = "end"


class LeverEnv(UPOMDP):
    """Observation token 0 means the answer is hidden; token ``i+1`` reveals lever ``i``.

    Visible levels pay ``+1/-1``, hidden ones ``+hidden_scale/-hidden_scale``.
    Level id is ``correct + lever_count * visible``.
    """

    family = "lever"
    horizon = 1
    deterministic = True

    def __init__(self, lever_count: int = LEVER_COUNT, hidden_scale: float = 10.0, visible_prob: float = 0.5):
        self.lever_count = int(lever_count)
        self.action_count = self.lever_count
        self.hidden_scale = float(hidden_scale)
        self.visible_prob = float(visible_prob)
        self.discount = 1.0
        self._levels = tuple(
            self.make_level(c, vis) for vis in (False, True) for c in range(self.lever_count)
        )

    def make_level(self, correct: int, visible: bool) -> Level:
        if not 0 <= correct < self.lever_count:
            raise DomainError(f"lever {correct} out of range")
        return Level(int(correct) + self.lever_count * int(visible), self.family,
                     {"correct": int(correct), "visible": bool(visible)})

    @property
    def levels(self):
        return self._levels

    def contains(self, level):
        return (
            level.family == self.family
            and 0 <= level.id < 2 * self.lever_count
            and level.params.get("correct") == level.id % self.lever_count
        )

    def initial(self, level):
        return ((1.0, "start"),)

    def observe(self, level, state):
        if state != "start":
            return TERMINAL
        return level.params["correct"] + 1 if level.params["visible"] else HIDDEN

    def step(self, level, state, action):
        scale = 1.0 if level.params["visible"] else self.hidden_scale
        reward = scale if action == level.params["correct"] else -scale
        return ((1.0, TERMINAL, reward, True),)

    subsets = ("visible", "invisible")

    def subset(self, level):
        return "visible" if level.params["visible"] else "invisible"

    def generate(self, rng: np.random.Generator) -> Level:
        correct = int(rng.integers(self.lever_count))
        visible = bool(rng.random() < self.visible_prob)
        return self.make_level(correct, visible)

    def eval_suite(self) -> list[Level]:
        return list(self._levels)

    def one_hot(self, token) -> np.ndarray:
        """Dense encoding of an observation token (component 0 flags a hidden answer)."""
        vec = np.zeros(self.lever_count + 1)
        if token != TERMINAL:
            vec[int(token)] = 1.0
        return vec

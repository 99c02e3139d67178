"""Miniature gridworlds: T-mazes with a hidden goal, small random mazes, blindfolded mazes.

Coordinates are ``(x, y)`` with ``y`` growing downwards; the outer ring is always wall.
Moves are absolute: 0 up, 1 right, 2 down, 3 left. The agent sees the 3x3 window
around itself plus the direction of its last move.
"""

from __future__ import annotations

from collections import deque
from functools import lru_cache

import numpy as np

from ..core import UPOMDP, DomainError, Level, stable_id

MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))
MAZE_REWARD = 0.9
TMAZE_REWARD = 1.0
BLIND_TOKEN = "0"

KINDS = ("tmaze", "maze")


def _tmaze_cells(size: int) -> tuple[tuple[int, int], frozenset, tuple]:
    """Junction, open cells and arm cells of the T-maze embedded at the top centre."""
    cx = size // 2
    junction = (cx, 1)
    arms = ((cx - 1, 1), (cx + 1, 1))
    open_cells = frozenset({junction, *arms, (cx, 2), (cx, 3)})
    return junction, open_cells, arms


def _observed_region(size: int) -> frozenset:
    """Cells visible from any T-maze position the agent can occupy."""
    junction, open_cells, arms = _tmaze_cells(size)
    seen = set()
    for x, y in (junction, *arms, (junction[0], 2)):
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                seen.add((x + dx, y + dy))
    return frozenset(seen)


class GridEnv(UPOMDP):
    """Family of ``size x size`` grids (outer wall included).

    ``tmaze_prob`` controls the generator's T-maze/maze mix; ``blindfold_prob`` turns
    generated mazes into blindfolded ones whose every observation is a constant token.
    """

    family = "grid"
    action_count = 4
    deterministic = True

    def __init__(
        self,
        size: int = 7,
        horizon: int = 10,
        wall_count: int = 5,
        tmaze_prob: float = 0.5,
        blindfold_prob: float = 0.0,
        show_facing: bool = True,
        max_retries: int = 100,
    ):
        if size < 5 or size > 7:
            raise ValueError("grid size must be between 5 and 7")
        if horizon < 1 or horizon > 20:
            raise ValueError("grid horizon must be between 1 and 20")
        self.size = size
        self.horizon = horizon
        self.wall_count = wall_count
        self.tmaze_prob = tmaze_prob
        self.blindfold_prob = blindfold_prob
        self.show_facing = show_facing
        self.max_retries = max_retries
        self.discount = 1.0
        self._junction, self._tmaze_open, self._arms = _tmaze_cells(size)
        self._decor_cells = tuple(
            (x, y)
            for y in range(1, size - 1)
            for x in range(1, size - 1)
            if (x, y) not in _observed_region(size)
        )
        self._cache: dict[int, tuple] = {}

    # ----- level construction -------------------------------------------------------
    def _make(self, params: dict) -> Level:
        return Level(stable_id(self.family, params), self.family, params)

    def make_tmaze(self, goal_side: int, decoration: int = 0) -> Level:
        """T-maze with goal on the left (0) or right (1) arm.

        ``decoration`` is a bit mask over cells the agent can never observe; it changes
        the layout (and id) without changing play.
        """
        walls = []
        for y in range(1, self.size - 1):
            for x in range(1, self.size - 1):
                cell = (x, y)
                if cell in self._tmaze_open:
                    continue
                if cell in self._decor_cells:
                    if not (decoration >> self._decor_cells.index(cell)) & 1:
                        continue
                walls.append([x, y])
        params = {
            "kind": "tmaze",
            "walls": walls,
            "start": list(self._junction),
            "goal": list(self._arms[goal_side]),
            "blind": False,
        }
        return self._make(params)

    def make_maze(self, start, goal, walls, blind: bool = False, name: str | None = None) -> Level:
        walls = sorted({(int(x), int(y)) for x, y in walls} - {tuple(start), tuple(goal)})
        params = {
            "kind": "maze",
            "walls": [list(w) for w in walls],
            "start": [int(start[0]), int(start[1])],
            "goal": [int(goal[0]), int(goal[1])],
            "blind": bool(blind),
        }
        if name is not None:
            params["name"] = name
        level = self._make(params)
        self.check_level(level)
        return level

    def from_ascii(self, rows: list[str], name: str | None = None, blind: bool = False) -> Level:
        """Build a maze from interior rows using ``#`` wall, ``S`` start, ``G`` goal."""
        inner = self.size - 2
        if len(rows) != inner or any(len(r) != inner for r in rows):
            raise ValueError(f"expected {inner} rows of width {inner}")
        walls, start, goal = [], None, None
        for y, row in enumerate(rows, start=1):
            for x, ch in enumerate(row, start=1):
                if ch == "#":
                    walls.append((x, y))
                elif ch == "S":
                    start = (x, y)
                elif ch == "G":
                    goal = (x, y)
        if start is None or goal is None:
            raise ValueError("layout needs S and G")
        return self.make_maze(start, goal, walls, blind=blind, name=name)

    def _parsed(self, level: Level):
        got = self._cache.get(level.id)
        if got is None:
            p = level.params
            got = (
                frozenset(tuple(w) for w in p["walls"]),
                tuple(p["start"]),
                tuple(p["goal"]),
                p["kind"] == "tmaze",
                bool(p.get("blind", False)),
            )
            self._cache[level.id] = got
        return got

    # ----- UPOMDP contract ---------------------------------------------------------
    def contains(self, level):
        if level.family != self.family:
            return False
        p = level.params
        try:
            if p["kind"] not in KINDS or stable_id(self.family, dict(p)) != level.id:
                return False
            cells = [tuple(p["start"]), tuple(p["goal"])] + [tuple(w) for w in p["walls"]]
        except (KeyError, TypeError):
            return False
        inner = range(1, self.size - 1)
        if any(x not in inner or y not in inner for x, y in cells):
            return False
        walls = {tuple(w) for w in p["walls"]}
        return tuple(p["start"]) not in walls and tuple(p["goal"]) not in walls and p["start"] != p["goal"]

    def _blocked(self, walls, x, y) -> bool:
        return x <= 0 or y <= 0 or x >= self.size - 1 or y >= self.size - 1 or (x, y) in walls

    def initial(self, level):
        _, start, _, _, _ = self._parsed(level)
        return ((1.0, (start[0], start[1], 0)),)

    def observe(self, level, state):
        walls, _, goal, tmaze, blind = self._parsed(level)
        if blind:
            return BLIND_TOKEN
        x, y, facing = state
        chars = []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                cx, cy = x + dx, y + dy
                if dx == 0 and dy == 0:
                    chars.append("@")
                elif self._blocked(walls, cx, cy):
                    chars.append("#")
                elif not tmaze and (cx, cy) == goal:
                    chars.append("G")
                else:
                    chars.append(".")
        window = "".join(chars)
        return f"{facing}|{window}" if self.show_facing else window

    def step(self, level, state, action):
        walls, _, goal, tmaze, _ = self._parsed(level)
        x, y, _ = state
        dx, dy = MOVES[action]
        nx, ny = x + dx, y + dy
        if self._blocked(walls, nx, ny):
            return ((1.0, (x, y, action), 0.0, False),)
        if tmaze:
            reward = TMAZE_REWARD if (nx, ny) == goal else -TMAZE_REWARD
            return ((1.0, (nx, ny, action), reward, True),)
        if (nx, ny) == goal:
            return ((1.0, (nx, ny, action), MAZE_REWARD, True),)
        return ((1.0, (nx, ny, action), 0.0, False),)

    subsets = ("tmaze", "maze", "blind")

    def subset(self, level):
        p = level.params
        if p["kind"] == "tmaze":
            return "tmaze"
        return "blind" if p.get("blind") else "maze"

    def is_success(self, level, total_reward):
        return total_reward > 0

    # ----- analysis helpers --------------------------------------------------------
    def shortest_path(self, level: Level) -> int | None:
        """BFS distance from start to goal (None when unreachable)."""
        walls, start, goal, tmaze, _ = self._parsed(level)
        if tmaze:
            return 1
        seen = {start: 0}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            if cur == goal:
                return seen[cur]
            for dx, dy in MOVES:
                nxt = (cur[0] + dx, cur[1] + dy)
                if nxt not in seen and not self._blocked(walls, *nxt):
                    seen[nxt] = seen[cur] + 1
                    queue.append(nxt)
        return None

    def optimal_return_hint(self, level: Level) -> float:
        """Optimal return from the shortest path (flat goal reward, no discounting)."""
        walls, start, goal, tmaze, _ = self._parsed(level)
        if tmaze:
            return TMAZE_REWARD
        dist = self.shortest_path(level)
        return MAZE_REWARD if dist is not None and dist <= self.horizon else 0.0

    # ----- generation --------------------------------------------------------------
    def generate(self, rng: np.random.Generator) -> Level:
        if rng.random() < self.tmaze_prob:
            side = int(rng.integers(2))
            decoration = int(rng.integers(1 << len(self._decor_cells)))
            return self.make_tmaze(side, decoration)
        blind = bool(rng.random() < self.blindfold_prob)
        return self.generate_maze(rng, blind=blind)

    def generate_maze(self, rng: np.random.Generator, blind: bool = False) -> Level:
        inner = self.size - 2
        for _ in range(self.max_retries):
            cells = rng.choice(inner * inner, size=2, replace=False)
            start = (int(cells[0] % inner) + 1, int(cells[0] // inner) + 1)
            goal = (int(cells[1] % inner) + 1, int(cells[1] // inner) + 1)
            picks = rng.integers(inner * inner, size=self.wall_count)
            walls = {(int(c % inner) + 1, int(c // inner) + 1) for c in picks} - {start, goal}
            level = self.make_maze(start, goal, walls, blind=blind)
            dist = self.shortest_path(level)
            if dist is not None and dist <= self.horizon:
                return level
        raise RuntimeError(f"no solvable maze after {self.max_retries} attempts")

    def eval_suite(self) -> list[Level]:
        return [self.from_ascii(rows, name=name) for name, rows in _EVAL_LAYOUTS[self.size]]

    def render(self, level: Level) -> str:
        walls, start, goal, _, _ = self._parsed(level)
        lines = []
        for y in range(self.size):
            row = []
            for x in range(self.size):
                if (x, y) == start:
                    row.append("S")
                elif (x, y) == goal:
                    row.append("G")
                elif self._blocked(walls, x, y):
                    row.append("#")
                else:
                    row.append(".")
            lines.append("".join(row))
        return "\n".join(lines)


# Fixed evaluation layouts (interior only), keyed by full grid size.
_EVAL_LAYOUTS = {
    7: [
        ("corridor", [".....", "#####", "S...G", "#####", "....."]),
        ("bend", ["S....", ".###.", ".#...", ".#.#.", "...#G"]),
        ("rooms", ["S.#..", "..#..", ".....", "..#..", "..#.G"]),
        ("ushape", ["S.#..", "..#G.", "..#..", ".....", "....."]),
        ("zigzag", ["S#...", ".#.#.", "...#G", "####.", "....."]),
        ("open", [".....", ".S...", ".....", "...G.", "....."]),
        ("pillars", ["S....", ".#.#.", ".....", ".#.#.", "....G"]),
        ("hook", ["..S..", ".###.", ".#G#.", ".#.#.", "....."]),
        ("ledge", [".....", "G###.", "....S", ".####", "....."]),
        ("split", ["S.#.G", "..#..", ".....", "..#..", "..#.."]),
        ("nook", ["#...#", "..#..", ".#S#.", ".....", "G...."]),
        ("cross", ["..#..", "..#..", "#S.G#", "..#..", "..#.."]),
    ],
    5: [
        ("corner", ["S..", "...", "..G"]),
        ("wall", ["S#.", "...", ".#G"]),
        ("edge", ["S.G", "###", "..."]),
        ("snake", ["S#G", ".#.", "..."]),
        ("centre", ["...", ".S.", "..G"]),
        ("hook", ["..S", ".##", "..G"]),
        ("gap", ["S..", "##.", "G.."]),
        ("cup", [".#.", "S#G", "..."]),
        ("line", ["...", "S.G", "..."]),
        ("bottom", ["G..", ".#.", "..S"]),
    ],
}

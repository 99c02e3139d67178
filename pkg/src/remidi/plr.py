"""Scored level buffer with prioritized replay, and the robust PLR curation loop."""

from __future__ import annotations

import enum
import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import UPOMDP, Level, Rollout


class Decision(enum.Enum):
    REPLAY = "replay"
    EXPLORE = "explore"


@dataclass(frozen=True)
class Rank:
    """Probability proportional to rank^(-1/temperature), rank 1 being the highest score."""

    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("rank temperature must be positive")


@dataclass(frozen=True)
class TopK:
    """Uniform over the k highest-scoring entries."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("top-k needs k >= 1")


class Outcome(enum.Enum):
    INSERTED = "inserted"
    REPLACED = "replaced"
    REJECTED = "rejected"
    UPDATED = "updated"


@dataclass(frozen=True)
class ConsiderResult:
    outcome: Outcome
    evicted: Level | None = None


@dataclass
class BufferEntry:
    level: Level
    score: float
    last_sampled: int
    inserted: int


class FrozenBufferError(RuntimeError):
    pass


@dataclass
class LevelBuffer:
    capacity: int
    prioritization: Rank | TopK = field(default_factory=Rank)
    staleness_coeff: float = 0.3
    replay_rate: float = 0.8
    entries: list[BufferEntry] = field(default_factory=list)
    frozen: bool = False

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be non-negative")
        if not 0.0 <= self.staleness_coeff <= 1.0:
            raise ValueError("staleness coefficient must lie in [0, 1]")
        if not 0.0 < self.replay_rate <= 1.0:
            raise ValueError("replay rate must lie in (0, 1]")
        self._index: dict[Level, int] = {e.level: i for i, e in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, level: Level) -> bool:
        return level in self._index

    @property
    def levels(self) -> list[Level]:
        return [e.level for e in self.entries]

    @property
    def scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries], dtype=float)

    def min_score(self) -> float:
        return min((e.score for e in self.entries), default=-math.inf)

    def entry(self, level: Level) -> BufferEntry:
        return self.entries[self._index[level]]

    def _order(self) -> np.ndarray:
        """Entry indices from highest to lowest priority: score, then older insertion, then lower id."""
        scores = np.fromiter((e.score for e in self.entries), float, len(self.entries))
        inserted = np.fromiter((e.inserted for e in self.entries), np.int64, len(self.entries))
        ids = np.fromiter((e.level.id for e in self.entries), np.int64, len(self.entries))
        return np.lexsort((ids, inserted, -scores))

    def score_distribution(self) -> np.ndarray:
        n = len(self.entries)
        order = self._order()
        if isinstance(self.prioritization, TopK):
            weights = np.zeros(n)
            weights[order[: self.prioritization.k]] = 1.0
        else:
            ranks = np.empty(n)
            ranks[order] = np.arange(1, n + 1)
            weights = ranks ** (-1.0 / self.prioritization.temperature)
        return weights / weights.sum()

    def staleness_distribution(self, episode: int) -> np.ndarray:
        last = np.fromiter((e.last_sampled for e in self.entries), float, len(self.entries))
        stale = np.maximum(episode - last, 0.0)
        total = stale.sum()
        if total <= 0:
            return np.full(len(self.entries), 1.0 / len(self.entries))
        return stale / total

    def replay_distribution(self, episode: int) -> np.ndarray:
        if not self.entries:
            raise ValueError("replay distribution of an empty buffer")
        rho = self.staleness_coeff
        p = (1.0 - rho) * self.score_distribution()
        if rho > 0:
            p = p + rho * self.staleness_distribution(episode)
        return p

    def update_score(self, level: Level, score: float) -> None:
        if not math.isfinite(score):
            raise ValueError(f"non-finite score {score!r}")
        self.entry(level).score = float(score)

    def _reindex(self) -> None:
        self._index = {e.level: i for i, e in enumerate(self.entries)}


def decide_replay(buffer: LevelBuffer, rng: np.random.Generator) -> Decision:
    """Replay with probability ``replay_rate`` when the buffer holds anything, else explore."""
    u = rng.random()
    if not buffer.entries:
        return Decision.EXPLORE
    return Decision.REPLAY if u < buffer.replay_rate else Decision.EXPLORE


def sample_replay(buffer: LevelBuffer, episode: int, rng: np.random.Generator) -> Level:
    """Draw a level from the score/staleness mixture and mark it as sampled at ``episode``."""
    if not buffer.entries:
        raise ValueError("cannot sample from an empty buffer")
    p = buffer.replay_distribution(episode)
    i = int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"), len(p) - 1))
    entry = buffer.entries[i]
    entry.last_sampled = episode
    return entry.level


def consider_level(buffer: LevelBuffer, level: Level, score: float, episode: int) -> ConsiderResult:
    """Insert into free space, replace the lowest-scoring entry if beaten, or reject."""
    if buffer.frozen:
        raise FrozenBufferError("buffer no longer accepts levels")
    if not math.isfinite(score):
        raise ValueError(f"non-finite score {score!r}")
    if level in buffer:
        buffer.update_score(level, score)
        return ConsiderResult(Outcome.UPDATED)
    if len(buffer.entries) < buffer.capacity:
        buffer.entries.append(BufferEntry(level, float(score), episode, episode))
        buffer._index[level] = len(buffer.entries) - 1
        return ConsiderResult(Outcome.INSERTED)
    if not buffer.entries:
        return ConsiderResult(Outcome.REJECTED)
    worst = min(
        range(len(buffer.entries)),
        key=lambda i: (buffer.entries[i].score, buffer.entries[i].inserted, buffer.entries[i].level.id),
    )
    if score > buffer.entries[worst].score:
        evicted = buffer.entries[worst].level
        buffer.entries[worst] = BufferEntry(level, float(score), episode, episode)
        buffer._reindex()
        return ConsiderResult(Outcome.REPLACED, evicted)
    return ConsiderResult(Outcome.REJECTED)


# ----- training loop -----------------------------------------------------------------------


class Trainer(Protocol):
    def action_probs(self, trajectory): ...
    def rollout(self, level: Level, upomdp: UPOMDP, rng: np.random.Generator) -> Rollout: ...
    def update(self, rollout: Rollout, start: int = 0) -> int: ...
    def param_hash(self, keys=None) -> str: ...


ScoreFn = Callable[[Level, Sequence[Rollout], object], float]
EvalFn = Callable[[object], dict]


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible generator for one named purpose within a run."""
    tag = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
    return np.random.default_rng([int(seed), tag])


@dataclass
class Streams:
    decide: np.random.Generator
    generate: np.random.Generator
    sample: np.random.Generator
    rollout: np.random.Generator

    @classmethod
    def for_seed(cls, seed: int) -> "Streams":
        return cls(stream(seed, "decide"), stream(seed, "generate"), stream(seed, "sample"), stream(seed, "rollout"))


@dataclass
class PLRHistory:
    records: list[dict] = field(default_factory=list)
    buffer: LevelBuffer | None = None

    def column(self, name: str, default=math.nan) -> np.ndarray:
        return np.array([r.get(name, default) for r in self.records], dtype=float)

    def evaluations(self) -> list[dict]:
        return [r for r in self.records if "eval" in r]


def composition(levels: Sequence[Level], upomdp: UPOMDP) -> dict[str, float]:
    if not levels:
        return {}
    counts = Counter(upomdp.subset(lv) for lv in levels)
    return {k: counts[k] / len(levels) for k in sorted(counts)}


# An admission hook returns None to reject a candidate, else the update start for its rollout.
AdmitFn = Callable[[Level, Rollout], "int | None"]


def curation_step(
    iteration: int,
    buffer: LevelBuffer,
    upomdp: UPOMDP,
    level_generator: Callable[[np.random.Generator], Level],
    trainer: Trainer,
    score_fn: ScoreFn,
    streams: Streams,
    robust: bool = True,
    batch_size: int = 1,
    mask_fn: AdmitFn | None = None,
    rollouts_per_level: int = 1,
) -> dict:
    """One replay-or-explore iteration over a batch of levels; returns a record of what happened.

    All levels of the batch are rolled out with the same parameters, the agent then takes
    one update from the whole batch (``trainer.update_batch`` when available), and every
    level is scored against the updated agent.
    """
    decision = decide_replay(buffer, streams.decide)
    replay = decision is Decision.REPLAY
    record: dict = {"iteration": iteration, "decision": decision.value}
    batch = []
    for _ in range(batch_size):
        level = sample_replay(buffer, iteration, streams.sample) if replay else level_generator(streams.generate)
        rollouts = [trainer.rollout(level, upomdp, streams.rollout) for _ in range(rollouts_per_level)]
        starts = [0 if mask_fn is None else mask_fn(level, ro) for ro in rollouts]
        batch.append((level, rollouts, starts))

    trained: list[Level] = []
    updated_steps = 0
    if replay or not robust:
        items = [
            (ro, ro.trajectory.length if start is None else start)
            for _, rollouts, starts in batch
            for ro, start in zip(rollouts, starts)
        ]
        if hasattr(trainer, "update_batch"):
            updated_steps = trainer.update_batch(items)
        else:
            updated_steps = sum(trainer.update(ro, start) for ro, start in items)
        trained = [level for level, _, _ in batch]

    outcomes: Counter = Counter()
    for level, rollouts, starts in batch:
        score = score_fn(level, rollouts, trainer)
        if replay:
            buffer.update_score(level, score)
        elif any(start is None for start in starts):
            outcomes["filtered"] += 1
        elif buffer.capacity == 0:
            outcomes[Outcome.REJECTED.value] += 1
        else:
            outcomes[consider_level(buffer, level, score, iteration).outcome.value] += 1
    record["updated_steps"] = updated_steps
    record["buffer_size"] = len(buffer)
    record["mean_score"] = float(buffer.scores.mean()) if len(buffer) else math.nan
    for tag, frac in composition(buffer.levels, upomdp).items():
        record[f"buffer_{tag}"] = frac
    for tag, frac in composition(trained, upomdp).items():
        record[f"trained_{tag}"] = frac
    record["trained"] = len(trained)
    for k, v in outcomes.items():
        record[f"explore_{k}"] = v
    return record


def run_plr(
    upomdp: UPOMDP,
    level_generator: Callable[[np.random.Generator], Level],
    agent_trainer: Trainer,
    score_fn: ScoreFn,
    iterations: int,
    seed: int,
    robust: bool = True,
    buffer: LevelBuffer | None = None,
    batch_size: int = 1,
    rollouts_per_level: int = 1,
    eval_fn: EvalFn | None = None,
    eval_every: int = 0,
    callback: Callable[[dict], None] | None = None,
) -> PLRHistory:
    """Curate generated levels into ``buffer`` and train on replayed ones.

    With ``robust`` the agent never learns from explore steps. Evaluation runs every
    ``eval_every`` iterations and after the last one.
    """
    buffer = buffer if buffer is not None else LevelBuffer(64)
    streams = Streams.for_seed(seed)
    history = PLRHistory(buffer=buffer)
    for it in range(iterations):
        rec = curation_step(it, buffer, upomdp, level_generator, agent_trainer, score_fn, streams, robust, batch_size,
                            rollouts_per_level=rollouts_per_level)
        _maybe_eval(rec, it, iterations, eval_fn, eval_every, agent_trainer)
        history.records.append(rec)
        if callback is not None:
            callback(rec)
    return history


def _maybe_eval(rec: dict, it: int, total: int, eval_fn, eval_every: int, trainer) -> None:
    if eval_fn is None:
        return
    if (eval_every and (it + 1) % eval_every == 0) or it + 1 == total:
        rec["eval"] = eval_fn(trainer)

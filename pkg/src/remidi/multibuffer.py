"""Multi-buffer curation with overlap rejection and masked updates (practical ReMiDi)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import UPOMDP, Level, OverlapKind, Policy, Rollout, Trajectory, trajectory_overlap
from .plr import EvalFn, LevelBuffer, PLRHistory, ScoreFn, Streams, Trainer, _maybe_eval, curation_step


@dataclass(frozen=True)
class Admit:
    divergence: int


@dataclass(frozen=True)
class Reject:
    pass


def overlap_filter(
    level: Level,
    policy: Policy | None,
    previous_buffers: Sequence[LevelBuffer],
    upomdp: UPOMDP,
    trajectory: Trajectory,
) -> Admit | Reject:
    """Replay ``trajectory``'s actions on every level of the earlier buffers.

    Rejects when some earlier level reproduces the whole trajectory. Otherwise admits with
    the number of leading observations some earlier level can reproduce: decisions before
    that index are shared with earlier buffers and must not be updated.
    """
    divergence = 0
    for buf in previous_buffers:
        ov = trajectory_overlap(trajectory, policy, buf.levels, upomdp)
        if ov.kind is OverlapKind.COMPLETE:
            return Reject()
        divergence = max(divergence, ov.divergence)
    return Admit(divergence)


def masked_update(agent_trainer: Trainer, rollout: Rollout, divergence_index: int) -> dict:
    """Update only the decisions at step ``divergence_index`` or later."""
    length = rollout.trajectory.length
    if not 0 <= divergence_index <= length:
        raise ValueError(f"divergence index {divergence_index} outside [0, {length}]")
    steps = agent_trainer.update(rollout, divergence_index)
    return {"start": divergence_index, "length": length, "updated_steps": steps}


@dataclass
class RemidiState:
    buffers: list[LevelBuffer]
    active_index: int
    iterations_per_buffer: int
    buffer_count: int
    snapshots: list = field(default_factory=list)

    @property
    def active(self) -> LevelBuffer:
        return self.buffers[self.active_index]

    @property
    def previous(self) -> list[LevelBuffer]:
        return self.buffers[: self.active_index]


def run_remidi(
    upomdp: UPOMDP,
    level_generator: Callable[[np.random.Generator], Level],
    agent_trainer: Trainer,
    score_fn: ScoreFn,
    buffer_count: int,
    iterations_per_buffer: int,
    seed: int,
    total_iterations: int | None = None,
    buffer_factory: Callable[[int], LevelBuffer] | None = None,
    robust: bool = True,
    batch_size: int = 1,
    rollouts_per_level: int = 1,
    eval_fn: EvalFn | None = None,
    eval_every: int = 0,
    callback: Callable[[dict], None] | None = None,
) -> tuple[PLRHistory, RemidiState]:
    """Run curation on a fresh buffer per phase; later phases filter and mask against earlier buffers.

    Phase ``i`` lasts ``iterations_per_buffer`` iterations; after the last buffer opens,
    training stays on it until ``total_iterations`` (default: every phase once).
    ``buffer_factory(i)`` builds the ``i``-th buffer.
    """
    if buffer_count < 1 or iterations_per_buffer < 1:
        raise ValueError("need at least one buffer and one iteration per buffer")
    total = buffer_count * iterations_per_buffer if total_iterations is None else total_iterations
    factory = buffer_factory or (lambda i: LevelBuffer(64))
    state = RemidiState([factory(0)], 0, iterations_per_buffer, buffer_count)
    streams = Streams.for_seed(seed)
    history = PLRHistory(buffer=state.active)

    def mask(level: Level, ro: Rollout):
        verdict = overlap_filter(level, agent_trainer, state.previous, upomdp, ro.trajectory)
        return None if isinstance(verdict, Reject) else verdict.divergence

    for it in range(total):
        if it > 0 and it % iterations_per_buffer == 0 and state.active_index + 1 < buffer_count:
            state.active.frozen = True
            snap = getattr(agent_trainer, "snapshot", None)
            state.snapshots.append(snap() if snap else None)
            state.buffers.append(factory(len(state.buffers)))
            state.active_index += 1
            history.buffer = state.active
        rec = curation_step(
            it,
            state.active,
            upomdp,
            level_generator,
            agent_trainer,
            score_fn,
            streams,
            robust,
            batch_size,
            mask if state.active_index > 0 else None,
            rollouts_per_level,
        )
        rec["phase"] = state.active_index
        _maybe_eval(rec, it, total, eval_fn, eval_every, agent_trainer)
        history.records.append(rec)
        if callback is not None:
            callback(rec)
    return history, state

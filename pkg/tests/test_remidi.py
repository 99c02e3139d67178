import numpy as np
import pytest

from remidi.core import Rollout, Trajectory
from remidi.learners import TabularActorCritic
from remidi.multibuffer import Admit, Reject, masked_update, overlap_filter, run_remidi
from remidi.oracle import make_scorer
from remidi.plr import LevelBuffer, TopK, consider_level, run_plr


def buffer_of(levels):
    buf = LevelBuffer(len(levels))
    for i, lv in enumerate(levels):
        consider_level(buf, lv, 1.0, i)
    return buf


def lever_rollout(lever, level, action):
    obs = lever.observe(level, "start")
    reward = lever.step(level, "start", action)[0][2]
    return Rollout(level, Trajectory.initial(obs).extend(action, "end"), [reward], reward)


def test_filter_rejects_complete_overlap(lever):
    prev = [buffer_of([lever.make_level(5, False)])]
    ro = lever_rollout(lever, lever.make_level(9, False), 3)
    assert overlap_filter(ro.level, None, prev, lever, ro.trajectory) == Reject()


def test_filter_admits_new_first_observation(lever):
    prev = [buffer_of([lever.make_level(5, False)])]
    ro = lever_rollout(lever, lever.make_level(9, True), 9)
    assert overlap_filter(ro.level, None, prev, lever, ro.trajectory) == Admit(0)


def test_filter_partial_overlap_divergence(grid):
    tm = grid.make_tmaze(1)
    jx, jy = grid._junction
    open_cells = {(jx - 1, 1), (jx, 1), (jx + 1, 1), (jx, 2), (jx, 3), (jx + 1, 3)}
    walls = [(x, y) for x in range(1, 6) for y in range(1, 6) if (x, y) not in open_cells]
    maze = grid.make_maze((jx, jy), (jx + 1, 3), walls)
    traj = Trajectory.initial(grid.observe(maze, (jx, jy, 0))).extend(2, grid.observe(maze, (jx, 2, 2)))
    assert overlap_filter(maze, None, [buffer_of([tm])], grid, traj) == Admit(1)


def test_filter_takes_max_over_buffers(lever):
    prev = [buffer_of([lever.make_level(1, True)]), buffer_of([lever.make_level(5, False)])]
    ro = lever_rollout(lever, lever.make_level(9, False), 3)
    assert overlap_filter(ro.level, None, prev, lever, ro.trajectory) == Reject()


def test_masked_update_boundaries(lever):
    level = lever.make_level(4, True)
    ro = lever_rollout(lever, level, 4)
    tr = TabularActorCritic(64)
    assert masked_update(tr, ro, 1) == {"start": 1, "length": 1, "updated_steps": 0}
    assert tr.logits == {}
    assert masked_update(tr, ro, 0)["updated_steps"] == 1
    assert tr.action_probs(ro.trajectory.prefix(0))[4] > 1 / 64
    with pytest.raises(ValueError):
        masked_update(tr, ro, 2)


def test_masked_update_skips_shared_prefix(tab_distinct):
    tr = TabularActorCritic(2)
    key0 = Trajectory.initial("o0")
    traj = key0.extend(0, "o1").extend(1, "end")
    ro = Rollout(tab_distinct.level(1), traj, [1.0, 1.0], 2.0)
    masked_update(tr, ro, 1)
    assert key0 not in tr.logits and traj.prefix(1) in tr.logits


def _lever_parts(lever):
    buf = lambda i: LevelBuffer(16, TopK(8), 0.3, 0.8)
    return TabularActorCritic(64), make_scorer("perfect", lever), buf


def test_single_buffer_equals_plr(lever):
    tr1, score1, factory = _lever_parts(lever)
    h1 = run_plr(lever, lever.generate, tr1, score1, 80, seed=2, buffer=factory(0), batch_size=4)
    tr2, score2, _ = _lever_parts(lever)
    h2, state = run_remidi(lever, lever.generate, tr2, score2, 1, 80, seed=2, buffer_factory=factory, batch_size=4)
    assert tr1.param_hash() == tr2.param_hash()
    assert [lv.id for lv in h1.buffer.levels] == [lv.id for lv in state.buffers[0].levels]
    assert [{k: v for k, v in r.items() if k != "phase"} for r in h2.records] == h1.records


def test_first_phase_equals_plr(lever):
    tr1, score1, factory = _lever_parts(lever)
    h1 = run_plr(lever, lever.generate, tr1, score1, 50, seed=5, buffer=factory(0), batch_size=4)
    tr2, score2, _ = _lever_parts(lever)
    h2, state = run_remidi(lever, lever.generate, tr2, score2, 2, 50, seed=5, buffer_factory=factory, batch_size=4)
    assert [{k: v for k, v in r.items() if k != "phase"} for r in h2.records[:50]] == h1.records
    assert [lv.id for lv in state.buffers[0].levels] == [lv.id for lv in h1.buffer.levels]
    assert state.buffers[0].frozen and not state.buffers[1].frozen


def test_frozen_prefix_never_updated(lever):
    tr, score, factory = _lever_parts(lever)
    hidden = Trajectory.initial(0)
    hashes = []
    per_phase = 150

    def watch(rec):
        hashes.append((rec["phase"], tr.param_hash(keys={hidden})))

    _, state = run_remidi(lever, lever.generate, tr, score, 2, per_phase, seed=0, buffer_factory=factory,
                          batch_size=8, callback=watch)
    assert any(not lv.params["visible"] for lv in state.buffers[0].levels)
    later = {h for phase, h in hashes if phase == 1}
    assert later == {hashes[per_phase - 1][1]}
    assert all(lv.params["visible"] for lv in state.buffers[1].levels)


def test_run_remidi_validation(lever):
    tr, score, factory = _lever_parts(lever)
    with pytest.raises(ValueError):
        run_remidi(lever, lever.generate, tr, score, 0, 10, seed=0)

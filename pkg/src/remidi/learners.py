"""Tabular actor-critic learners: bandit adversary, exact-gradient agent, and a rollout-based trainer."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Hashable, Mapping, Sequence

import numpy as np

from .core import UPOMDP, Level, Rollout, Trajectory, sample_rollout
from .oracle import optimal_return

# Defaults for the one-step tabular experiments.
GAMMA = 0.95
ENTROPY = 0.1
POLICY_LR = 0.01
VALUE_LR = 1.0
UPDATES_PER_SIDE = 5


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def entropy_grad(probs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient of the softmax entropy with respect to the logits."""
    logp = np.log(np.clip(probs, 1e-300, None))
    ent = -(probs * logp).sum(axis=axis, keepdims=True)
    return -probs * (logp + ent)


@dataclass(frozen=True)
class ActorCriticState:
    """Immutable tabular actor-critic parameters keyed by trajectory (or any hashable key)."""

    action_count: int
    policy_logits: Mapping[Hashable, np.ndarray] = field(default_factory=dict)
    value_estimates: Mapping[Hashable, float] = field(default_factory=dict)
    policy_lr: float = POLICY_LR
    value_lr: float = VALUE_LR
    entropy_coeff: float = ENTROPY
    discount: float = GAMMA

    def logits(self, key) -> np.ndarray:
        got = self.policy_logits.get(key)
        return np.zeros(self.action_count) if got is None else got

    def probs(self, key) -> np.ndarray:
        return softmax(self.logits(key))

    def value(self, key) -> float:
        return self.value_estimates.get(key, 0.0)


def ac_update(state: ActorCriticState, key, action: int, advantage: float, target: float | None = None) -> ActorCriticState:
    """One actor-critic step at ``key``; returns a new state.

    Logits move by ``policy_lr * (advantage * grad log pi(action) + entropy_coeff * grad H)``.
    The value moves toward ``target`` (default: current value plus ``advantage``).
    """
    if not math.isfinite(advantage):
        raise ValueError(f"non-finite advantage {advantage!r}")
    logits = state.logits(key)
    probs = softmax(logits)
    grad = -probs.copy()
    grad[action] += 1.0
    new_logits = logits + state.policy_lr * (advantage * grad + state.entropy_coeff * entropy_grad(probs))
    if not np.all(np.isfinite(new_logits)):
        raise ValueError("update produced non-finite logits")
    v = state.value(key)
    tgt = v + advantage if target is None else target
    new_v = v + state.value_lr * (tgt - v)
    logits_map = dict(state.policy_logits)
    logits_map[key] = new_logits
    values = dict(state.value_estimates)
    values[key] = new_v
    return replace(state, policy_logits=logits_map, value_estimates=values)


# ----- compiled one-step games -------------------------------------------------------------


@dataclass
class OneStepGame:
    """Dense arrays for a horizon-1 UPOMDP: per-level rewards and initial-observation groups."""

    levels: tuple
    keys: tuple
    key_of: np.ndarray  # level -> key index
    rewards: np.ndarray  # (levels, actions)
    optimal: np.ndarray  # (levels,)

    @classmethod
    def compile(cls, upomdp: UPOMDP, levels: Sequence[Level] | None = None) -> "OneStepGame":
        levels = tuple(levels if levels is not None else upomdp.levels)
        A = upomdp.action_count
        keys: dict[Trajectory, int] = {}
        key_of = np.zeros(len(levels), dtype=np.int64)
        rewards = np.zeros((len(levels), A))
        for i, lv in enumerate(levels):
            init = [s for p, s in upomdp.initial(lv) if p > 0]
            if len(init) != 1:
                raise ValueError("one-step games need a deterministic start")
            s0 = init[0]
            key = Trajectory.initial(upomdp.observe(lv, s0))
            key_of[i] = keys.setdefault(key, len(keys))
            for a in range(A):
                outs = upomdp.step(lv, s0, a)
                if any(not o[3] for o in outs if o[0] > 0):
                    raise ValueError("one-step games must terminate after the first action")
                rewards[i, a] = math.fsum(o[0] * o[2] for o in outs)
        optimal = np.array([optimal_return(lv, upomdp)[0] for lv in levels])
        return cls(levels, tuple(keys), key_of, rewards, optimal)

    def level_regrets(self, agent_probs: np.ndarray) -> np.ndarray:
        """Exact regrets ``(..., levels)`` from agent probabilities ``(..., keys, actions)``."""
        per_level = agent_probs[..., self.key_of, :]
        return self.optimal - (per_level * self.rewards).sum(-1)

    def key_max_regrets(self, level_regrets: np.ndarray) -> np.ndarray:
        out = np.full(level_regrets.shape[:-1] + (len(self.keys),), -np.inf)
        for k in range(len(self.keys)):
            out[..., k] = level_regrets[..., self.key_of == k].max(-1)
        return out


@dataclass
class LoopConfig:
    iterations: int = 2000
    updates_per_side: int = UPDATES_PER_SIDE
    policy_lr: float = POLICY_LR
    value_lr: float = VALUE_LR
    entropy_coeff: float = ENTROPY
    discount: float = GAMMA
    adversary_lr: float | None = None  # defaults to policy_lr
    adversary_entropy: float | None = None  # defaults to entropy_coeff


@dataclass
class LoopHistory:
    """Per-iteration records, batched over seeds (leading axis)."""

    seeds: tuple
    levels: tuple
    keys: tuple
    adversary_probs: np.ndarray  # (iters, seeds, levels)
    agent_probs: np.ndarray  # (iters, seeds, keys, actions)
    level_regrets: np.ndarray  # (iters, seeds, levels)
    key_regrets: np.ndarray  # (iters, seeds, keys)
    phase: np.ndarray | None = None  # (iters, seeds) adversary index
    phase_supports: list = field(default_factory=list)  # per seed: list of frozensets of level indices
    stop_reasons: list = field(default_factory=list)

    def final(self, name: str) -> np.ndarray:
        return getattr(self, name)[-1]


class _BatchState:
    def __init__(self, n_seeds: int, game: OneStepGame):
        L, K, A = len(game.levels), len(game.keys), game.rewards.shape[1]
        self.adv_logits = np.zeros((n_seeds, L))
        self.adv_value = np.zeros(n_seeds)
        self.agent_logits = np.zeros((n_seeds, K, A))
        self.agent_value = np.zeros((n_seeds, K))


def _masked_softmax(logits: np.ndarray, menu: np.ndarray) -> np.ndarray:
    z = np.where(menu, logits, -np.inf)
    z = z - z.max(-1, keepdims=True)
    e = np.where(menu, np.exp(z), 0.0)
    return e / e.sum(-1, keepdims=True)


def _adversary_step(st: _BatchState, game: OneStepGame, menu: np.ndarray, u: np.ndarray, active: np.ndarray, cfg: LoopConfig):
    """One sampled bandit update per seed; reward is the exact regret of the current agent."""
    lr = cfg.policy_lr if cfg.adversary_lr is None else cfg.adversary_lr
    ent = cfg.entropy_coeff if cfg.adversary_entropy is None else cfg.adversary_entropy
    probs = _masked_softmax(st.adv_logits, menu)
    cdf = np.cumsum(probs, -1)
    choice = np.minimum((cdf <= u[:, None]).sum(-1), probs.shape[1] - 1)
    # never pick an off-menu level because of round-off at the top of the cdf
    off = ~menu[np.arange(len(choice)), choice]
    if off.any():
        choice[off] = np.argmax(np.where(menu[off], np.arange(probs.shape[1]), -1), -1)
    regrets = game.level_regrets(softmax(st.agent_logits))
    reward = regrets[np.arange(len(choice)), choice]
    adv = reward - st.adv_value
    grad = -probs
    grad[np.arange(len(choice)), choice] += 1.0
    ent_grad = _masked_entropy_grad(probs, menu)
    step = lr * (adv[:, None] * grad + ent * ent_grad)
    step = np.where(menu, step, 0.0)
    st.adv_logits += np.where(active[:, None], step, 0.0)
    st.adv_value += np.where(active, cfg.value_lr * adv, 0.0)


def _masked_entropy_grad(probs: np.ndarray, menu: np.ndarray) -> np.ndarray:
    logp = np.where(menu, np.log(np.where(menu, np.clip(probs, 1e-300, None), 1.0)), 0.0)
    ent = -(probs * logp).sum(-1, keepdims=True)
    return np.where(menu, -probs * (logp + ent), 0.0)


def _agent_step(st: _BatchState, game: OneStepGame, adv_probs: np.ndarray, frozen: np.ndarray, active: np.ndarray, cfg: LoopConfig):
    """Exact expected actor-critic step: reward is minus regret, averaged over the adversary."""
    K = len(game.keys)
    probs = softmax(st.agent_logits)  # (S, K, A)
    # reward for action a at key k, weighted by adversary mass: -sum_{theta in k} Lambda(theta) regret_theta(a)
    regret_table = game.optimal[:, None] - game.rewards  # (L, A)
    onehot = np.zeros((len(game.levels), K))
    onehot[np.arange(len(game.levels)), game.key_of] = 1.0
    weighted = np.einsum("sl,lk,la->ska", adv_probs, onehot, regret_table)  # (S, K, A)
    reach = adv_probs @ onehot  # (S, K)
    cond = np.where(reach[..., None] > 0, -weighted / np.where(reach[..., None] > 0, reach[..., None], 1.0), 0.0)
    mean = (probs * cond).sum(-1, keepdims=True)
    pg = probs * (cond - mean)
    step = cfg.policy_lr * reach[..., None] * (pg + cfg.entropy_coeff * entropy_grad(probs))
    mask = (~frozen & active[:, None])[..., None]
    st.agent_logits += np.where(mask, step, 0.0)
    st.agent_value += np.where(mask[..., 0], cfg.value_lr * reach * (mean[..., 0] - st.agent_value), 0.0)


def _seed_uniforms(seeds: Sequence[int], iterations: int, per_iter: int, stream: int) -> np.ndarray:
    return np.stack(
        [np.random.default_rng([int(s), stream]).random((iterations, per_iter)) for s in seeds], axis=1
    )  # (iters, seeds, per_iter)


def _record(hist: dict, st: _BatchState, game: OneStepGame, menu: np.ndarray, t: int):
    agent = softmax(st.agent_logits)
    regs = game.level_regrets(agent)
    hist["adversary_probs"][t] = _masked_softmax(st.adv_logits, menu)
    hist["agent_probs"][t] = agent
    hist["level_regrets"][t] = regs
    hist["key_regrets"][t] = game.key_max_regrets(regs)


def _alloc(iters: int, S: int, game: OneStepGame) -> dict:
    L, K, A = len(game.levels), len(game.keys), game.rewards.shape[1]
    return {
        "adversary_probs": np.zeros((iters, S, L)),
        "agent_probs": np.zeros((iters, S, K, A)),
        "level_regrets": np.zeros((iters, S, L)),
        "key_regrets": np.zeros((iters, S, K)),
    }


def paired_perfect_regret_loop(
    upomdp: UPOMDP,
    levels: Sequence[Level] | None = None,
    iterations: int = 2000,
    seed: int | Sequence[int] = 0,
    updates_per_side: int = UPDATES_PER_SIDE,
    config: LoopConfig | None = None,
) -> LoopHistory:
    """Bandit adversary vs. tabular agent, both trained by actor-critic on exact regret.

    Each iteration runs ``updates_per_side`` sampled adversary updates, then as many
    exact-expectation agent updates. ``seed`` may be a list to run seeds as a batch;
    each seed's trajectory is identical to running it alone.
    """
    cfg = replace(config or LoopConfig(), iterations=iterations, updates_per_side=updates_per_side)
    seeds = tuple(seed) if isinstance(seed, (list, tuple, np.ndarray)) else (int(seed),)
    game = OneStepGame.compile(upomdp, levels)
    S = len(seeds)
    st = _BatchState(S, game)
    menu = np.ones((S, len(game.levels)), dtype=bool)
    frozen = np.zeros((S, len(game.keys)), dtype=bool)
    active = np.ones(S, dtype=bool)
    u = _seed_uniforms(seeds, cfg.iterations, cfg.updates_per_side, 0)
    hist = _alloc(cfg.iterations, S, game)
    for t in range(cfg.iterations):
        for k in range(cfg.updates_per_side):
            _adversary_step(st, game, menu, u[t, :, k], active, cfg)
        adv_probs = _masked_softmax(st.adv_logits, menu)
        for _ in range(cfg.updates_per_side):
            _agent_step(st, game, adv_probs, frozen, active, cfg)
        _record(hist, st, game, menu, t)
    return LoopHistory(seeds, game.levels, game.keys, **hist)


def remidi_tabular_loop(
    upomdp: UPOMDP,
    levels: Sequence[Level] | None = None,
    iterations_per_adversary: int = 2000,
    seed: int | Sequence[int] = 0,
    adversary_count: int = 3,
    updates_per_side: int = UPDATES_PER_SIDE,
    config: LoopConfig | None = None,
    support_factor: float = 0.5,
) -> LoopHistory:
    """A sequence of fresh bandit adversaries, each restricted to levels unseen by earlier ones.

    After each phase the adversary's support (probability above ``support_factor`` divided
    by the menu size) is recorded; later menus drop every level whose initial observation
    occurs in an earlier support, and the agent no longer updates those observations.
    A seed whose menu becomes empty stops early with a recorded reason.
    """
    cfg = replace(config or LoopConfig(), iterations=iterations_per_adversary, updates_per_side=updates_per_side)
    seeds = tuple(seed) if isinstance(seed, (list, tuple, np.ndarray)) else (int(seed),)
    game = OneStepGame.compile(upomdp, levels)
    S, L, K = len(seeds), len(game.levels), len(game.keys)
    st = _BatchState(S, game)
    menu = np.ones((S, L), dtype=bool)
    frozen = np.zeros((S, K), dtype=bool)
    active = np.ones(S, dtype=bool)
    total = cfg.iterations * adversary_count
    u = _seed_uniforms(seeds, total, cfg.updates_per_side, 0)
    hist = _alloc(total, S, game)
    phase = np.zeros((total, S), dtype=np.int64)
    supports: list[list[frozenset]] = [[] for _ in range(S)]
    reasons = ["completed all adversaries"] * S
    t = 0
    for adv_i in range(adversary_count):
        if adv_i > 0:
            probs = _masked_softmax(st.adv_logits, menu)
            for s in range(S):
                if not active[s]:
                    continue
                thresh = support_factor / menu[s].sum()
                supp = frozenset(int(i) for i in np.flatnonzero(menu[s] & (probs[s] > thresh)))
                supports[s].append(supp)
                seen_keys = {int(game.key_of[i]) for i in supp}
                for k in seen_keys:
                    frozen[s, k] = True
                menu[s] &= ~np.isin(game.key_of, list(seen_keys))
                if not menu[s].any():
                    active[s] = False
                    reasons[s] = f"menu empty before adversary {adv_i + 1}"
            st.adv_logits[:] = 0.0
            st.adv_value[:] = 0.0
            if not active.any():
                break
        safe_menu = np.where(active[:, None], menu, True)
        for _ in range(cfg.iterations):
            for k in range(cfg.updates_per_side):
                _adversary_step(st, game, safe_menu, u[t, :, k], active, cfg)
            adv_probs = _masked_softmax(st.adv_logits, safe_menu)
            for _ in range(cfg.updates_per_side):
                _agent_step(st, game, adv_probs, frozen, active, cfg)
            _record(hist, st, game, safe_menu, t)
            phase[t] = adv_i
            t += 1
    if active.any():
        probs = _masked_softmax(st.adv_logits, np.where(active[:, None], menu, True))
        for s in range(S):
            if active[s]:
                thresh = support_factor / menu[s].sum()
                supports[s].append(frozenset(int(i) for i in np.flatnonzero(menu[s] & (probs[s] > thresh))))
    hist = {k: v[:t] for k, v in hist.items()}
    return LoopHistory(seeds, game.levels, game.keys, phase=phase[:t], phase_supports=supports,
                       stop_reasons=reasons, **hist)


# ----- rollout-based trainer ---------------------------------------------------------------


class TabularActorCritic:
    """Softmax policy with per-key value estimates, trained from sampled rollouts.

    ``keys="history"`` keys parameters by the whole trajectory (perfect recall);
    ``keys="observation"`` keys them by the latest observation only, which shares what is
    learned across levels that look alike. Implements the policy protocol, so it can be
    evaluated exactly with the core tools. Returns are Monte Carlo; advantages are
    ``G_t - V(key_t)``.
    """

    def __init__(
        self,
        action_count: int,
        policy_lr: float = 0.5,
        value_lr: float = 0.1,
        entropy_coeff: float = 0.0,
        discount: float = 0.99,
        keys: str = "history",
    ):
        if keys not in ("history", "observation"):
            raise ValueError(f"keys must be 'history' or 'observation', got {keys!r}")
        self.action_count = int(action_count)
        self.policy_lr = policy_lr
        self.value_lr = value_lr
        self.entropy_coeff = entropy_coeff
        self.discount = discount
        self.keys = keys
        self.logits: dict[Hashable, np.ndarray] = {}
        self.values: dict[Hashable, float] = {}
        self._probs: dict[Hashable, np.ndarray] = {}
        self._uniform = np.full(self.action_count, 1.0 / self.action_count)
        self._uniform.setflags(write=False)

    @property
    def observation_only(self) -> bool:
        return self.keys == "observation"

    def key(self, trajectory: Trajectory) -> Hashable:
        return trajectory[-1] if self.keys == "observation" else trajectory

    def action_probs(self, trajectory: Trajectory) -> np.ndarray:
        key = self.key(trajectory)
        got = self._probs.get(key)
        if got is None:
            logits = self.logits.get(key)
            if logits is None:
                return self._uniform
            got = softmax(logits)
            got.setflags(write=False)
            self._probs[key] = got
        return got

    def value(self, key: Trajectory) -> float:
        return self.values.get(key, 0.0)

    def rollout(self, level: Level, upomdp: UPOMDP, rng: np.random.Generator) -> Rollout:
        ro = sample_rollout(self, level, upomdp, rng)
        ro.values = [self.value(self.key(k)) for k in ro.keys]
        return ro

    def _returns(self, rollout: Rollout) -> np.ndarray:
        T = rollout.trajectory.length
        returns = np.zeros(T)
        g = 0.0
        for t in range(T - 1, -1, -1):
            g = rollout.rewards[t] + self.discount * g
            returns[t] = g
        return returns

    def _step(self, key, samples: list[tuple[int, float]]) -> None:
        """Apply the mean actor-critic gradient of ``samples`` (action, return) at one key."""
        v = self.values.get(key, 0.0)
        logits = self.logits.get(key)
        if logits is None:
            logits = np.zeros(self.action_count)
        probs = softmax(logits)
        grad = np.zeros(self.action_count)
        adv_sum = 0.0
        for action, ret in samples:
            adv = ret - v
            if not math.isfinite(adv):
                raise ValueError("non-finite advantage")
            grad -= adv * probs
            grad[action] += adv
            adv_sum += adv
        n = len(samples)
        grad /= n
        if self.entropy_coeff:
            grad += self.entropy_coeff * entropy_grad(probs)
        self.logits[key] = logits + self.policy_lr * grad
        self._probs.pop(key, None)
        self.values[key] = v + self.value_lr * adv_sum / n

    def update(self, rollout: Rollout, start: int = 0) -> int:
        """Actor-critic step on every decision of ``rollout`` from step ``start`` on; returns steps updated."""
        T = rollout.trajectory.length
        if not 0 <= start <= T:
            raise ValueError(f"update start {start} outside [0, {T}]")
        returns = self._returns(rollout)
        for t in range(start, T):
            self._step(self.key(rollout.keys[t]), [(rollout.actions[t], returns[t])])
        return T - start

    def update_batch(self, items: Sequence[tuple[Rollout, int]]) -> int:
        """One step per key from the mean gradient over every (rollout, start) pair.

        Keys visited several times in the batch move once, by the average of their
        per-visit gradients, as in a minibatch update over parallel episodes.
        """
        grouped: dict[Hashable, list[tuple[int, float]]] = {}
        total = 0
        for rollout, start in items:
            T = rollout.trajectory.length
            if not 0 <= start <= T:
                raise ValueError(f"update start {start} outside [0, {T}]")
            returns = self._returns(rollout)
            for t in range(start, T):
                grouped.setdefault(self.key(rollout.keys[t]), []).append((rollout.actions[t], returns[t]))
            total += T - start
        for key, samples in grouped.items():
            self._step(key, samples)
        return total

    def snapshot(self) -> "TabularActorCritic":
        """Frozen copy of the current parameters (a policy that no longer changes)."""
        out = TabularActorCritic(
            self.action_count, self.policy_lr, self.value_lr, self.entropy_coeff, self.discount, self.keys
        )
        out.logits = {k: v.copy() for k, v in self.logits.items()}
        out.values = dict(self.values)
        return out

    def param_hash(self, keys=None) -> str:
        h = hashlib.sha256()
        items = sorted(self.logits.items(), key=lambda kv: repr(kv[0]))
        for k, v in items:
            if keys is not None and k not in keys:
                continue
            h.update(repr(k).encode())
            h.update(np.ascontiguousarray(v).tobytes())
            h.update(np.float64(self.values.get(k, 0.0)).tobytes())
        return h.hexdigest()

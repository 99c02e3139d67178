"""Finite underspecified POMDPs: levels, trajectories, policies and exact rollout enumeration."""

from __future__ import annotations

import abc
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Iterator, Mapping, Protocol, Sequence

import numpy as np

DEFAULT_NODE_BUDGET = 10**6
PROB_ATOL = 1e-12


class DomainError(ValueError):
    """A level or trajectory that does not belong to the UPOMDP it was used with."""


class BudgetExceeded(RuntimeError):
    """Raised when an exact enumeration would exceed its node budget."""

    def __init__(self, what: str, count: int, budget: int):
        super().__init__(f"{what}: {count} exceeds budget {budget}")
        self.count = count
        self.budget = budget


def stable_id(family: str, params: Mapping[str, Any]) -> int:
    """Deterministic 48-bit id derived from a level's canonical JSON."""
    blob = json.dumps({"family": family, "params": params}, sort_keys=True, separators=(",", ":"))
    return int(hashlib.sha256(blob.encode()).hexdigest()[:12], 16)


@dataclass(frozen=True, eq=False)
class Level:
    """One concrete POMDP of a level space.

    Identity (equality and hashing) is ``(family, id)``; params must be JSON-native so
    that levels round-trip through :meth:`to_json`.
    """

    id: int
    family: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Level):
            return NotImplemented
        return self.id == other.id and self.family == other.family

    def __hash__(self) -> int:
        return hash((self.family, self.id))

    def __repr__(self) -> str:
        return f"Level({self.family}#{self.id})"

    def to_dict(self) -> dict:
        return {"family": self.family, "id": self.id, "params": dict(self.params)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Level":
        return cls(id=int(data["id"]), family=str(data["family"]), params=dict(data.get("params", {})))

    @classmethod
    def from_json(cls, text: str) -> "Level":
        return cls.from_dict(json.loads(text))


class Trajectory(tuple):
    """Alternating history ``(o0, a0, o1, ..., ot)``; always ends in an observation.

    A plain tuple underneath, so equality and hashing are structural and cheap.
    """

    __slots__ = ()

    def __new__(cls, entries: Iterable[Hashable] = ()):
        entries = tuple(entries)
        if len(entries) % 2 != 1:
            raise ValueError(f"trajectory must have odd length (obs, act, ..., obs), got {len(entries)}")
        for action in entries[1::2]:
            if not isinstance(action, (int, np.integer)):
                raise ValueError(f"actions must be integers, got {action!r}")
        return tuple.__new__(cls, entries)

    @classmethod
    def initial(cls, observation: Hashable) -> "Trajectory":
        return tuple.__new__(cls, (observation,))

    @property
    def length(self) -> int:
        """Number of actions taken."""
        return len(self) // 2

    @property
    def observations(self) -> tuple:
        return tuple(self[0::2])

    @property
    def actions(self) -> tuple:
        return tuple(self[1::2])

    @property
    def last_observation(self) -> Hashable:
        return self[-1]

    def extend(self, action: int, observation: Hashable) -> "Trajectory":
        return tuple.__new__(Trajectory, tuple(self) + (int(action), observation))

    def prefix(self, steps: int) -> "Trajectory":
        """The prefix after ``steps`` actions."""
        if not 0 <= steps <= self.length:
            raise ValueError(f"prefix length {steps} outside [0, {self.length}]")
        return tuple.__new__(Trajectory, tuple(self)[: 2 * steps + 1])

    def prefixes(self) -> Iterator["Trajectory"]:
        for t in range(self.length + 1):
            yield self.prefix(t)

    def parent(self) -> tuple["Trajectory", int] | None:
        """The previous decision key and the action taken there, or None at the root."""
        if self.length == 0:
            return None
        return self.prefix(self.length - 1), int(self[-2])


class Policy(Protocol):
    action_count: int

    def action_probs(self, trajectory: Trajectory) -> np.ndarray: ...


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _validated_distribution(probs: Sequence[float], action_count: int) -> np.ndarray:
    arr = np.asarray(probs, dtype=float)
    if arr.shape != (action_count,):
        raise ValueError(f"expected {action_count} action probabilities, got shape {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"invalid probabilities {arr}")
    if abs(arr.sum() - 1.0) > PROB_ATOL * max(1, action_count):
        raise ValueError(f"probabilities sum to {arr.sum()!r}, not 1")
    return _frozen(arr.copy())


class TabularPolicy:
    """Trajectory-conditioned policy stored as a table.

    Keys missing from the table use ``default`` (uniform unless given).
    """

    def __init__(
        self,
        action_count: int,
        table: Mapping[Trajectory, Sequence[float]] | None = None,
        default: Sequence[float] | None = None,
    ):
        self.action_count = int(action_count)
        if default is None:
            default = np.full(self.action_count, 1.0 / self.action_count)
        self.default = _validated_distribution(default, self.action_count)
        self._table: dict[Trajectory, np.ndarray] = {}
        for key, probs in (table or {}).items():
            if not isinstance(key, Trajectory):
                key = Trajectory(key)
            self._table[key] = _validated_distribution(probs, self.action_count)

    @classmethod
    def uniform(cls, action_count: int) -> "TabularPolicy":
        return cls(action_count)

    @classmethod
    def from_policy(cls, policy: Policy, keys: Iterable[Trajectory]) -> "TabularPolicy":
        """Materialise any policy on a finite set of keys."""
        out = cls(policy.action_count)
        for key in keys:
            out._table[key] = _frozen(np.array(policy.action_probs(key), dtype=float))
        return out

    @property
    def table(self) -> Mapping[Trajectory, np.ndarray]:
        return dict(self._table)

    def action_probs(self, trajectory: Trajectory) -> np.ndarray:
        return self._table.get(trajectory, self.default)

    def __contains__(self, key: Trajectory) -> bool:
        return key in self._table

    def keys(self):
        return self._table.keys()

    def with_entries(self, entries: Mapping[Trajectory, Sequence[float]]) -> "TabularPolicy":
        """Copy with some keys overridden."""
        out = TabularPolicy(self.action_count, default=self.default)
        out._table = dict(self._table)
        for key, probs in entries.items():
            out._table[key] = _validated_distribution(probs, self.action_count)
        return out

    def same_on(self, other: Policy, keys: Iterable[Trajectory]) -> bool:
        return all(np.array_equal(self.action_probs(k), other.action_probs(k)) for k in keys)

    def __repr__(self) -> str:
        return f"TabularPolicy(actions={self.action_count}, keys={len(self._table)})"


class DeterministicPolicy:
    """One action per trajectory key.

    Keys outside ``table`` defer to ``fallback`` (a base policy on frozen trajectories)
    or, without one, to the uniform distribution.
    """

    def __init__(self, action_count: int, table: Mapping[Trajectory, int], fallback: Policy | None = None):
        self.action_count = int(action_count)
        self.table = dict(table)
        self.fallback = fallback
        self._eye = _frozen(np.eye(self.action_count))
        self._uniform = _frozen(np.full(self.action_count, 1.0 / self.action_count))
        for key, action in self.table.items():
            if not 0 <= action < self.action_count:
                raise ValueError(f"action {action} out of range at {key}")

    def action_probs(self, trajectory: Trajectory) -> np.ndarray:
        action = self.table.get(trajectory)
        if action is not None:
            return self._eye[action]
        if self.fallback is not None:
            return self.fallback.action_probs(trajectory)
        return self._uniform

    def __repr__(self) -> str:
        body = ", ".join(f"{k!r}:{a}" for k, a in sorted(self.table.items(), key=lambda kv: repr(kv[0])))
        return f"DeterministicPolicy({body})"


class MixturePolicy:
    """Root-level coin flip: one component policy controls the whole episode."""

    def __init__(self, components: Sequence[Policy], weights: Sequence[float]):
        if len(components) != len(weights) or not components:
            raise ValueError("need one weight per component")
        self.components = list(components)
        self.weights = _validated_distribution(weights, len(weights))
        self.action_count = components[0].action_count

    def action_probs(self, trajectory: Trajectory) -> np.ndarray:
        raise TypeError("a root-level mixture has no per-trajectory distribution; enumerate its components")


class UPOMDP(abc.ABC):
    """Finite UPOMDP with per-level dynamics.

    Subclasses define the initial state distribution, a deterministic observation of
    each state and the transition/reward kernel. Observations are opaque hashable
    tokens. Episodes are truncated after ``horizon`` actions.
    """

    action_count: int
    horizon: int
    discount: float = 1.0
    deterministic: bool = False

    @property
    def levels(self) -> tuple[Level, ...] | None:
        """The finite level space, or None when it is only reachable via a generator."""
        return None

    def contains(self, level: Level) -> bool:
        levels = self.levels
        return levels is not None and level in set(levels)

    def check_level(self, level: Level) -> None:
        if not self.contains(level):
            raise DomainError(f"{level!r} is not in the level space of {type(self).__name__}")

    @abc.abstractmethod
    def initial(self, level: Level) -> Sequence[tuple[float, Hashable]]:
        """Initial state distribution as (probability, state) pairs."""

    @abc.abstractmethod
    def observe(self, level: Level, state: Hashable) -> Hashable:
        """Observation emitted in ``state``."""

    @abc.abstractmethod
    def step(self, level: Level, state: Hashable, action: int) -> Sequence[tuple[float, Hashable, float, bool]]:
        """Outcomes of ``action`` as (probability, next state, reward, done)."""

    def initial_observations(self, level: Level) -> frozenset:
        return frozenset(self.observe(level, s) for p, s in self.initial(level) if p > 0)

    def is_success(self, level: Level, total_reward: float) -> bool:
        return total_reward > 0

    def subset(self, level: Level) -> str:
        """Evaluation subset tag used by solve-rate summaries."""
        return level.family

    @property
    def subsets(self) -> tuple[str, ...]:
        """Every subset tag this family can produce, in a fixed order."""
        levels = self.levels
        if levels is None:
            return ()
        return tuple(sorted({self.subset(lv) for lv in levels}))


class TableUPOMDP(UPOMDP):
    """UPOMDP given by explicit per-level tables.

    ``dynamics[level_id]`` is a dict with keys ``initial`` (list of (p, state)),
    ``obs`` (state -> observation) and ``trans`` ((state, action) -> list of
    (p, next_state, reward, done)). State-action pairs missing from ``trans`` end the
    episode with zero reward.
    """

    def __init__(
        self,
        levels: Sequence[Level],
        dynamics: Mapping[int, Mapping[str, Any]],
        action_count: int,
        horizon: int,
        discount: float = 1.0,
    ):
        if not 0 < discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        ids = [lv.id for lv in levels]
        if len(set(ids)) != len(ids):
            raise ValueError("level ids must be unique")
        self._levels = tuple(levels)
        self._by_id = {lv.id: lv for lv in levels}
        self.action_count = int(action_count)
        self.horizon = int(horizon)
        self.discount = float(discount)
        self._dyn = {lid: dynamics[lid] for lid in ids}
        det = True
        for lid, dyn in self._dyn.items():
            _check_dist([p for p, _ in dyn["initial"]], f"level {lid} initial")
            det &= sum(1 for p, _ in dyn["initial"] if p > 0) == 1
            for (s, a), outs in dyn["trans"].items():
                _check_dist([o[0] for o in outs], f"level {lid} transition {s!r},{a}")
                det &= sum(1 for o in outs if o[0] > 0) == 1
                if not all(math.isfinite(o[2]) for o in outs):
                    raise ValueError(f"non-finite reward in level {lid}")
        self.deterministic = det

    @property
    def levels(self) -> tuple[Level, ...]:
        return self._levels

    def contains(self, level: Level) -> bool:
        return self._by_id.get(level.id) == level

    def level(self, level_id: int) -> Level:
        return self._by_id[level_id]

    def initial(self, level):
        return self._dyn[level.id]["initial"]

    def observe(self, level, state):
        return self._dyn[level.id]["obs"][state]

    def step(self, level, state, action):
        return self._dyn[level.id]["trans"].get((state, action), ((1.0, state, 0.0, True),))


def _check_dist(probs: Sequence[float], what: str) -> None:
    if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > PROB_ATOL:
        raise ValueError(f"{what}: probabilities {probs} do not form a distribution")


@dataclass(frozen=True)
class Outcome:
    trajectory: Trajectory
    probability: float
    ret: float


def _walk(upomdp: UPOMDP, level: Level, policy: Policy | None, budget: int, weight: float = 1.0):
    """Depth-first expansion of every positive-probability branch.

    Yields ``("node", trajectory, state, prob, t)`` before acting at each decision point
    and ``("leaf", trajectory, prob, ret)`` at episode ends. With ``policy=None`` all
    actions are expanded with weight 1, so ``prob`` is the chance probability only.
    """
    A = upomdp.action_count
    gamma = upomdp.discount
    horizon = upomdp.horizon
    count = 0
    stack = []
    for p0, s0 in reversed(list(upomdp.initial(level))):
        if p0 > 0:
            stack.append((False, Trajectory.initial(upomdp.observe(level, s0)), s0, weight * p0, 0.0, 0))
    while stack:
        done, traj, state, prob, ret, t = stack.pop()
        if done or t >= horizon:
            yield ("leaf", traj, prob, ret)
            continue
        yield ("node", traj, state, prob, t)
        probs = policy.action_probs(traj) if policy is not None else None
        children = []
        disc = gamma**t
        for a in range(A):
            pa = 1.0 if probs is None else probs[a]
            if pa <= 0:
                continue
            for pt, nxt, reward, ended in upomdp.step(level, state, a):
                if pt <= 0:
                    continue
                count += 1
                if count > budget:
                    raise BudgetExceeded(f"enumeration of {level!r}", count, budget)
                ntraj = traj.extend(a, upomdp.observe(level, nxt))
                children.append((bool(ended), ntraj, nxt, prob * pa * pt, ret + disc * reward, t + 1))
        stack.extend(reversed(children))


def enumerate_outcomes(
    policy: Policy, level: Level, upomdp: UPOMDP, budget: int = DEFAULT_NODE_BUDGET
) -> list[Outcome]:
    """Every terminal trajectory with its probability and discounted return.

    Mixture policies are expanded component by component (root-level coin flip).
    """
    upomdp.check_level(level)
    if isinstance(policy, MixturePolicy):
        out = []
        for comp, w in zip(policy.components, policy.weights):
            if w > 0:
                out.extend(
                    Outcome(o.trajectory, w * o.probability, o.ret)
                    for o in enumerate_outcomes(comp, level, upomdp, budget)
                )
        return out
    return [Outcome(item[1], item[2], item[3]) for item in _walk(upomdp, level, policy, budget) if item[0] == "leaf"]


def _one_step_table(upomdp: UPOMDP, level: Level) -> list:
    """Per start state: probability, first trajectory key and expected reward of each action (cached)."""
    cache = upomdp.__dict__.setdefault("_one_step_cache", {})
    got = cache.get(level)
    if got is None:
        got = []
        for p0, s0 in upomdp.initial(level):
            if p0 <= 0:
                continue
            rewards = np.array(
                [math.fsum(pt * r for pt, _s, r, _d in upomdp.step(level, s0, a) if pt > 0) for a in range(upomdp.action_count)]
            )
            got.append((p0, Trajectory.initial(upomdp.observe(level, s0)), rewards))
        cache[level] = got
    return got


def expected_return(policy: Policy, level: Level, upomdp: UPOMDP, budget: int = DEFAULT_NODE_BUDGET) -> float:
    """Exact expected discounted return of ``policy`` on ``level``.

    Computed by backward recursion; child trajectories are only built where play continues.
    """
    upomdp.check_level(level)
    if isinstance(policy, MixturePolicy):
        return math.fsum(
            w * expected_return(c, level, upomdp, budget) for c, w in zip(policy.components, policy.weights) if w > 0
        )
    A, gamma, horizon = upomdp.action_count, upomdp.discount, upomdp.horizon
    if horizon == 1:
        return math.fsum(
            p0 * float(policy.action_probs(key) @ rewards) for p0, key, rewards in _one_step_table(upomdp, level)
        )
    count = [0]

    def value(traj: Trajectory, state, t: int) -> float:
        if t >= horizon:
            return 0.0
        probs = policy.action_probs(traj)
        terms = []
        for a in range(A):
            pa = probs[a]
            if pa <= 0:
                continue
            for pt, nxt, reward, ended in upomdp.step(level, state, a):
                if pt <= 0:
                    continue
                count[0] += 1
                if count[0] > budget:
                    raise BudgetExceeded(f"enumeration of {level!r}", count[0], budget)
                v = reward
                if not ended and t + 1 < horizon:
                    v += gamma * value(traj.extend(a, upomdp.observe(level, nxt)), nxt, t + 1)
                terms.append(pa * pt * v)
        return math.fsum(terms)

    return math.fsum(
        p0 * value(Trajectory.initial(upomdp.observe(level, s0)), s0, 0) for p0, s0 in upomdp.initial(level) if p0 > 0
    )


def success_probability(policy: Policy, level: Level, upomdp: UPOMDP, budget: int = DEFAULT_NODE_BUDGET) -> float:
    """Exact probability that an episode's return satisfies ``upomdp.is_success``.

    Policies flagged ``observation_only`` (action probabilities depend on the latest
    observation alone) are evaluated by dynamic programming over (state, step, return so
    far), which stays polynomial in the horizon; others are enumerated outcome by outcome.
    """
    upomdp.check_level(level)
    if not getattr(policy, "observation_only", False):
        return math.fsum(
            o.probability for o in enumerate_outcomes(policy, level, upomdp, budget) if upomdp.is_success(level, o.ret)
        )
    A, gamma, horizon = upomdp.action_count, upomdp.discount, upomdp.horizon
    memo: dict = {}

    def prob(state, t: int, ret: float) -> float:
        if t >= horizon:
            return float(upomdp.is_success(level, ret))
        key = (state, t, ret)
        got = memo.get(key)
        if got is not None:
            return got
        if len(memo) >= budget:
            raise BudgetExceeded(f"success probability on {level!r}", len(memo), budget)
        probs = policy.action_probs(Trajectory.initial(upomdp.observe(level, state)))
        terms = []
        for a in range(A):
            if probs[a] <= 0:
                continue
            for pt, nxt, reward, ended in upomdp.step(level, state, a):
                if pt <= 0:
                    continue
                new_ret = ret + gamma**t * reward
                p = float(upomdp.is_success(level, new_ret)) if ended else prob(nxt, t + 1, new_ret)
                terms.append(probs[a] * pt * p)
        memo[key] = got = math.fsum(terms)
        return got

    return math.fsum(p0 * prob(s0, 0, 0.0) for p0, s0 in upomdp.initial(level) if p0 > 0)


class RealisableSet:
    """Prefix-closed set of trajectories possible under a policy on some set of levels."""

    def __init__(self, trajectories: Iterable[Trajectory], source_policy: Policy | None, source_levels: Iterable[Level]):
        self.trajectories = frozenset(trajectories)
        self.source_policy = source_policy
        self.source_levels = frozenset(source_levels)

    def __contains__(self, trajectory: object) -> bool:
        return trajectory in self.trajectories

    def __iter__(self):
        return iter(self.trajectories)

    def __len__(self) -> int:
        return len(self.trajectories)

    def is_prefix_closed(self) -> bool:
        return all(p in self.trajectories for t in self.trajectories for p in t.prefixes())

    @classmethod
    def empty(cls) -> "RealisableSet":
        return cls((), None, ())


def realisable_trajectories(
    policy: Policy, levels: Iterable[Level], upomdp: UPOMDP, budget: int = DEFAULT_NODE_BUDGET
) -> RealisableSet:
    """All trajectories (and prefixes) with strictly positive probability under ``policy`` on some level."""
    levels = list(levels)
    found: set[Trajectory] = set()
    for level in levels:
        upomdp.check_level(level)
        for item in _walk(upomdp, level, policy, budget):
            found.add(item[1])
    return RealisableSet(found, policy, levels)


def decision_keys(upomdp: UPOMDP, levels: Iterable[Level], budget: int = DEFAULT_NODE_BUDGET) -> list[Trajectory]:
    """Decision-point trajectories reachable under some action sequence, in a stable order."""
    seen: dict[Trajectory, None] = {}
    for level in levels:
        for item in _walk(upomdp, level, None, budget):
            if item[0] == "node":
                seen.setdefault(item[1], None)
    return list(seen)


class OverlapKind(enum.Enum):
    COMPLETE = "complete"
    PARTIAL = "partial"
    NONE = "none"


@dataclass(frozen=True)
class Overlap:
    kind: OverlapKind
    divergence: int
    """Number of leading observations forming a realisable prefix (0 when even o0 is new)."""


def matched_prefix(trajectory: Trajectory, level: Level, upomdp: UPOMDP, policy: Policy | None = None) -> int:
    """Count of leading observations of ``trajectory`` reproducible on ``level``.

    Replays the trajectory's actions from every consistent state; with a policy, an
    action the policy never takes at that prefix ends the match.
    """
    obs = trajectory.observations
    acts = trajectory.actions
    states = [s for p, s in upomdp.initial(level) if p > 0 and upomdp.observe(level, s) == obs[0]]
    if not states:
        return 0
    matched = 1
    for t, action in enumerate(acts):
        if t >= upomdp.horizon:
            break
        if policy is not None and policy.action_probs(trajectory.prefix(t))[action] <= 0:
            break
        nxt = []
        for s in states:
            for pt, s2, _r, done in upomdp.step(level, s, action):
                if pt > 0 and upomdp.observe(level, s2) == obs[t + 1]:
                    nxt.append((s2, done))
        if not nxt:
            break
        matched += 1
        live = [s2 for s2, done in nxt if not done]
        if not live:
            break
        states = list(dict.fromkeys(live))
    return matched


def trajectory_overlap(trajectory: Trajectory, policy: Policy | None, levels: Iterable[Level], upomdp: UPOMDP) -> Overlap:
    """Classify ``trajectory`` against the realisable set of ``policy`` on ``levels``.

    ``policy=None`` treats every action as possible, which matches any full-support policy.
    """
    best = 0
    n = len(trajectory.observations)
    for level in levels:
        best = max(best, matched_prefix(trajectory, level, upomdp, policy))
        if best == n:
            break
    if best == n:
        # matched_prefix stops early when the level terminates; a full match is only complete
        # if the trajectory itself ended there too, which the counting already guarantees.
        return Overlap(OverlapKind.COMPLETE, best)
    if best > 0:
        return Overlap(OverlapKind.PARTIAL, best)
    return Overlap(OverlapKind.NONE, 0)


@dataclass
class Rollout:
    level: Level
    trajectory: Trajectory
    rewards: list[float]
    ret: float
    values: list[float] = field(default_factory=list)

    @property
    def keys(self) -> list[Trajectory]:
        return [self.trajectory.prefix(t) for t in range(self.trajectory.length)]

    @property
    def actions(self) -> tuple:
        return self.trajectory.actions


def _pick(rng: np.random.Generator, probs) -> int:
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    # floating-point slack: fall back to the last positive entry
    return max(i for i, p in enumerate(probs) if p > 0)


def sample_rollout(policy: Policy, level: Level, upomdp: UPOMDP, rng: np.random.Generator) -> Rollout:
    """One seeded episode of ``policy`` on ``level``."""
    if isinstance(policy, MixturePolicy):
        policy = policy.components[_pick(rng, policy.weights)]
    init = upomdp.initial(level)
    state = init[_pick(rng, [p for p, _ in init])][1]
    traj = Trajectory.initial(upomdp.observe(level, state))
    rewards: list[float] = []
    ret = 0.0
    for t in range(upomdp.horizon):
        action = _pick(rng, policy.action_probs(traj))
        outs = upomdp.step(level, state, action)
        pt, state, reward, done = outs[_pick(rng, [o[0] for o in outs])] if len(outs) > 1 else outs[0]
        traj = traj.extend(action, upomdp.observe(level, state))
        rewards.append(reward)
        ret += upomdp.discount**t * reward
        if done:
            break
    return Rollout(level, traj, rewards, ret)

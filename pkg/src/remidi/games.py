"""Decision rules, zero-sum matrix games, and exact minimax-regret games over UPOMDP policies."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .core import (
    DEFAULT_NODE_BUDGET,
    UPOMDP,
    BudgetExceeded,
    DeterministicPolicy,
    Level,
    Policy,
    RealisableSet,
    TabularPolicy,
    Trajectory,
    _walk,
    expected_return,
    realisable_trajectories,
)
from .oracle import optimal_return, regret

RULE_TOL = 1e-9
SUPPORT_EPS = 1e-9
STRATEGY_BUDGET = 4096


class SolverError(RuntimeError):
    """An equilibrium solver failed to certify a solution; ``gap`` holds the last duality gap."""

    def __init__(self, message: str, gap: float = math.inf):
        super().__init__(f"{message} (duality gap {gap:.3g})")
        self.gap = gap


# ----- decision matrices ---------------------------------------------------------------


@dataclass(frozen=True)
class DecisionMatrix:
    """Rows are world states or levels, columns are actions or policies."""

    utilities: np.ndarray
    row_labels: tuple = ()
    column_labels: tuple = ()

    def __post_init__(self):
        u = np.array(self.utilities, dtype=float)
        if u.ndim != 2 or u.size == 0:
            raise ValueError("a decision matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(u)):
            raise ValueError("decision matrix entries must be finite")
        u.setflags(write=False)
        object.__setattr__(self, "utilities", u)
        rows = tuple(self.row_labels) or tuple(f"s{i + 1}" for i in range(u.shape[0]))
        cols = tuple(self.column_labels) or tuple(f"a{j + 1}" for j in range(u.shape[1]))
        if len(rows) != u.shape[0] or len(cols) != u.shape[1]:
            raise ValueError("label counts must match the matrix shape")
        object.__setattr__(self, "row_labels", rows)
        object.__setattr__(self, "column_labels", cols)

    @property
    def shape(self):
        return self.utilities.shape

    def labels(self, columns: Iterable[int]) -> set:
        return {self.column_labels[j] for j in columns}


def regret_matrix(matrix: DecisionMatrix) -> DecisionMatrix:
    u = matrix.utilities
    return DecisionMatrix(u.max(axis=1, keepdims=True) - u, matrix.row_labels, matrix.column_labels)


def _argbest(scores: np.ndarray, maximise: bool, tol: float) -> set[int]:
    best = scores.max() if maximise else scores.min()
    return {int(j) for j in np.flatnonzero(np.abs(scores - best) <= tol)}


def rule_minimax(matrix: DecisionMatrix, tol: float = RULE_TOL) -> set[int]:
    """Columns with the best worst-case utility."""
    return _argbest(matrix.utilities.min(axis=0), True, tol)


def rule_leximin(matrix: DecisionMatrix, tol: float = RULE_TOL) -> set[int]:
    """Columns whose ascending utility profile is lexicographically maximal."""
    profiles = np.sort(matrix.utilities, axis=0)
    alive = list(range(matrix.shape[1]))
    for row in profiles:
        vals = row[alive]
        best = vals.max()
        alive = [j for j, v in zip(alive, vals) if v >= best - tol]
    return set(alive)


def rule_minimax_regret(matrix: DecisionMatrix, tol: float = RULE_TOL) -> set[int]:
    """Columns with the lowest worst-case regret."""
    return _argbest(regret_matrix(matrix).utilities.max(axis=0), False, tol)


# ----- zero-sum solving -------------------------------------------------------------------


@dataclass
class GameSolution:
    """Equilibrium of a zero-sum game between a minimising agent and a maximising adversary.

    ``agent_mixture`` weights ``strategies`` (a single entry labelled "behavioral" when the
    game was solved in sequence form); ``adversary_distribution`` weights ``levels``.
    """

    agent_mixture: np.ndarray
    adversary_distribution: np.ndarray
    value: float
    duality_gap: float
    levels: tuple = ()
    strategies: tuple = ()
    method: str = "lp"

    def support(self, eps: float = SUPPORT_EPS) -> set:
        """Levels (or row indices) the adversary plays with probability above ``eps``."""
        rows = self.levels if self.levels else tuple(range(len(self.adversary_distribution)))
        return {rows[i] for i, p in enumerate(self.adversary_distribution) if p > eps}


def duality_gap(payoffs: np.ndarray, row_mix: np.ndarray, col_mix: np.ndarray) -> float:
    """Best pure-row response to ``col_mix`` minus best pure-column response to ``row_mix``."""
    payoffs = np.asarray(payoffs, dtype=float)
    return float((payoffs @ col_mix).max() - (row_mix @ payoffs).min())


@dataclass
class _Polytope:
    """Agent strategy set ``{x >= 0 : E x = e}`` with per-row loss ``c_i - U_i . x``."""

    E: sp.csr_matrix
    e: np.ndarray
    U: np.ndarray
    c: np.ndarray
    best_response: object  # callable(weights over x-coordinates) -> max_x w.x

    def losses(self, x: np.ndarray) -> np.ndarray:
        return self.c - self.U @ x


def _simplex_polytope(losses: np.ndarray) -> _Polytope:
    """Mixed strategies over the columns of a loss matrix (row player maximises the loss)."""
    n = losses.shape[1]
    return _Polytope(
        E=sp.csr_matrix(np.ones((1, n))),
        e=np.ones(1),
        U=-np.asarray(losses, dtype=float),
        c=np.zeros(losses.shape[0]),
        best_response=lambda w: float(np.max(w)),
    )


def _lp(cost, A_ub, b_ub, A_eq, b_eq, bounds):
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise SolverError(f"linear program failed: {res.message}")
    return res


def _solve_polytope(poly: _Polytope, maximal_support: bool) -> tuple[np.ndarray, float, np.ndarray]:
    """Minimax over the polytope; returns agent point, value and adversary weights."""
    L, n = poly.U.shape
    m = poly.E.shape[0]
    scale = max(1.0, float(np.abs(poly.U).max(initial=0.0)), float(np.abs(poly.c).max(initial=0.0)))
    # variables: x (n), v; minimise v s.t. c - U x <= v
    A_ub = sp.hstack([sp.csr_matrix(-poly.U), sp.csr_matrix(-np.ones((L, 1)))]).tocsr()
    A_eq = sp.hstack([poly.E, sp.csr_matrix((m, 1))]).tocsr()
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    res = _lp(cost, A_ub, -poly.c, A_eq, poly.e, [(0, None)] * n + [(None, None)])
    x = np.clip(res.x[:n], 0.0, None)
    value = float(res.x[-1])
    lam = np.clip(-np.asarray(res.ineqlin.marginals, dtype=float), 0.0, None)
    if lam.sum() <= 0:
        lam = np.zeros(L)
        lam[int(np.argmax(poly.losses(x)))] = 1.0
    lam /= lam.sum()
    if maximal_support and L > 1:
        lam = _maximal_support_adversary(poly, value, x, scale)
    return x, value, lam


def _maximal_support_adversary(poly: _Polytope, value: float, x: np.ndarray, scale: float) -> np.ndarray:
    """Optimal adversary whose support is the union of all optimal adversaries' supports.

    A row belongs to some optimal adversary's support exactly when no optimal agent
    strategy leaves it slack; slack rows are peeled off with a few LPs, then the
    adversary weights on the remaining rows are spread as evenly as optimality allows.
    """
    L, n = poly.U.shape
    m = poly.E.shape[0]
    slack_tol = 1e-7 * scale
    feas_tol = 1e-9 * scale
    cand = [i for i in range(L) if poly.losses(x)[i] >= value - slack_tol]
    while len(cand) > 1:
        k = len(cand)
        # variables: x (n), s (k); maximise sum s s.t. c_i - U_i x + s_i <= v (i in cand), others <= v
        rows_c = sp.hstack([sp.csr_matrix(-poly.U[cand]), sp.identity(k, format="csr")])
        others = [i for i in range(L) if i not in set(cand)]
        blocks = [rows_c]
        rhs = [value + feas_tol - poly.c[cand]]
        if others:
            blocks.append(sp.hstack([sp.csr_matrix(-poly.U[others]), sp.csr_matrix((len(others), k))]))
            rhs.append(value + feas_tol - poly.c[others])
        A_ub = sp.vstack(blocks).tocsr()
        A_eq = sp.hstack([poly.E, sp.csr_matrix((m, k))]).tocsr()
        cost = np.concatenate([np.zeros(n), -np.ones(k)])
        res = _lp(cost, A_ub, np.concatenate(rhs), A_eq, poly.e, [(0, None)] * n + [(0, scale)] * k)
        s = res.x[n:]
        slack = {cand[j] for j in range(k) if s[j] > slack_tol}
        if not slack:
            break
        cand = [i for i in cand if i not in slack]
    if len(cand) == 1:
        lam = np.zeros(L)
        lam[cand[0]] = 1.0
        return lam
    # variables: lam (k), y (m), t; maximise t s.t. lam_i >= t, sum lam = 1,
    # sum lam c - e.y >= v - tol, E^T y >= sum lam U
    k = len(cand)
    Uc = poly.U[cand]
    ET = poly.E.T.tocsr()
    A_ub = sp.vstack(
        [
            sp.hstack([sp.identity(k, format="csr") * -1.0, sp.csr_matrix((k, m)), sp.csr_matrix(np.ones((k, 1)))]),
            sp.hstack([sp.csr_matrix(-poly.c[cand][None, :]), sp.csr_matrix(poly.e[None, :]), sp.csr_matrix((1, 1))]),
            sp.hstack([sp.csr_matrix(Uc.T), -ET, sp.csr_matrix((n, 1))]),
        ]
    ).tocsr()
    b_ub = np.concatenate([np.zeros(k), [-(value - feas_tol)], np.zeros(n)])
    A_eq = sp.hstack([sp.csr_matrix(np.ones((1, k))), sp.csr_matrix((1, m)), sp.csr_matrix((1, 1))]).tocsr()
    cost = np.zeros(k + m + 1)
    cost[-1] = -1.0
    res = _lp(cost, A_ub, b_ub, A_eq, np.ones(1), [(0, None)] * k + [(None, None)] * m + [(None, None)])
    lam = np.zeros(L)
    lam[cand] = np.clip(res.x[:k], 0.0, None)
    return lam / lam.sum()


def _certify(poly: _Polytope, x: np.ndarray, lam: np.ndarray) -> tuple[float, float]:
    """Duality gap of (x, lam) and the adversary's guaranteed value."""
    upper = float(poly.losses(x).max())
    lower = float(lam @ poly.c - poly.best_response(lam @ poly.U))
    return max(0.0, upper - lower), lower


def solve_zero_sum(
    payoffs: DecisionMatrix | np.ndarray,
    tolerance: float = 1e-9,
    max_iterations: int = 100_000,
    method: str = "lp",
) -> GameSolution:
    """Equilibrium of the matrix game where the row player maximises ``payoffs``.

    ``method`` is ``"lp"`` (linear programming, default), ``"mwu"`` (multiplicative-weights
    self-play with averaged iterates) or ``"support"`` (Shapley-Snow kernel enumeration,
    small matrices only). The result carries the duality gap recomputed from the mixtures.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    M = payoffs.utilities if isinstance(payoffs, DecisionMatrix) else np.asarray(payoffs, dtype=float)
    if method == "support":
        return support_enumeration(M, tolerance)
    if method == "mwu":
        return _solve_mwu(M, tolerance, max_iterations)
    if method != "lp":
        raise ValueError(f"unknown method {method!r}")
    poly = _simplex_polytope(M)
    y, value, x = _solve_polytope(poly, maximal_support=False)
    y = y / y.sum()
    gap = duality_gap(M, x, y)
    if gap > tolerance:
        raise SolverError("linear program did not reach the requested tolerance", gap)
    return GameSolution(y, x, float(x @ M @ y), gap, method="lp")


def _solve_mwu(M: np.ndarray, tolerance: float, max_iterations: int) -> GameSolution:
    rows, cols = M.shape
    span = max(float(M.max() - M.min()), 1e-12)
    eta = math.sqrt(8 * math.log(max(rows, cols, 2)) / max(max_iterations, 1)) / span
    wr = np.zeros(rows)
    wc = np.zeros(cols)
    avg_r = np.zeros(rows)
    avg_c = np.zeros(cols)
    gap = math.inf
    for it in range(1, max_iterations + 1):
        pr = np.exp(wr - wr.max())
        pr /= pr.sum()
        pc = np.exp(wc - wc.max())
        pc /= pc.sum()
        avg_r += (pr - avg_r) / it
        avg_c += (pc - avg_c) / it
        wr += eta * (M @ pc)
        wc -= eta * (pr @ M)
        if it % 64 == 0 or it == max_iterations:
            gap = duality_gap(M, avg_r, avg_c)
            if gap <= tolerance:
                return GameSolution(avg_c.copy(), avg_r.copy(), float(avg_r @ M @ avg_c), gap, method="mwu")
    raise SolverError(f"no convergence in {max_iterations} iterations", gap)


def support_enumeration(payoffs: np.ndarray, tolerance: float = 1e-9, max_size: int = 8) -> GameSolution:
    """Exact equilibrium from square nonsingular submatrices (Shapley-Snow kernels).

    Independent of the LP route; intended for matrices up to 8x8.
    """
    M = np.asarray(payoffs, dtype=float)
    rows, cols = M.shape
    if max(rows, cols) > max_size:
        raise ValueError(f"support enumeration is limited to {max_size}x{max_size} matrices")
    best = None
    for k in range(1, min(rows, cols) + 1):
        for I in itertools.combinations(range(rows), k):
            for J in itertools.combinations(range(cols), k):
                sub = M[np.ix_(I, J)]
                # column mixture y on J equalising rows I; row mixture x on I equalising columns J
                A = np.block([[sub, -np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
                B = np.block([[sub.T, -np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
                rhs = np.zeros(k + 1)
                rhs[-1] = 1.0
                try:
                    ysol = np.linalg.solve(A, rhs)
                    xsol = np.linalg.solve(B, rhs)
                except np.linalg.LinAlgError:
                    continue
                if ysol[:k].min() < -1e-12 or xsol[:k].min() < -1e-12:
                    continue
                x = np.zeros(rows)
                y = np.zeros(cols)
                x[list(I)] = np.clip(xsol[:k], 0, None)
                y[list(J)] = np.clip(ysol[:k], 0, None)
                x /= x.sum()
                y /= y.sum()
                gap = duality_gap(M, x, y)
                if gap <= tolerance:
                    return GameSolution(y, x, float(x @ M @ y), gap, method="support")
                if best is None or gap < best[0]:
                    best = (gap, x, y)
    raise SolverError("support enumeration found no equilibrium", best[0] if best else math.inf)


# ----- games over UPOMDP policies ---------------------------------------------------------


class GameTree:
    """Sequence-form view of a UPOMDP restricted to some levels.

    Decision keys are the trajectories at which the agent acts; a sequence is a
    (key, action) pair with dense index ``key * A + action``. ``U[level, seq]`` is the
    chance-weighted return of leaves whose final decision is ``seq``, so that a
    realisation plan ``r`` has expected return ``U @ r`` on every level.
    """

    def __init__(self, upomdp: UPOMDP, levels: Sequence[Level], budget: int = DEFAULT_NODE_BUDGET):
        self.upomdp = upomdp
        self.levels = tuple(levels)
        self.A = upomdp.action_count
        keys: dict[Trajectory, int] = {}
        level_keys: list[set[int]] = []
        leaves: list[list[tuple[int, float]]] = []
        for level in self.levels:
            upomdp.check_level(level)
            reach = set()
            acc: dict[int, float] = {}
            for item in _walk(upomdp, level, None, budget):
                if item[0] == "node":
                    idx = keys.setdefault(item[1], len(keys))
                    reach.add(idx)
                else:
                    _, traj, prob, ret = item
                    parent, action = traj.parent()
                    seq = keys[parent] * self.A + action
                    acc[seq] = acc.get(seq, 0.0) + prob * ret
            level_keys.append(reach)
            leaves.append(list(acc.items()))
        self.keys = list(keys)
        self.key_index = keys
        self.level_keys = level_keys
        n = len(self.keys) * self.A
        self.n_seq = n
        self.U = np.zeros((len(self.levels), n))
        for i, items in enumerate(leaves):
            for seq, val in items:
                self.U[i, seq] += val
        self.parent_seq = np.full(len(self.keys), -1, dtype=np.int64)
        self.children: dict[int, list[int]] = {}
        for key, idx in keys.items():
            par = key.parent()
            if par is not None:
                seq = keys[par[0]] * self.A + par[1]
                self.parent_seq[idx] = seq
                self.children.setdefault(seq, []).append(idx)
        # deepest keys first, so children are resolved before parents
        self.order = sorted(range(len(self.keys)), key=lambda i: -self.keys[i].length)

    def frozen_keys(self, frozen: RealisableSet | None) -> list[int]:
        if frozen is None or len(frozen) == 0:
            return []
        return [i for i, k in enumerate(self.keys) if k in frozen]

    def reachable_keys(self, levels: Iterable[Level]) -> list[int]:
        pos = {lv: i for i, lv in enumerate(self.levels)}
        out: set[int] = set()
        for lv in levels:
            out |= self.level_keys[pos[lv]]
        return sorted(out)

    def constraints(self, frozen_idx: Sequence[int], base: Policy | None) -> tuple[sp.csr_matrix, np.ndarray]:
        """Equality system ``E r = e`` for realisation plans, with frozen keys pinned to ``base``."""
        A = self.A
        frozen = set(frozen_idx)
        rows, cols, vals, rhs = [], [], [], []
        r = 0
        for idx, key in enumerate(self.keys):
            par = int(self.parent_seq[idx])
            if idx in frozen:
                probs = base.action_probs(key)
                for a in range(A):
                    rows.append(r)
                    cols.append(idx * A + a)
                    vals.append(1.0)
                    if par >= 0:
                        rows.append(r)
                        cols.append(par)
                        vals.append(-float(probs[a]))
                        rhs.append(0.0)
                    else:
                        rhs.append(float(probs[a]))
                    r += 1
            else:
                for a in range(A):
                    rows.append(r)
                    cols.append(idx * A + a)
                    vals.append(1.0)
                if par >= 0:
                    rows.append(r)
                    cols.append(par)
                    vals.append(-1.0)
                    rhs.append(0.0)
                else:
                    rhs.append(1.0)
                r += 1
        E = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.n_seq))
        return E, np.array(rhs)

    def best_response(self, weights: np.ndarray, frozen_idx: Sequence[int], base: Policy | None) -> tuple[float, dict]:
        """Maximise ``weights . r`` over realisation plans that follow ``base`` on frozen keys."""
        A = self.A
        frozen = set(frozen_idx)
        value = np.zeros(len(self.keys))
        choice: dict[Trajectory, int] = {}
        for idx in self.order:
            q = np.array([weights[idx * A + a] + sum(value[c] for c in self.children.get(idx * A + a, ())) for a in range(A)])
            if idx in frozen:
                value[idx] = float(base.action_probs(self.keys[idx]) @ q)
            else:
                a = int(np.argmax(q))
                value[idx] = q[a]
                choice[self.keys[idx]] = a
        total = math.fsum(value[i] for i in range(len(self.keys)) if self.parent_seq[i] < 0)
        return total, choice

    def plan(self, policy: Policy) -> np.ndarray:
        """Realisation plan of a behavioural policy."""
        A = self.A
        r = np.zeros(self.n_seq)
        for idx in sorted(range(len(self.keys)), key=lambda i: self.keys[i].length):
            par = int(self.parent_seq[idx])
            reach = 1.0 if par < 0 else r[par]
            r[idx * A : idx * A + A] = reach * np.asarray(policy.action_probs(self.keys[idx]), dtype=float)
        return r

    def to_policy(self, r: np.ndarray, frozen_idx: Sequence[int], base: Policy | None) -> TabularPolicy:
        """Behavioural policy from realisation weights; unreached keys get the uniform distribution."""
        A = self.A
        frozen = set(frozen_idx)
        table = {}
        for idx, key in enumerate(self.keys):
            if idx in frozen:
                table[key] = np.array(base.action_probs(key), dtype=float)
                continue
            w = np.clip(r[idx * A : idx * A + A], 0.0, None)
            total = w.sum()
            if total <= 1e-12:
                probs = np.full(A, 1.0 / A)
            else:
                probs = w / total
                probs[probs < 1e-9] = 0.0
                probs /= probs.sum()
            table[key] = probs
        out = TabularPolicy(A)
        out._table = {k: _readonly(v) for k, v in table.items()}
        return out


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass
class RefinedGameSpec:
    """Agent must copy ``base_policy`` on ``frozen_trajectories``; the adversary picks from ``free_levels``."""

    base_policy: Policy | None
    protected_levels: frozenset
    free_levels: tuple
    frozen_trajectories: RealisableSet

    def __post_init__(self):
        if set(self.free_levels) & set(self.protected_levels):
            raise ValueError("protected and free levels overlap")
        if not self.frozen_trajectories.is_prefix_closed():
            raise ValueError("frozen trajectories must be prefix-closed")

    @classmethod
    def build(cls, upomdp: UPOMDP, base_policy: Policy | None, protected: Iterable[Level],
              levels: Sequence[Level] | None = None) -> "RefinedGameSpec":
        levels = tuple(levels if levels is not None else upomdp.levels)
        protected = frozenset(protected)
        free = tuple(lv for lv in levels if lv not in protected)
        if protected:
            frozen = realisable_trajectories(base_policy, protected, upomdp)
        else:
            frozen = RealisableSet.empty()
        return cls(base_policy, protected, free, frozen)

    @property
    def all_levels(self) -> tuple:
        return tuple(self.free_levels) + tuple(sorted(self.protected_levels, key=lambda lv: (lv.family, lv.id)))


def enumerate_agent_strategies(
    upomdp: UPOMDP,
    levels: Iterable[Level],
    frozen: RealisableSet | None = None,
    base_policy: Policy | None = None,
    budget: int = STRATEGY_BUDGET,
    tree: GameTree | None = None,
) -> list[DeterministicPolicy]:
    """Every deterministic assignment on reachable non-frozen keys; frozen keys defer to ``base_policy``."""
    levels = list(levels)
    tree = tree or GameTree(upomdp, levels)
    frozen_set = set(tree.frozen_keys(frozen))
    free = [i for i in tree.reachable_keys(levels) if i not in frozen_set]
    count = upomdp.action_count ** len(free)
    if count > budget:
        raise BudgetExceeded(f"{len(free)} free trajectory keys", count, budget)
    keys = [tree.keys[i] for i in free]
    return [
        DeterministicPolicy(upomdp.action_count, dict(zip(keys, combo)), fallback=base_policy if frozen_set else None)
        for combo in itertools.product(range(upomdp.action_count), repeat=len(keys))
    ]


def _game(
    upomdp: UPOMDP,
    free_levels: Sequence[Level],
    all_levels: Sequence[Level],
    frozen: RealisableSet | None,
    base: Policy | None,
    tolerance: float,
    method: str,
    budget: int,
    strategy_budget: int,
) -> tuple[TabularPolicy, GameSolution]:
    free_levels = tuple(free_levels)
    if not free_levels:
        raise ValueError("nothing to refine: the adversary has no free level")
    if len(free_levels) == 1 and (frozen is None or len(frozen) == 0):
        # one known level: the optimal policy has zero regret
        best, witness = optimal_return(free_levels[0], upomdp, budget)
        policy = TabularPolicy(upomdp.action_count, {k: np.eye(upomdp.action_count)[a] for k, a in witness.table.items()})
        return policy, GameSolution(np.ones(1), np.ones(1), 0.0, 0.0, free_levels, (witness,), "single-level")

    tree = GameTree(upomdp, all_levels, budget)
    frozen_idx = tree.frozen_keys(frozen)
    rows = [tree.levels.index(lv) for lv in free_levels]
    opt = np.array([optimal_return(lv, upomdp, budget)[0] for lv in free_levels])
    U = tree.U[rows]

    if method == "auto":
        free_keys = [i for i in tree.reachable_keys(free_levels) if i not in set(frozen_idx)]
        method = "normal" if upomdp.action_count ** len(free_keys) <= strategy_budget else "sequence"

    if method == "normal":
        strategies = enumerate_agent_strategies(upomdp, free_levels, frozen, base, strategy_budget, tree)
        plans = np.stack([tree.plan(s) for s in strategies], axis=1)
        losses = opt[:, None] - U @ plans
        poly = _simplex_polytope(losses)
        x, value, lam = _solve_polytope(poly, maximal_support=True)
        x = np.clip(x, 0, None)
        x /= x.sum()
        gap, _ = _certify(poly, x, lam)
        policy = tree.to_policy(plans @ x, frozen_idx, base)
        sol = GameSolution(x, lam, float(poly.losses(x).max()), gap, free_levels, tuple(strategies), "normal")
    elif method == "sequence":
        E, e = tree.constraints(frozen_idx, base)

        def best(w):
            return tree.best_response(w, frozen_idx, base)[0]

        poly = _Polytope(E, e, U, opt, best)
        r, value, lam = _solve_polytope(poly, maximal_support=True)
        gap, _ = _certify(poly, r, lam)
        policy = tree.to_policy(r, frozen_idx, base)
        sol = GameSolution(np.ones(1), lam, float(poly.losses(r).max()), gap, free_levels, ("behavioral",), "sequence")
    else:
        raise ValueError(f"unknown method {method!r}")
    if gap > tolerance:
        raise SolverError("equilibrium not certified", gap)
    return policy, sol


def solve_mmr_game(
    upomdp: UPOMDP,
    levels: Sequence[Level] | None = None,
    tolerance: float = 1e-6,
    method: str = "auto",
    budget: int = DEFAULT_NODE_BUDGET,
    strategy_budget: int = STRATEGY_BUDGET,
) -> tuple[TabularPolicy, GameSolution]:
    """Minimax-regret policy over ``levels`` (default: the whole level space) and its certificate.

    ``method`` picks normal form over enumerated deterministic strategies, sequence form,
    or ``"auto"`` (normal form when the strategy count fits ``strategy_budget``).
    """
    levels = tuple(levels if levels is not None else upomdp.levels)
    return _game(upomdp, levels, levels, None, None, tolerance, method, budget, strategy_budget)


def solve_refined_game(
    spec: RefinedGameSpec,
    upomdp: UPOMDP,
    tolerance: float = 1e-6,
    method: str = "auto",
    budget: int = DEFAULT_NODE_BUDGET,
    strategy_budget: int = STRATEGY_BUDGET,
) -> tuple[TabularPolicy, GameSolution]:
    """Minimax regret over the free levels while copying the base policy on frozen trajectories."""
    return _game(
        upomdp, spec.free_levels, spec.all_levels, spec.frozen_trajectories, spec.base_policy,
        tolerance, method, budget, strategy_budget,
    )


@dataclass
class Theorem43Report:
    regret_equality_on_protected: bool
    worst_case_improvement_on_free: bool
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.regret_equality_on_protected and self.worst_case_improvement_on_free


def verify_theorem_4_3(
    base_policy: Policy, refined_policy: Policy, spec: RefinedGameSpec, upomdp: UPOMDP, tol: float = 1e-6
) -> Theorem43Report:
    """Refinement keeps regret on protected levels and never worsens the free-level worst case."""
    diffs = {
        lv: abs(regret(refined_policy, lv, upomdp) - regret(base_policy, lv, upomdp)) for lv in spec.protected_levels
    }
    base_worst = max((regret(base_policy, lv, upomdp) for lv in spec.free_levels), default=0.0)
    new_worst = max((regret(refined_policy, lv, upomdp) for lv in spec.free_levels), default=0.0)
    return Theorem43Report(
        all(d <= tol for d in diffs.values()),
        new_worst <= base_worst + tol,
        {"protected_regret_diffs": diffs, "base_free_worst": base_worst, "refined_free_worst": new_worst},
    )

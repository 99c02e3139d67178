"""Experiment runners behind the command line: each returns fixed-column tables and a summary."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .blp import (
    bayes_consistency_check,
    blp_solve,
    combine,
    per_level_regrets,
    verify_theorem_4_4,
)
from .config import ExperimentConfig
from .core import UPOMDP
from .envs import eval_suite, make_env, solve_rate
from .learners import LoopConfig, TabularActorCritic, paired_perfect_regret_loop, remidi_tabular_loop
from .multibuffer import run_remidi
from .oracle import make_scorer
from .plr import LevelBuffer, PLRHistory, Rank, TopK, run_plr, stream


@dataclass
class Table:
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)

    def add(self, row: dict[str, Any]) -> None:
        self.rows.append([row.get(c, "") for c in self.columns])


@dataclass
class RunResult:
    tables: dict[str, Table]
    summary: dict[str, Any]


def build_env(cfg: ExperimentConfig) -> UPOMDP:
    return make_env(cfg.env.family, cfg.env.params)


def _loop_config(cfg: ExperimentConfig, iterations: int) -> LoopConfig:
    a = cfg.agent
    return LoopConfig(
        iterations=iterations,
        updates_per_side=a.updates_per_side,
        policy_lr=a.policy_lr,
        value_lr=a.value_lr,
        entropy_coeff=a.entropy_coeff,
        discount=a.discount,
    )


def _label(obj) -> str:
    """Readable column suffix for a trajectory key or a level."""
    if hasattr(obj, "id"):
        return str(obj.id)
    return "-".join(str(x) for x in obj)


# ----- tabular loops -----------------------------------------------------------------------


def _loop_table(history, interval: int, with_phase: bool) -> Table:
    keys = [_label(k) for k in history.keys]
    levels = [_label(lv) for lv in history.levels]
    cols = ["iteration"] + (["phase"] if with_phase else [])
    cols += [f"regret_{k}" for k in keys] + [f"prob_{lv}" for lv in levels]
    table = Table(cols)
    n = history.key_regrets.shape[0]
    for t in range(n):
        if (t + 1) % interval and t != n - 1:
            continue
        row = {"iteration": t + 1}
        if with_phase:
            row["phase"] = int(history.phase[t, 0]) + 1
        for i, k in enumerate(keys):
            row[f"regret_{k}"] = float(history.key_regrets[t, 0, i])
        for i, lv in enumerate(levels):
            row[f"prob_{lv}"] = float(history.adversary_probs[t, 0, i])
        table.add(row)
    return table


def run_paired_tabular(cfg: ExperimentConfig, seed: int, **_) -> RunResult:
    env = build_env(cfg)
    hist = paired_perfect_regret_loop(
        env,
        iterations=cfg.train.iterations,
        seed=seed,
        updates_per_side=cfg.agent.updates_per_side,
        config=_loop_config(cfg, cfg.train.iterations),
    )
    table = _loop_table(hist, cfg.logging.interval, with_phase=False)
    summary = {
        "final_trajectory_regrets": {_label(k): float(v) for k, v in zip(hist.keys, hist.key_regrets[-1, 0])},
        "final_adversary": {_label(lv): float(p) for lv, p in zip(hist.levels, hist.adversary_probs[-1, 0])},
    }
    return RunResult({"metrics": table}, summary)


def run_remidi_tabular(cfg: ExperimentConfig, seed: int, **_) -> RunResult:
    env = build_env(cfg)
    hist = remidi_tabular_loop(
        env,
        iterations_per_adversary=cfg.train.iterations,
        seed=seed,
        adversary_count=cfg.train.adversary_count,
        updates_per_side=cfg.agent.updates_per_side,
        config=_loop_config(cfg, cfg.train.iterations),
    )
    table = _loop_table(hist, cfg.logging.interval, with_phase=True)
    summary = {
        "final_trajectory_regrets": {_label(k): float(v) for k, v in zip(hist.keys, hist.key_regrets[-1, 0])},
        "adversary_supports": [sorted(_label(hist.levels[i]) for i in s) for s in hist.phase_supports[0]],
        "stop_reason": hist.stop_reasons[0],
    }
    return RunResult({"metrics": table}, summary)


# ----- exact refinement --------------------------------------------------------------------


def run_exact_blp(cfg: ExperimentConfig, seed: int, **_) -> RunResult:
    env = build_env(cfg)
    s = cfg.solver
    chain = blp_solve(env, tolerance=s.tolerance, max_steps=s.max_steps, method=s.method, budget=s.node_budget)
    policy = combine(chain, env)
    steps = Table(["step", "value", "duality_gap", "method", "support", "covered"])
    covered = 0
    for i, step in enumerate(chain.steps):
        covered = len(set().union(*(st.support for st in chain.steps[: i + 1])))
        steps.add(
            {
                "step": i + 1,
                "value": step.solution.value,
                "duality_gap": step.solution.duality_gap,
                "method": step.solution.method,
                "support": ";".join(str(lv.id) for lv in sorted(step.support, key=lambda lv: lv.id)),
                "covered": covered,
            }
        )
    levels = list(chain.levels)
    regrets = Table(["level"] + [f"step_{i + 1}" for i in range(len(chain.steps))] + ["combined"])
    per_step = [per_level_regrets(st.policy, levels, env) for st in chain.steps]
    final = per_level_regrets(policy, levels, env)
    for lv in levels:
        row = {"level": lv.id, "combined": final[lv]}
        for i, r in enumerate(per_step):
            row[f"step_{i + 1}"] = r[lv]
        regrets.add(row)
    report = verify_theorem_4_4(chain, env, s.tolerance)
    bayes = bayes_consistency_check(policy, chain, env, s.tolerance, s.node_budget)
    summary = {
        "values": [st.solution.value for st in chain.steps],
        "complete": chain.complete,
        "combined_max_regret": max(final.values()),
        "refinement_checks": report.ok,
        "bayes_violations": len(bayes.violations),
        "bayes_max_gain": bayes.max_gain,
    }
    return RunResult({"steps": steps, "regrets": regrets}, summary)


# ----- curation runs -----------------------------------------------------------------------


def _buffer(cfg: ExperimentConfig, capacity: int) -> LevelBuffer:
    p = cfg.plr
    prio = TopK(p.k) if p.prioritization == "topk" else Rank(p.temperature)
    return LevelBuffer(capacity, prio, p.staleness_coeff, p.replay_rate)


def _trainer(cfg: ExperimentConfig, env: UPOMDP) -> TabularActorCritic:
    a = cfg.agent
    return TabularActorCritic(env.action_count, a.policy_lr, a.value_lr, a.entropy_coeff, a.discount, a.keys)


def _curation_table(env: UPOMDP, history: PLRHistory, interval: int, with_phase: bool) -> Table:
    subsets = list(env.subsets)
    cols = ["iteration", "decision"] + (["phase"] if with_phase else [])
    cols += ["buffer_size", "mean_score"]
    cols += [f"buffer_{s}" for s in subsets] + [f"trained_{s}" for s in subsets]
    cols += ["eval_overall"] + [f"eval_{s}" for s in subsets]
    table = Table(cols)
    n = len(history.records)
    for i, rec in enumerate(history.records):
        if (i + 1) % interval and i != n - 1 and "eval" not in rec:
            continue
        row = {
            "iteration": rec["iteration"] + 1,
            "decision": rec["decision"],
            "buffer_size": rec["buffer_size"],
            "mean_score": rec["mean_score"],
        }
        if with_phase:
            row["phase"] = rec["phase"] + 1
        for s in subsets:
            if rec["buffer_size"]:
                row[f"buffer_{s}"] = rec.get(f"buffer_{s}", 0.0)
            if rec["trained"]:
                row[f"trained_{s}"] = rec.get(f"trained_{s}", 0.0)
        ev = rec.get("eval")
        if ev is not None:
            row["eval_overall"] = ev["overall"]
            for s in subsets:
                if s in ev:
                    row[f"eval_{s}"] = ev[s]
        table.add(row)
    return table


def _eval_fn(cfg: ExperimentConfig, env: UPOMDP, seed: int, threads: int) -> Callable:
    suite = eval_suite(env)
    eval_seed = int(stream(seed, "eval").integers(2**31))
    return lambda trainer: solve_rate(trainer, suite, env, cfg.train.eval_episodes, eval_seed, threads)


def _curation_summary(env: UPOMDP, history: PLRHistory, buffers) -> dict:
    final_eval = history.records[-1].get("eval", {})
    window = history.records[-max(1, len(history.records) // 5):]
    trained = {}
    for s in env.subsets:
        vals = [r.get(f"trained_{s}", 0.0) for r in window if r["decision"] == "replay" and r["trained"]]
        trained[s] = float(np.mean(vals)) if vals else None
    return {
        "final_eval": final_eval,
        "late_replay_fractions": trained,
        "buffers": [
            {s: sum(env.subset(lv) == s for lv in b.levels) for s in env.subsets} | {"size": len(b)} for b in buffers
        ],
    }


def run_plr_experiment(cfg: ExperimentConfig, seed: int, threads: int = 1, **_) -> RunResult:
    env = build_env(cfg)
    trainer = _trainer(cfg, env)
    scorer = make_scorer(cfg.train.score, env, exact=cfg.train.exact_score, discount=cfg.agent.discount)
    history = run_plr(
        env,
        env.generate,
        trainer,
        scorer,
        cfg.train.iterations,
        seed,
        robust=cfg.plr.robust,
        buffer=_buffer(cfg, cfg.plr.capacity),
        batch_size=cfg.train.batch_size,
        rollouts_per_level=cfg.train.rollouts_per_level,
        eval_fn=_eval_fn(cfg, env, seed, threads),
        eval_every=cfg.logging.eval_every,
    )
    table = _curation_table(env, history, cfg.logging.interval, with_phase=False)
    return RunResult({"metrics": table}, _curation_summary(env, history, [history.buffer]))


def run_remidi_experiment(cfg: ExperimentConfig, seed: int, threads: int = 1, **_) -> RunResult:
    env = build_env(cfg)
    trainer = _trainer(cfg, env)
    scorer = make_scorer(cfg.train.score, env, exact=cfg.train.exact_score, discount=cfg.agent.discount)
    r = cfg.remidi
    history, state = run_remidi(
        env,
        env.generate,
        trainer,
        scorer,
        r.buffer_count,
        r.iterations_per_buffer,
        seed,
        total_iterations=cfg.train.iterations,
        buffer_factory=lambda i: _buffer(cfg, r.inner_buffer_size),
        robust=cfg.plr.robust,
        batch_size=cfg.train.batch_size,
        rollouts_per_level=cfg.train.rollouts_per_level,
        eval_fn=_eval_fn(cfg, env, seed, threads),
        eval_every=cfg.logging.eval_every,
    )
    table = _curation_table(env, history, cfg.logging.interval, with_phase=True)
    return RunResult({"metrics": table}, _curation_summary(env, history, state.buffers))


# ----- fixtures ----------------------------------------------------------------------------


def run_decision_rules(cfg: ExperimentConfig, seed: int, **_) -> RunResult:
    from .envs.lottery import EXAMPLE_COLUMNS, EXAMPLE_ROWS, EXAMPLE_UTILITIES
    from .games import DecisionMatrix, regret_matrix, rule_leximin, rule_minimax, rule_minimax_regret

    m = DecisionMatrix(np.array(EXAMPLE_UTILITIES, dtype=float), EXAMPLE_ROWS, EXAMPLE_COLUMNS)
    reg = regret_matrix(m)
    table = Table(["state"] + [f"utility_{c}" for c in EXAMPLE_COLUMNS] + [f"regret_{c}" for c in EXAMPLE_COLUMNS])
    for i, s in enumerate(EXAMPLE_ROWS):
        row = {"state": s}
        for j, c in enumerate(EXAMPLE_COLUMNS):
            row[f"utility_{c}"] = float(m.utilities[i, j])
            row[f"regret_{c}"] = float(reg.utilities[i, j])
        table.add(row)
    pick = lambda idx: [EXAMPLE_COLUMNS[j] for j in sorted(idx)]  # noqa: E731
    summary = {
        "minimax": pick(rule_minimax(m)),
        "leximin": pick(rule_leximin(m)),
        "minimax_regret": pick(rule_minimax_regret(m)),
    }
    return RunResult({"matrices": table}, summary)


def run_fixtures(cfg: ExperimentConfig, seed: int, **_) -> RunResult:
    from .verify import run_suite

    table = Table(["check", "expected", "measured", "passed"])
    s = cfg.solver
    results = run_suite(s.suite, instances=s.random_instances, tol=s.tolerance)
    for c in results:
        table.add({"check": c.name, "expected": c.expected, "measured": c.measured, "passed": int(c.passed)})
    return RunResult({"fixtures": table}, {"passed": sum(c.passed for c in results), "total": len(results)})


RUNNERS: dict[str, Callable[..., RunResult]] = {
    "exact-blp": run_exact_blp,
    "paired-tabular": run_paired_tabular,
    "remidi-tabular": run_remidi_tabular,
    "plr": run_plr_experiment,
    "remidi": run_remidi_experiment,
    "decision-rules": run_decision_rules,
    "fixtures": run_fixtures,
}


def run_experiment(cfg: ExperimentConfig, seed: int, threads: int = 1) -> RunResult:
    return RUNNERS[cfg.experiment](cfg, seed, threads=threads)

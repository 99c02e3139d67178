"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import time
from pathlib import Path

import numpy as np
import pytest

from remidi.blp import blp_solve, combine
from remidi.cli import main
from remidi.config import load_config
from remidi.envs import TabularGameEnv
from remidi.experiments import _loop_config, build_env, run_experiment
from remidi.games import duality_gap, solve_zero_sum, support_enumeration
from remidi.learners import paired_perfect_regret_loop, remidi_tabular_loop
from remidi.oracle import regret
from remidi.verify import fixture_checks, lottery_game_checks, theorem_checks

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SEEDS_50 = list(range(50))
SEEDS_10 = list(range(10))


@pytest.fixture
def report(capsys):
    def emit(label: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {label}: {detail}")
        assert ok, detail

    return emit


def brute_pair_regret(rewards_a, rewards_b, resolution=1e-4):
    """Minimax regret of one observation pair by grid search over P(first action)."""
    p = np.linspace(0.0, 1.0, int(round(1 / resolution)) + 1)
    worst = np.zeros_like(p)
    for r in (rewards_a, rewards_b):
        ret = p * r[0] + (1 - p) * r[1]
        worst = np.maximum(worst, max(r) - ret)
    return float(worst.min())


def test_criterion_1_golden_fixtures(report):
    start = time.perf_counter()
    wanted = {"minimax rule", "leximin rule", "minimax-regret rule", "example regret matrix", "lottery utilities", "lottery regrets"}
    checks = [c for c in fixture_checks() if c.name in wanted]
    elapsed = time.perf_counter() - start
    failed = [c.line() for c in checks if not c.passed]
    ok = len(checks) == len(wanted) and not failed and elapsed < 1.0
    report("1 golden fixtures", ok, f"{len(checks) - len(failed)}/{len(wanted)} exact in {elapsed:.2f}s {failed}")


def test_criterion_2_lottery_counterexample(report):
    start = time.perf_counter()
    checks = lottery_game_checks(tol=1e-6)
    elapsed = time.perf_counter() - start
    ok = all(c.passed for c in checks) and elapsed < 1.0
    report("2 lottery counterexample", ok, "; ".join(f"{c.name}={c.measured}" for c in checks) + f" in {elapsed:.2f}s")


def test_criterion_3_exact_refinement(report):
    env = TabularGameEnv("paired")
    start = time.perf_counter()
    chain = blp_solve(env)
    policy = combine(chain, env)
    elapsed = time.perf_counter() - start
    worst = {}
    for lv in env.levels:
        obs = env.observation_of(lv)
        worst[obs] = max(worst.get(obs, 0.0), regret(policy, lv, env))
    brute = {f"tau{i}": brute_pair_regret(env.rewards[i - 1], env.rewards[i]) for i in (1, 3, 5)}
    first = chain.steps[0].solution.value
    ok = (
        abs(first - 1.0) <= 1e-6
        and sorted(worst.values()) == pytest.approx([0.175, 0.175, 1.0], abs=1e-6)
        and all(abs(worst[k] - brute[k]) <= 1e-4 for k in brute)
        and sorted(brute.values()) == pytest.approx([0.175, 0.175, 1.0], abs=1e-4)
        and elapsed < 5.0
    )
    detail = f"step-1 value {first:.9f}, worst regrets { {k: round(v, 9) for k, v in worst.items()} }, grid {brute}, {elapsed:.2f}s"
    report("3 exact refinement", ok, detail)


def test_criterion_4_variant1_dynamics(report):
    cfg = load_config(CONFIGS / "tabular_mmr.json")
    env = build_env(cfg)
    start = time.perf_counter()
    hist = paired_perfect_regret_loop(env, iterations=cfg.train.iterations, seed=SEEDS_50,
                                      updates_per_side=cfg.agent.updates_per_side, config=_loop_config(cfg, cfg.train.iterations))
    elapsed = time.perf_counter() - start
    final = hist.key_regrets[-1]
    ok = cfg.train.iterations >= 2000 and final.shape == (50, 6) and bool((final < 0.05).all()) and elapsed <= 60
    report("4 variant-1 dynamics", ok, f"max final regret {final.max():.4f} over 50 seeds x {cfg.train.iterations} iterations in {elapsed:.1f}s")


def test_criterion_5_variant2_dynamics(report):
    env = TabularGameEnv("paired")
    # brute force identifies the pair whose regret no policy can reduce below the game value
    brute = {i: brute_pair_regret(env.rewards[i - 1], env.rewards[i]) for i in (1, 3, 5)}
    hardest = max(brute, key=brute.get)
    pair = [hardest, hardest + 1]

    start = time.perf_counter()
    cfg = load_config(CONFIGS / "tabular_mmr_paired.json")
    hist = paired_perfect_regret_loop(env, iterations=cfg.train.iterations, seed=SEEDS_50,
                                      updates_per_side=cfg.agent.updates_per_side, config=_loop_config(cfg, cfg.train.iterations))
    ids = [lv.id for lv in hist.levels]
    mass = hist.adversary_probs[-1][:, [ids.index(hardest), ids.index(hardest + 1)]].sum(axis=1)

    rcfg = load_config(CONFIGS / "remidi_tabular.json")
    rh = remidi_tabular_loop(env, iterations_per_adversary=rcfg.train.iterations, seed=SEEDS_50,
                             adversary_count=rcfg.train.adversary_count, updates_per_side=rcfg.agent.updates_per_side,
                             config=_loop_config(rcfg, rcfg.train.iterations))
    elapsed = time.perf_counter() - start
    final = np.sort(rh.key_regrets[-1], axis=1)
    target = np.array([0.175, 0.175, 1.0])
    close = int((np.abs(final - target) <= 0.05).all(axis=1).sum())
    concentrated = int((mass >= 0.9).sum())
    ok = concentrated >= 45 and close >= 45 and elapsed <= 60
    detail = (f"pair {pair}: mass>=0.9 in {concentrated}/50 (min {mass.min():.3f}); "
              f"refined regrets within 0.05 in {close}/50; {elapsed:.1f}s")
    report("5 variant-2 dynamics", ok, detail)


@pytest.mark.slow
def test_criterion_6_lever(report):
    plr_cfg = load_config(CONFIGS / "lever_plr.json")
    rem_cfg = load_config(CONFIGS / "lever_remidi.json")
    assert rem_cfg.remidi.buffer_count == 2 and rem_cfg.remidi.inner_buffer_size == 32
    assert rem_cfg.plr.prioritization == "topk" and rem_cfg.plr.k == 32
    start = time.perf_counter()
    plr_ok = rem_ok = 0
    notes = []
    for seed in SEEDS_10:
        p = run_experiment(plr_cfg, seed).summary
        r = run_experiment(rem_cfg, seed).summary
        buf = p["buffers"][0]
        inv_frac = buf["invisible"] / max(buf["size"], 1)
        plr_pass = p["final_eval"]["visible"] <= 0.10 and inv_frac >= 0.95
        ev = r["final_eval"]
        rem_pass = ev["visible"] >= 0.99 and abs(ev["invisible"] - 1 / 64) <= 3 * ev["invisible_se"]
        plr_ok += plr_pass
        rem_ok += rem_pass
        notes.append(f"s{seed}:plr vis={p['final_eval']['visible']:.3f} inv_frac={inv_frac:.2f} "
                     f"remidi vis={ev['visible']:.3f} inv={ev['invisible']:.4f}+-{ev['invisible_se']:.4f}")
    elapsed = time.perf_counter() - start
    ok = plr_ok == 10 and rem_ok == 10 and elapsed <= 300
    report("6 lever game", ok, f"plr {plr_ok}/10, remidi {rem_ok}/10 in {elapsed:.0f}s; " + "; ".join(notes))


@pytest.mark.slow
def test_criterion_7_grid_stagnation(report):
    plr_cfg = load_config(CONFIGS / "grid_plr.json")
    rem_cfg = load_config(CONFIGS / "grid_remidi.json")
    start = time.perf_counter()
    stagnated = clean = better = 0
    notes = []
    for seed in SEEDS_10:
        p = run_experiment(plr_cfg, seed).summary
        r = run_experiment(rem_cfg, seed).summary
        frac = p["late_replay_fractions"]["tmaze"]
        tmazes = r["buffers"][1]["tmaze"] if len(r["buffers"]) > 1 else None
        pm, rm = p["final_eval"]["maze"], r["final_eval"]["maze"]
        stagnated += frac is not None and frac >= 0.9
        clean += tmazes == 0
        better += rm > pm
        frac_s = "none" if frac is None else f"{frac:.3f}"
        notes.append(f"s{seed}:tmaze_frac={frac_s} buf2_tmazes={tmazes} maze {pm:.3f}->{rm:.3f}")
    elapsed = time.perf_counter() - start
    ok = stagnated == 10 and clean == 10 and better >= 8 and elapsed <= 600
    detail = f"plr stagnated {stagnated}/10, buffer-2 clean {clean}/10, remidi better {better}/10 in {elapsed:.0f}s; "
    report("7 grid stagnation", ok, detail + "; ".join(notes))


def test_criterion_8_refinement_properties(report):
    start = time.perf_counter()
    checks = theorem_checks(instances=50, seed=0, tol=1e-6)
    elapsed = time.perf_counter() - start
    failed = [c.line() for c in checks if not c.passed]
    ok = not failed and elapsed <= 120
    report("8 refinement properties", ok, f"{len(checks) - len(failed)}/{len(checks)} checks over 50 instances in {elapsed:.1f}s {failed[:3]}")


def test_criterion_9_infrastructure(report, tmp_path):
    identical = True
    for name in ("tabular_mmr_paired", "exact_blp", "decision_rules"):
        outs = [tmp_path / f"{name}_{i}" for i in range(2)]
        for out in outs:
            assert main(["run", "--config", str(CONFIGS / f"{name}.json"), "--seed", "3", "--out", str(out)]) == 0
        for csv in sorted(outs[0].glob("*.csv")):
            identical &= csv.read_bytes() == (outs[1] / csv.name).read_bytes()

    rng = np.random.default_rng(2024)
    worst_gap = worst_diff = 0.0
    for _ in range(100):
        m = rng.uniform(-1, 1, size=(int(rng.integers(1, 7)), int(rng.integers(1, 7))))
        sol = solve_zero_sum(m)
        gap = duality_gap(m, sol.adversary_distribution, sol.agent_mixture)
        ref = support_enumeration(m)
        worst_gap = max(worst_gap, gap)
        worst_diff = max(worst_diff, abs(sol.value - ref.value))
    ok = identical and worst_gap <= 1e-6 and worst_diff <= 1e-6
    report("9 infrastructure", ok, f"csv identical={identical}, max duality gap {worst_gap:.2e}, max |lp - enumeration| {worst_diff:.2e}")

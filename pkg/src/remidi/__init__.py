"""Minimax-regret refinement for underspecified POMDPs: exact solvers, curation loops and experiments."""

__version__ = "0.1.0"

from .blp import RefinementChain, bayes_consistency_check, blp_solve, combine, verify_theorem_4_4
from .core import (
    UPOMDP,
    BudgetExceeded,
    DeterministicPolicy,
    DomainError,
    Level,
    Rollout,
    TabularPolicy,
    Trajectory,
    expected_return,
    realisable_trajectories,
    sample_rollout,
    trajectory_overlap,
)
from .games import (
    DecisionMatrix,
    GameTree,
    RefinedGameSpec,
    regret_matrix,
    solve_mmr_game,
    solve_refined_game,
    solve_zero_sum,
    verify_theorem_4_3,
)
from .learners import TabularActorCritic, paired_perfect_regret_loop, remidi_tabular_loop
from .multibuffer import masked_update, overlap_filter, run_remidi
from .oracle import PerfectRegret, optimal_return, regret
from .plr import LevelBuffer, Rank, TopK, run_plr

__all__ = [name for name in dir() if not name.startswith("_")]

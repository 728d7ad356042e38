"""User-level differentially private multi-task learning with skew-aware budget allocation."""
from .allocation import (
    WeightPlan,
    adaptive_plan,
    clip_user_budgets,
    generalized_weights,
    improvement_ratio,
    optimal_weights,
    solve_allocation_numeric,
    weights_from_private_counts,
)
from .graph import MultiTaskDataset, RatingData, TaskUserGraph, build_graph, make_dataset
from .kernels import BACKEND
from .matcomp import FactorizationModel, alternating_minimization, recall_at_k, rmse, sliced_metrics
from .privacy import RdpAccount, dp_to_rdp, per_user_budget, private_counts, rdp_to_dp
from .solvers import (
    GdConfig,
    ModelParams,
    RidgeLoss,
    excess_risk,
    ridge_exact,
    schedule_lipschitz,
    schedule_strongly_convex,
    weighted_noisy_gd,
    weighted_ssp,
)
from .synthgen import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "FactorizationModel",
    "GdConfig",
    "ModelParams",
    "MultiTaskDataset",
    "RatingData",
    "RdpAccount",
    "RidgeLoss",
    "SynthConfig",
    "TaskUserGraph",
    "WeightPlan",
    "adaptive_plan",
    "alternating_minimization",
    "build_graph",
    "clip_user_budgets",
    "dp_to_rdp",
    "excess_risk",
    "generalized_weights",
    "generate",
    "improvement_ratio",
    "make_dataset",
    "optimal_weights",
    "per_user_budget",
    "private_counts",
    "rdp_to_dp",
    "recall_at_k",
    "ridge_exact",
    "rmse",
    "schedule_lipschitz",
    "schedule_strongly_convex",
    "sliced_metrics",
    "solve_allocation_numeric",
    "weighted_noisy_gd",
    "weighted_ssp",
    "weights_from_private_counts",
]

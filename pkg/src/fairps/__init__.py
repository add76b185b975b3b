"""Fairness-aware performative prediction under state-dependent dynamics."""
from .dynamics import (
    FairPS,
    Problem,
    Trajectory,
    TrajectoryPoint,
    Verdict,
    detect_convergence,
    fair_rerm,
    fair_rrm,
    find_fair_ps,
    repeated_dro,
)
from .losses import FairMechanism, LossSpec, Model, chi2_worst_weights, rw_weights
from .metrics import certificate, contraction_ratios, loss_disparity, monotonicity_report, participation_disparity
from .population import GroupDistribution, PopulationState, make_population, wasserstein1
from .scenarios import build_population, build_problem, load_scenario
from .transitions import DeploymentSchema, apply_transition

__all__ = [
    "DeploymentSchema", "FairMechanism", "FairPS", "GroupDistribution", "LossSpec", "Model",
    "PopulationState", "Problem", "Trajectory", "TrajectoryPoint", "Verdict", "apply_transition",
    "build_population", "build_problem", "certificate", "chi2_worst_weights", "contraction_ratios",
    "detect_convergence", "fair_rerm", "fair_rrm", "find_fair_ps", "load_scenario", "loss_disparity",
    "make_population", "monotonicity_report", "participation_disparity", "repeated_dro", "rw_weights",
    "wasserstein1",
]

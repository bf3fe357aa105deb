"""Constrained iLQR motion planning with a closed-loop driving simulator."""

from .lanes import (
    ExtrapolationError,
    LaneMap,
    LanePolynomial,
    PreviewCorrection,
    VpcConfig,
    VpcEstimator,
    apply_vpc,
    average_lane_maps,
    curvature_at,
    fit_lane_polynomial,
    preview_correction,
)
from .ilqr import (
    AffineDynamics,
    BackwardPassError,
    BarrierKind,
    BarrierTerm,
    GainSchedule,
    InfeasibleTrajectoryError,
    ProblemSpec,
    QuadraticCost,
    SolveInfo,
    SolveResult,
    SolverConfig,
    Trajectory,
    backward_pass,
    barrier_value_and_derivatives,
    forward_pass,
    rollout,
    solve,
    total_cost,
)
from .lateral import (
    LateralPlanner,
    LateralState,
    LateralTuning,
    SteerCommand,
    VehicleParams,
    build_lateral_dynamics,
    build_lateral_problem,
    plan_steering,
)
from .longitudinal import (
    LeadMeasurement,
    LongCommand,
    LongTuning,
    LongitudinalPlanner,
    LongitudinalState,
    PiState,
    build_following_problem,
    build_longitudinal_dynamics,
    pi_cruise,
    plan_longitudinal,
)

__all__ = [
    "AffineDynamics",
    "BackwardPassError",
    "BarrierKind",
    "BarrierTerm",
    "ExtrapolationError",
    "GainSchedule",
    "InfeasibleTrajectoryError",
    "LaneMap",
    "LanePolynomial",
    "LateralPlanner",
    "LateralState",
    "LateralTuning",
    "LeadMeasurement",
    "LongCommand",
    "LongTuning",
    "LongitudinalPlanner",
    "LongitudinalState",
    "PiState",
    "PreviewCorrection",
    "ProblemSpec",
    "QuadraticCost",
    "SolveInfo",
    "SolveResult",
    "SolverConfig",
    "SteerCommand",
    "Trajectory",
    "VehicleParams",
    "VpcConfig",
    "VpcEstimator",
    "apply_vpc",
    "average_lane_maps",
    "backward_pass",
    "barrier_value_and_derivatives",
    "build_following_problem",
    "build_lateral_dynamics",
    "build_lateral_problem",
    "build_longitudinal_dynamics",
    "curvature_at",
    "fit_lane_polynomial",
    "forward_pass",
    "pi_cruise",
    "plan_longitudinal",
    "plan_steering",
    "preview_correction",
    "rollout",
    "solve",
    "total_cost",
]

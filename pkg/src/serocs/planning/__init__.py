"""Long-horizon trajectory optimization: a dense convex QP solver and the CFS planner."""
from .cfs import (LinearizedConstraint, PlannerConfig, PlanningProblem, TrajectoryPlan, braking_reference,
                  build_problem,
                  cfs_solve, convex_feasible_set, default_critical_point, goal_configuration,
                  human_obstacles, initial_reference, min_clearance, quadratic_cost, rollout, state_maps,
                  trajectory_cost, trapezoid_weights)
from .qp import INFEASIBLE, MAX_ITER, SOLVED, UNBOUNDED, QPResult, kkt_residuals, solve_qp

__all__ = [
    "LinearizedConstraint", "PlannerConfig", "PlanningProblem", "TrajectoryPlan", "braking_reference",
    "build_problem",
    "cfs_solve", "convex_feasible_set", "default_critical_point", "goal_configuration", "human_obstacles",
    "initial_reference", "min_clearance", "quadratic_cost", "rollout", "state_maps", "trajectory_cost",
    "trapezoid_weights", "INFEASIBLE", "MAX_ITER", "SOLVED", "UNBOUNDED", "QPResult", "kkt_residuals",
    "solve_qp",
]

//! Discounted MDPs with interval-valued costs.
//!
//! The crate evaluates the set-based Bellman operator on boxes of value
//! functions, computes its fixed-point box, certifies policies over cost
//! intervals and bounds the value trajectories of single-controller
//! two-player stochastic games.

pub mod cli;
pub mod error;
pub mod game;
pub mod grid;
pub mod interval;
pub mod mdp;
pub mod random;
pub mod schema;
pub mod set_bellman;

pub use error::{Error, Result};
pub use game::{
    containment_report, interval_over_approx, player_one_cost, player_one_kernel, player_two_cost, player_two_kernel,
    two_player_vi, ContainmentReport, ContainmentTolerance, CouplingForm, GameTrajectory, OpponentStrategy,
    SingleControllerGame,
};
pub use grid::{build_grid_kernel, sample_cost_matrices, GridSpec};
pub use interval::{
    hausdorff_interval, hausdorff_point_set, interval_add, interval_min, interval_scale, point_to_box_distance, Interval,
    IntervalMatrix, IntervalVector, PointSet,
};
pub use mdp::{
    bellman_apply, certify_interval_optimality, greedy_policy, policy_evaluation, policy_matrix, stationary_cost,
    validate_mdp, value_iteration, Certificate, Mdp, Policy, ValueFunction, ViOutcome,
};
pub use set_bellman::{
    fixed_point_box, inflate, random_cost_trajectory, sampled_fixed_points, sampled_fixed_points_with, set_bellman_apply, set_value_iteration,
    BoundedTrajectory, CostSampler, IntervalMdp, SetViSolution,
};

//! Reachable sets of nonlinear control systems as sub-level sets of a single
//! stored value field.
//!
//! The value field is produced by a backward dynamic-programming recursion on a
//! Cartesian grid. Dynamics and running cost are "frozen" inside the target set,
//! so after `m` steps the field equals the minimal performance index (running
//! cost integral plus endpoint cost) wherever that index is below
//! `lambda * horizon + endpoint_lower_bound`. Every reachable set with an
//! admissible cost under that bound is then `{ s | W(s) <= J }`, and the same
//! field drives a stationary feedback law.
//!
//! The crate is `no_std` with `alloc`. Enable `std` for a wall clock and
//! `parallel` for rayon-backed sweeps; both produce bit-identical fields.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod analysis;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod grid;
mod math;
pub mod oracle;
pub mod solver;
pub mod systems;

pub use analysis::{extract_contours, mask, member, slice, LevelSetContour, Mask, Membership};
pub use control::{
    optimal_control, simulate_closed_loop, verify_region, ControlChoice, VerificationReport,
    VerifySettings,
};
pub use dynamics::{
    frozen_stage_cost, frozen_step, integrate_step, stage_cost, CostSpec, Dynamics, EndpointCost,
    Problem, RunningCost, SystemModel, TargetBox, TargetSet, Trajectory,
};
pub use error::{Error, Result};
pub use grid::{Axis, FieldMeta, GridSpec, OutOfDomain, ValueField};
pub use oracle::{brute_force_value, compare_field, ComparisonStats, OracleResult, OracleSettings};
pub use solver::{
    bellman_step, compute_horizon, init_terminal, solve, solve_with_clock, Clock, SolveReport,
    SolverConfig, StepStats,
};
pub use systems::{builtin_system, BuiltinParams, BuiltinSystem, EndpointSelector};

/// Largest state dimension the stack-buffered kernels support.
pub const MAX_DIM: usize = 8;

//! Numeric tolerances shared by validation code.

/// Transition rows and initial distributions must sum to one within this.
pub const ROW_SUM: f64 = 1e-12;
/// Mass conservation of forward state distributions.
pub const DIST_MASS: f64 = 1e-10;
/// Action distributions emitted by a policy during rollouts.
pub const POLICY_NORM: f64 = 1e-9;
/// Simplex rows held by tabular policies and EG state.
pub const SIMPLEX_ROW: f64 = 1e-12;
/// Smallest standard deviation of a gaussian policy.
pub const SIGMA_MIN: f64 = 1e-3;

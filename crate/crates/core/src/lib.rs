//! Interactive imitation learning with differentiable policies.
//!
//! The crate pairs exact finite-horizon MDP machinery with learners that
//! query an expert's cost-to-go: online gradient descent, exponentiated
//! gradient and natural gradient updates, follow-the-leader and
//! weighted-majority learners on trees, plus REINFORCE and UCB baselines
//! and a regret harness that measures how cumulative regret scales.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod estimators;
pub mod learner;
pub mod mdp;
pub mod optimizers;
pub mod oracle;
pub mod params;
pub mod policy;
pub mod rng;
pub mod tol;
pub mod verify;

pub use error::{Error, Result};

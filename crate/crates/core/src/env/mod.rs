//! Environment constructors.

pub mod bandit;
pub mod parsing;
pub mod point_mass;
pub mod random;
pub mod tree;

//! Black-box falsification toolkit for an autonomous car on an obstructed
//! track.
//!
//! A deterministic 2D simulator drives a black-box controller through
//! obstacle environments, and a family of tree searches over environment
//! mutations looks for obstacle placements that make the run fail its task.
//! Successor environments are evaluated incrementally: the trajectory prefix
//! untouched by a mutation is kept, and simulation resumes from the first
//! step whose observation the mutation compromises.

pub mod baselines;
pub mod env;
pub mod geometry;
pub mod harness;
pub mod meta;
pub mod planner;
pub mod sim;

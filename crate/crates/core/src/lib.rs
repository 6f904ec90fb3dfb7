//! Continuous-time entropy-regularised linear-quadratic control and learning.

pub mod model;
pub mod policy;
pub mod riccati;
pub mod dynamics;
pub mod rng;
pub mod inference;
pub mod stats;
pub mod learner;
pub mod experiments;

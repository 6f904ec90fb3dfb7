//! State dynamics under randomised and relaxed execution, and the exact and
//! Monte Carlo evaluators of their costs.

mod gap;
mod moments;
mod montecarlo;
mod repetition;
mod simulate;

pub use gap::{closed_form_gap, expected_gap, gap_functions, CellIntegrals, GapFunctions};
pub use moments::{
    conditional_cost_exact, conditional_moments, general_conditional_cost_exact,
    general_relaxed_cost_exact, optimal_cost, relaxed_cost_exact, ConditionalMoments, Execution,
    MomentEngine,
};
pub use montecarlo::{mc_cost, mc_gap, McEstimate, PairedEstimate};
pub use repetition::{repetition_bias, RepetitionBias};
pub use simulate::{replay_general, simulate_episode, simulate_general, EpisodeTrajectory};

use thiserror::Error;

use crate::model::{ModelError, TimeGrid};
use crate::policy::PolicyError;
use crate::riccati::RiccatiError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error("grid with {fine} steps on [0, {fine_horizon}] does not refine grid with {coarse} steps on [0, {coarse_horizon}]")]
    NotRefining {
        fine: usize,
        fine_horizon: f64,
        coarse: usize,
        coarse_horizon: f64,
    },
    #[error("grid horizon {found} differs from model horizon {expected}")]
    HorizonMismatch { found: f64, expected: f64 },
    #[error("need at least 2 Monte Carlo paths, got {0}")]
    TooFewPaths(usize),
    #[error("need at least one agent")]
    NoAgents,
    #[error("growth rate must be non-zero")]
    ZeroRate,
}

/// Integer factor by which `fine` refines `coarse`.
pub(crate) fn refinement(fine: &TimeGrid, coarse: &TimeGrid) -> Result<usize, DynamicsError> {
    fine.refinement_factor(coarse)
        .ok_or(DynamicsError::NotRefining {
            fine: fine.steps(),
            fine_horizon: fine.horizon(),
            coarse: coarse.steps(),
            coarse_horizon: coarse.horizon(),
        })
}

pub(crate) fn check_horizon(grid: &TimeGrid, horizon: f64) -> Result<(), DynamicsError> {
    if (grid.horizon() - horizon).abs() <= 1e-12 * horizon.max(1.0) {
        Ok(())
    } else {
        Err(DynamicsError::HorizonMismatch {
            found: grid.horizon(),
            expected: horizon,
        })
    }
}

/// Checks that `fine` refines `coarse`.
pub fn refinement_check(fine: &TimeGrid, coarse: &TimeGrid) -> Result<usize, DynamicsError> {
    refinement(fine, coarse)
}

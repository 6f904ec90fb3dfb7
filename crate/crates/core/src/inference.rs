//! Gaussian posterior for the drift parameters `θ = (A, B)` from observed
//! trajectories, and its truncation to the known parameter box.

use thiserror::Error;

use crate::dynamics::EpisodeTrajectory;
use crate::model::{DriftParams, ThetaBox, TimeFunction};

const DET_GUARD: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("noise level vanishes at t = {0}")]
    ZeroNoise(f64),
    #[error("prior covariance is not symmetric positive definite")]
    PriorNotSpd,
    #[error("posterior precision is singular (determinant {0:e})")]
    Singular(f64),
}

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Mat2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0)
    }

    pub fn scaled_identity(s: f64) -> Self {
        Self::new(s, 0.0, s)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn inverse(&self) -> Result<Self, InferenceError> {
        let det = self.det();
        if !(det.abs() > DET_GUARD) || !det.is_finite() {
            return Err(InferenceError::Singular(det));
        }
        Ok(Self::new(self.yy / det, -self.xy / det, self.xx / det))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(self.xx + other.xx, self.xy + other.xy, self.yy + other.yy)
    }

    /// Row vector times matrix.
    pub fn left_mul(&self, v: [f64; 2]) -> [f64; 2] {
        [
            v[0] * self.xx + v[1] * self.xy,
            v[0] * self.xy + v[1] * self.yy,
        ]
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let disc = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (half_tr - disc, half_tr + disc)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().0
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0
    }
}

/// Accumulated `∫ Z Zᵀ/σ̄² dt` and `∫ Z/σ̄² dX` with `Z = (X, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SufficientStats {
    pub gram: Mat2,
    pub moment: [f64; 2],
    pub episodes: usize,
}

impl SufficientStats {
    /// Adds one trajectory: left-endpoint sums for the Gram integral and
    /// the Itô forward sum for the stochastic integral.
    pub fn accumulate(
        &self,
        traj: &EpisodeTrajectory,
        noise: &TimeFunction,
    ) -> Result<Self, InferenceError> {
        let mut out = *self;
        let dt = traj.grid.dt();
        let steps = traj.states.len().saturating_sub(1);
        for i in 0..steps {
            let t = traj.grid.knot(i);
            let sigma = noise.value(t);
            if sigma == 0.0 {
                return Err(InferenceError::ZeroNoise(t));
            }
            let w = 1.0 / (sigma * sigma);
            let (x, a) = (traj.states[i], traj.actions[i]);
            out.gram.xx += x * x * w * dt;
            out.gram.xy += x * a * w * dt;
            out.gram.yy += a * a * w * dt;
            let dx = traj.states[i + 1] - x;
            out.moment[0] += x * dx * w;
            out.moment[1] += a * dx * w;
        }
        out.episodes += 1;
        Ok(out)
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            gram: self.gram.add(&other.gram),
            moment: [self.moment[0] + other.moment[0], self.moment[1] + other.moment[1]],
            episodes: self.episodes + other.episodes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorState {
    /// Posterior mean `θ̂`.
    pub theta_hat: DriftParams,
    /// Posterior covariance `V`.
    pub covariance: Mat2,
    /// `V⁻¹`.
    pub precision: Mat2,
    /// Estimate used for control; `θ̂` until truncated.
    pub theta: DriftParams,
}

/// `V = (V₀⁻¹ + G)⁻¹` and `θ̂ = (θ₀ V₀⁻¹ + bᵀ) V`.
pub fn posterior(
    prior_theta: DriftParams,
    prior_cov: &Mat2,
    stats: &SufficientStats,
) -> Result<PosteriorState, InferenceError> {
    if !prior_cov.is_positive_definite() {
        return Err(InferenceError::PriorNotSpd);
    }
    let prior_precision = prior_cov.inverse()?;
    let precision = prior_precision.add(&stats.gram);
    let covariance = precision.inverse()?;
    let weighted = prior_precision.left_mul(prior_theta.to_array());
    let rhs = [weighted[0] + stats.moment[0], weighted[1] + stats.moment[1]];
    let theta_hat = DriftParams::from_array(covariance.left_mul(rhs));
    Ok(PosteriorState {
        theta_hat,
        covariance,
        precision,
        theta: theta_hat,
    })
}

/// Coordinatewise projection of `θ̂` onto the box.
pub fn truncate(post: &PosteriorState, theta_box: &ThetaBox) -> DriftParams {
    theta_box.clip(&post.theta_hat)
}

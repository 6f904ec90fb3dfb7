//! Bias from reusing one noise draw over a whole episode.
//!
//! Agent `i` runs `ẋ = μ x + λ ζ_i` from the origin on `[0, 1]` with cost
//! `∫ (μ x + λ ζ_i)² dt`, while the relaxed policy keeps `x ≡ 0` at cost
//! `λ²`. Averaging over agents does not recover the relaxed cost.

use rand::Rng;
use rand_distr::StandardNormal;

use super::DynamicsError;
use crate::dynamics::McEstimate;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepetitionBias {
    /// Agent-average cost minus the relaxed cost, with its standard error.
    pub empirical: McEstimate,
    /// `λ²/(2μ) (e^{2μ} - 2μ - 1)`.
    pub analytic: f64,
}

/// One agent's cost by RK4 on `(x, ∫ ẋ²)`.
fn agent_cost(mu: f64, push: f64, steps: usize) -> f64 {
    let h = 1.0 / steps as f64;
    let rhs = |x: f64| {
        let v = mu * x + push;
        (v, v * v)
    };
    let (mut x, mut cost) = (0.0, 0.0);
    for _ in 0..steps {
        let (k1, c1) = rhs(x);
        let (k2, c2) = rhs(x + 0.5 * h * k1);
        let (k3, c3) = rhs(x + 0.5 * h * k2);
        let (k4, c4) = rhs(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        cost += h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4);
    }
    cost
}

/// Simulates `n_agents` agents with draws from stream 0 under `seed`, each
/// integrated on `steps` RK4 steps.
pub fn repetition_bias(
    mu: f64,
    lambda: f64,
    n_agents: usize,
    steps: usize,
    seed: u64,
) -> Result<RepetitionBias, DynamicsError> {
    if mu == 0.0 {
        return Err(DynamicsError::ZeroRate);
    }
    if n_agents == 0 {
        return Err(DynamicsError::NoAgents);
    }
    let mut rng = stream_rng(seed, 0);
    let relaxed = lambda * lambda;
    let gaps: Vec<f64> = (0..n_agents)
        .map(|_| {
            let zeta: f64 = rng.sample(StandardNormal);
            agent_cost(mu, lambda * zeta, steps.max(1)) - relaxed
        })
        .collect();
    let empirical = if gaps.len() > 1 {
        McEstimate::from_samples(&gaps)
    } else {
        McEstimate {
            mean: gaps[0],
            std_error: f64::INFINITY,
            n_paths: 1,
        }
    };
    let analytic = relaxed / (2.0 * mu) * ((2.0 * mu).exp() - 2.0 * mu - 1.0);
    Ok(RepetitionBias {
        empirical,
        analytic,
    })
}

//! Monte Carlo cost oracles over independent Brownian drivers.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::simulate::StepTable;
use super::{DynamicsError, Execution};
use crate::model::{CostSpec, GeneralLqModel, TimeGrid};
use crate::policy::{GaussianPolicy, NoisePath};
use crate::rng::stream_rng;

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            std_error: (var / n).sqrt(),
            n_paths: samples.len(),
        }
    }

    /// Whether `value` lies within `k` standard errors.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

/// Randomised and relaxed costs on common Brownian increments, with the
/// paired difference `J(φ) - J̃(ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedEstimate {
    pub randomised: McEstimate,
    pub relaxed: McEstimate,
    pub difference: McEstimate,
}

struct CostTable {
    q: Vec<f64>,
    s: Vec<f64>,
    r: Vec<f64>,
    p: Vec<f64>,
    ql: Vec<f64>,
    m: f64,
    m_bar: f64,
}

impl CostTable {
    fn new(cost: &CostSpec, grid: &TimeGrid) -> Self {
        let tab = |f: &crate::model::TimeFunction| grid.knots().iter().map(|&t| f.value(t)).collect();
        Self {
            q: tab(&cost.state_weight),
            s: tab(&cost.cross_weight),
            r: tab(&cost.control_weight),
            p: tab(&cost.state_linear),
            ql: tab(&cost.control_linear),
            m: cost.terminal_weight,
            m_bar: cost.terminal_linear,
        }
    }

    #[inline]
    fn running(&self, i: usize, x: f64, a: f64) -> f64 {
        self.q[i] * x * x
            + 2.0 * self.s[i] * x * a
            + self.r[i] * a * a
            + 2.0 * self.p[i] * x
            + 2.0 * self.ql[i] * a
    }
}

/// Left-endpoint pathwise cost along one Euler–Maruyama path.
fn path_cost(
    table: &StepTable,
    costs: &CostTable,
    exec: Execution,
    factor: Option<usize>,
    increments: &[f64],
) -> f64 {
    let n = table.grid.steps();
    let dt = table.grid.dt();
    let relaxed = matches!(exec, Execution::Relaxed);
    let mut total = 0.0;
    table.run(
        exec,
        factor,
        |i| increments[i],
        |i, x, a| {
            if i < n {
                let mut f = costs.running(i, x, a);
                if relaxed {
                    let lam = table.knots[i].lam;
                    f += costs.r[i] * lam * lam;
                }
                total += f * dt;
            } else {
                total += costs.m * x * x + 2.0 * costs.m_bar * x;
            }
        },
    );
    total
}

fn increments_for(grid: &TimeGrid, seed: u64, path: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, path as u64);
    let scale = grid.dt().sqrt();
    (0..grid.steps())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Mean pathwise cost over `n_paths` Brownian drivers; path `i` uses
/// stream `i` under `seed`. A randomised execution holds its noise path
/// fixed, so the estimate targets the conditional cost.
pub fn mc_cost(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    exec: Execution,
    n_paths: usize,
    sim_grid: &TimeGrid,
    seed: u64,
) -> Result<McEstimate, DynamicsError> {
    if n_paths < 2 {
        return Err(DynamicsError::TooFewPaths(n_paths));
    }
    let table = StepTable::new(model, policy, sim_grid)?;
    let factor = table.noise_factor(exec)?;
    let costs = CostTable::new(&model.cost, sim_grid);
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| path_cost(&table, &costs, exec, factor, &increments_for(sim_grid, seed, i)))
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

/// Randomised and relaxed Monte Carlo costs with common random numbers.
pub fn mc_gap(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    noise: &NoisePath,
    n_paths: usize,
    sim_grid: &TimeGrid,
    seed: u64,
) -> Result<PairedEstimate, DynamicsError> {
    if n_paths < 2 {
        return Err(DynamicsError::TooFewPaths(n_paths));
    }
    let table = StepTable::new(model, policy, sim_grid)?;
    let randomised = Execution::Randomised(noise);
    let factor = table.noise_factor(randomised)?;
    let costs = CostTable::new(&model.cost, sim_grid);
    let pairs: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let dw = increments_for(sim_grid, seed, i);
            (
                path_cost(&table, &costs, randomised, factor, &dw),
                path_cost(&table, &costs, Execution::Relaxed, None, &dw),
            )
        })
        .collect();
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let d: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok(PairedEstimate {
        randomised: McEstimate::from_samples(&a),
        relaxed: McEstimate::from_samples(&b),
        difference: McEstimate::from_samples(&d),
    })
}

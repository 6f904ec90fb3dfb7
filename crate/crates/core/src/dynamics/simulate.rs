//! Euler–Maruyama simulation with recorded Brownian increments.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_horizon, refinement, DynamicsError, Execution};
use crate::model::{GeneralLqModel, LqModel, TimeGrid};
use crate::policy::{GaussianPolicy, NoisePath, RandomisedPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrajectory {
    /// Simulation grid.
    pub grid: TimeGrid,
    /// `X` at every simulation knot.
    pub states: Vec<f64>,
    /// Action at every simulation knot (the mean action under relaxed
    /// execution).
    pub actions: Vec<f64>,
    /// Execution noise; `None` for relaxed execution.
    pub noise: Option<NoisePath>,
    /// `ΔW_i = W_{t_{i+1}} - W_{t_i}`.
    pub increments: Vec<f64>,
}

impl EpisodeTrajectory {
    /// `(t, X, action, ξ, ΔW)` per knot; the last knot has no increment.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64, Option<f64>, Option<f64>)> + '_ {
        (0..self.states.len()).map(move |i| {
            let t = self.grid.knot(i);
            (
                t,
                self.states[i],
                self.actions[i],
                self.noise.as_ref().map(|n| n.value(t)),
                self.increments.get(i).copied(),
            )
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Knot {
    pub a: f64,
    pub b: f64,
    pub bbar: f64,
    pub c: f64,
    pub d: f64,
    pub sigma: f64,
    pub k: f64,
    pub gain: f64,
    pub lam: f64,
}

/// Model and policy coefficients at the knots of a simulation grid.
#[derive(Debug, Clone)]
pub(crate) struct StepTable {
    pub grid: TimeGrid,
    pub x0: f64,
    pub knots: Vec<Knot>,
}

impl StepTable {
    pub fn new(
        model: &GeneralLqModel,
        policy: &GaussianPolicy,
        grid: &TimeGrid,
    ) -> Result<Self, DynamicsError> {
        model.validate()?;
        check_horizon(grid, model.horizon)?;
        let knots = grid
            .knots()
            .into_iter()
            .map(|t| Knot {
                a: model.a.value(t),
                b: model.b.value(t),
                bbar: model.offset.value(t),
                c: model.c.value(t),
                d: model.d.value(t),
                sigma: model.noise.value(t),
                k: policy.offset.value(t),
                gain: policy.gain.value(t),
                lam: policy.std.value(t),
            })
            .collect();
        Ok(Self {
            grid: *grid,
            x0: model.x0,
            knots,
        })
    }

    /// Noise index per simulation step, or `None` for relaxed execution.
    pub fn noise_factor(&self, exec: Execution) -> Result<Option<usize>, DynamicsError> {
        match exec {
            Execution::Relaxed => Ok(None),
            Execution::Randomised(noise) => Ok(Some(refinement(&self.grid, &noise.grid)?)),
        }
    }

    /// Runs one Euler–Maruyama path, calling `visit(i, x, action)` at every
    /// knot and drawing the increment for step `i` from `increment(i)`.
    #[inline]
    pub fn run(
        &self,
        exec: Execution,
        factor: Option<usize>,
        mut increment: impl FnMut(usize) -> f64,
        mut visit: impl FnMut(usize, f64, f64),
    ) {
        let n = self.grid.steps();
        let dt = self.grid.dt();
        let mut x = self.x0;
        for i in 0..=n {
            let kn = &self.knots[i];
            let mean = kn.k + kn.gain * x;
            let action = match (exec, factor) {
                (Execution::Randomised(noise), Some(f)) => {
                    mean + kn.lam * noise.draws[(i / f).min(noise.draws.len() - 1)]
                }
                _ => mean,
            };
            visit(i, x, action);
            if i == n {
                break;
            }
            let drift = kn.a * x + kn.b * action + kn.bbar;
            let mut diffusion = kn.c * x + kn.d * action + kn.sigma;
            if let Execution::Relaxed = exec {
                let spread = kn.lam * kn.d;
                if spread != 0.0 {
                    diffusion = diffusion.hypot(spread).copysign(diffusion);
                }
            }
            x += drift * dt + diffusion * increment(i);
        }
    }
}

fn draw_increments<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> Vec<f64> {
    let scale = grid.dt().sqrt();
    (0..grid.steps())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Simulates the drift-controlled model under a randomised policy.
pub fn simulate_episode<R: Rng + ?Sized>(
    model: &LqModel,
    phi: &RandomisedPolicy,
    sim_grid: &TimeGrid,
    rng: &mut R,
) -> Result<EpisodeTrajectory, DynamicsError> {
    simulate_general(
        &GeneralLqModel::from_lq(model),
        &phi.base,
        Execution::Randomised(&phi.noise),
        sim_grid,
        rng,
    )
}

/// Simulates the controlled-diffusion model under relaxed or randomised
/// execution.
pub fn simulate_general<R: Rng + ?Sized>(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    exec: Execution,
    sim_grid: &TimeGrid,
    rng: &mut R,
) -> Result<EpisodeTrajectory, DynamicsError> {
    let table = StepTable::new(model, policy, sim_grid)?;
    let factor = table.noise_factor(exec)?;
    let increments = draw_increments(sim_grid, rng);
    Ok(replay(&table, exec, factor, increments))
}

/// Re-simulates with given Brownian increments.
pub fn replay_general(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    exec: Execution,
    sim_grid: &TimeGrid,
    increments: Vec<f64>,
) -> Result<EpisodeTrajectory, DynamicsError> {
    let table = StepTable::new(model, policy, sim_grid)?;
    let factor = table.noise_factor(exec)?;
    assert_eq!(increments.len(), sim_grid.steps(), "one increment per step");
    Ok(replay(&table, exec, factor, increments))
}

fn replay(
    table: &StepTable,
    exec: Execution,
    factor: Option<usize>,
    increments: Vec<f64>,
) -> EpisodeTrajectory {
    let n = table.grid.steps() + 1;
    let mut states = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    table.run(
        exec,
        factor,
        |i| increments[i],
        |_, x, a| {
            states.push(x);
            actions.push(a);
        },
    );
    EpisodeTrajectory {
        grid: table.grid,
        states,
        actions,
        noise: match exec {
            Execution::Relaxed => None,
            Execution::Randomised(noise) => Some(noise.clone()),
        },
        increments,
    }
}

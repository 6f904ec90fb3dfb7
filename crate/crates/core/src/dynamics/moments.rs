//! Exact costs from the closed ODE system for `(E[X], E[X²])`.
//!
//! Under a Gaussian policy the drift is affine and the squared diffusion is
//! quadratic in the state, so the first two moments solve a linear system.
//! The running cost is carried as a third RK4 state, which keeps the cost
//! integral at the same order as the moments.

use super::{check_horizon, refinement, DynamicsError};
use crate::model::{GeneralLqModel, LqModel, TimeFunction, TimeGrid};
use crate::policy::{GaussianPolicy, NoisePath};
use crate::riccati::{feedback_gains, solve_riccati};

/// How a Gaussian policy is executed.
#[derive(Debug, Clone, Copy)]
pub enum Execution<'a> {
    /// Actions integrated against `ν(t,x)`.
    Relaxed,
    /// `a = k + K x + λ ξ` with a frozen noise path.
    Randomised(&'a NoisePath),
}

/// Conditional first and second moments of the state on the ODE grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub m1: TimeFunction,
    pub m2: TimeFunction,
}

#[derive(Debug, Clone, Copy, Default)]
struct Coef {
    alpha: f64,
    gamma: f64,
    b: f64,
    bbar: f64,
    sigma: f64,
    d: f64,
    k: f64,
    lam: f64,
    // running cost in (m2, m1, κ): w m2 + (u κ + v0) m1 + r κ² + q2 κ
    w: f64,
    u: f64,
    v0: f64,
    r: f64,
    q2: f64,
}

impl Coef {
    #[inline]
    fn rhs(&self, xi: f64, relaxed: bool, s: [f64; 3]) -> [f64; 3] {
        let [m1, m2, _] = s;
        let kappa = self.k + self.lam * xi;
        let input = self.b * kappa + self.bbar;
        let c = self.sigma + self.d * kappa;
        let mut dm2 = (2.0 * self.alpha + self.gamma * self.gamma) * m2
            + 2.0 * (input + self.gamma * c) * m1
            + c * c;
        let mut dj = self.w * m2
            + (self.u * kappa + self.v0) * m1
            + (self.r * kappa + self.q2) * kappa;
        if relaxed {
            let spread = self.lam * self.lam;
            dm2 += spread * self.d * self.d;
            dj += self.r * spread;
        }
        [self.alpha * m1 + input, dm2, dj]
    }
}

/// Coefficients of the moment system tabulated at the knots and midpoints
/// of an ODE grid, so that repeated evaluations under different noise paths
/// only redo the RK4 sweep.
#[derive(Debug, Clone)]
pub struct MomentEngine {
    grid: TimeGrid,
    x0: f64,
    table: Vec<Coef>,
    terminal_weight: f64,
    terminal_linear: f64,
}

impl MomentEngine {
    pub fn new(
        model: &GeneralLqModel,
        policy: &GaussianPolicy,
        ode_grid: &TimeGrid,
    ) -> Result<Self, DynamicsError> {
        model.validate()?;
        check_horizon(ode_grid, model.horizon)?;
        let cost = &model.cost;
        let half = ode_grid.dt() * 0.5;
        let table = (0..=2 * ode_grid.steps())
            .map(|j| {
                let t = if j == 2 * ode_grid.steps() {
                    ode_grid.horizon()
                } else {
                    j as f64 * half
                };
                let (a, b, c, d) = (
                    model.a.value(t),
                    model.b.value(t),
                    model.c.value(t),
                    model.d.value(t),
                );
                let gain = policy.gain.value(t);
                let (q, s, r) = (
                    cost.state_weight.value(t),
                    cost.cross_weight.value(t),
                    cost.control_weight.value(t),
                );
                let (p_lin, q_lin) = (cost.state_linear.value(t), cost.control_linear.value(t));
                Coef {
                    alpha: a + b * gain,
                    gamma: c + d * gain,
                    b,
                    bbar: model.offset.value(t),
                    sigma: model.noise.value(t),
                    d,
                    k: policy.offset.value(t),
                    lam: policy.std.value(t),
                    w: q + 2.0 * s * gain + r * gain * gain,
                    u: 2.0 * s + 2.0 * r * gain,
                    v0: 2.0 * p_lin + 2.0 * q_lin * gain,
                    r,
                    q2: 2.0 * q_lin,
                }
            })
            .collect();
        Ok(Self {
            grid: *ode_grid,
            x0: model.x0,
            table,
            terminal_weight: cost.terminal_weight,
            terminal_linear: cost.terminal_linear,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn sweep(
        &self,
        xi: impl Fn(usize) -> f64,
        relaxed: bool,
        mut record: Option<&mut (Vec<f64>, Vec<f64>)>,
    ) -> f64 {
        let h = self.grid.dt();
        let mut s = [self.x0, self.x0 * self.x0, 0.0];
        if let Some(rec) = record.as_deref_mut() {
            rec.0.push(s[0]);
            rec.1.push(s[1]);
        }
        let add = |s: [f64; 3], k: [f64; 3], f: f64| {
            [s[0] + f * k[0], s[1] + f * k[1], s[2] + f * k[2]]
        };
        for i in 0..self.grid.steps() {
            let z = xi(i);
            let (c0, cm, c1) = (
                &self.table[2 * i],
                &self.table[2 * i + 1],
                &self.table[2 * i + 2],
            );
            let k1 = c0.rhs(z, relaxed, s);
            let k2 = cm.rhs(z, relaxed, add(s, k1, 0.5 * h));
            let k3 = cm.rhs(z, relaxed, add(s, k2, 0.5 * h));
            let k4 = c1.rhs(z, relaxed, add(s, k3, h));
            for c in 0..3 {
                s[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.0.push(s[0]);
                rec.1.push(s[1]);
            }
        }
        s[2] + self.terminal_weight * s[1] + 2.0 * self.terminal_linear * s[0]
    }

    /// Cost of the relaxed execution.
    pub fn relaxed_cost(&self) -> f64 {
        self.sweep(|_| 0.0, true, None)
    }

    /// Cost with `λ ξ` switched off.
    pub fn mean_policy_cost(&self) -> f64 {
        self.sweep(|_| 0.0, false, None)
    }

    /// Cost conditional on the noise path.
    pub fn conditional_cost(&self, noise: &NoisePath) -> Result<f64, DynamicsError> {
        let factor = refinement(&self.grid, &noise.grid)?;
        Ok(self.sweep(|i| noise.draws[i / factor], false, None))
    }

    /// [`Self::conditional_cost`] for raw draws on a uniform execution grid
    /// with `draws.len()` intervals dividing the ODE step count.
    pub fn conditional_cost_draws(&self, draws: &[f64]) -> f64 {
        let factor = self.grid.steps() / draws.len();
        debug_assert_eq!(factor * draws.len(), self.grid.steps());
        self.sweep(|i| draws[i / factor], false, None)
    }

    /// Moments on the ODE grid together with the cost.
    pub fn moments(&self, exec: Execution) -> Result<(ConditionalMoments, f64), DynamicsError> {
        let n = self.grid.steps() + 1;
        let mut rec = (Vec::with_capacity(n), Vec::with_capacity(n));
        let cost = match exec {
            Execution::Relaxed => self.sweep(|_| 0.0, true, Some(&mut rec)),
            Execution::Randomised(noise) => {
                let factor = refinement(&self.grid, &noise.grid)?;
                self.sweep(|i| noise.draws[i / factor], false, Some(&mut rec))
            }
        };
        let horizon = self.grid.horizon();
        let m1 = TimeFunction::sampled(horizon, rec.0)?;
        let m2 = TimeFunction::sampled(horizon, rec.1)?;
        Ok((ConditionalMoments { m1, m2 }, cost))
    }
}

pub fn conditional_moments(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    exec: Execution,
    ode_grid: &TimeGrid,
) -> Result<ConditionalMoments, DynamicsError> {
    Ok(MomentEngine::new(model, policy, ode_grid)?.moments(exec)?.0)
}

/// `E[∫ f + g | ξ]` for the drift-controlled model.
pub fn conditional_cost_exact(
    model: &LqModel,
    policy: &GaussianPolicy,
    noise: &NoisePath,
    ode_grid: &TimeGrid,
) -> Result<f64, DynamicsError> {
    general_conditional_cost_exact(&GeneralLqModel::from_lq(model), policy, noise, ode_grid)
}

/// Relaxed cost of the drift-controlled model, from the relaxed moment
/// system.
pub fn relaxed_cost_exact(
    model: &LqModel,
    policy: &GaussianPolicy,
    ode_grid: &TimeGrid,
) -> Result<f64, DynamicsError> {
    general_relaxed_cost_exact(&GeneralLqModel::from_lq(model), policy, ode_grid)
}

pub fn general_conditional_cost_exact(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    noise: &NoisePath,
    ode_grid: &TimeGrid,
) -> Result<f64, DynamicsError> {
    MomentEngine::new(model, policy, ode_grid)?.conditional_cost(noise)
}

pub fn general_relaxed_cost_exact(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    ode_grid: &TimeGrid,
) -> Result<f64, DynamicsError> {
    Ok(MomentEngine::new(model, policy, ode_grid)?.relaxed_cost())
}

/// Cost of the true-parameter optimal feedback, executed without noise.
pub fn optimal_cost(model: &LqModel, grid: &TimeGrid) -> Result<f64, DynamicsError> {
    let sol = solve_riccati(model.drift, &model.cost, grid)?;
    let policy = GaussianPolicy::deterministic(&feedback_gains(&sol, &model.cost));
    relaxed_cost_exact(model, &policy, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostSpec, DriftParams};
    use crate::policy::sample_noise_path_seeded;
    use crate::riccati::FeedbackGains;
    use proptest::prelude::*;

    fn tanh_model(x0: f64) -> LqModel {
        LqModel::new(
            DriftParams::new(0.0, 1.0),
            1.0.into(),
            x0,
            1.0,
            CostSpec::quadratic(1.0, 1.0, 0.0),
        )
        .unwrap()
    }

    fn constant_policy(k: f64, gain: f64, lam: f64) -> GaussianPolicy {
        GaussianPolicy::new(k.into(), gain.into(), lam.into()).unwrap()
    }

    #[test]
    fn zero_cost_is_zero() {
        let mut model = LqModel::benchmark();
        model.cost = CostSpec::zero();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let noise = sample_noise_path_seeded(&TimeGrid::new(1.0, 10).unwrap(), 1);
        let policy = constant_policy(0.3, -0.5, 0.7);
        assert_eq!(conditional_cost_exact(&model, &policy, &noise, &grid).unwrap(), 0.0);
        assert_eq!(relaxed_cost_exact(&model, &policy, &grid).unwrap(), 0.0);
        // with no state cost the optimal action is zero
        model.cost = CostSpec::quadratic(0.0, 1.0, 0.0);
        assert_eq!(optimal_cost(&model, &grid).unwrap(), 0.0);
    }

    #[test]
    fn unit_exploration_cost() {
        let model = LqModel::new(
            DriftParams::new(0.3, 1.0),
            0.5.into(),
            1.0,
            1.0,
            CostSpec {
                control_weight: 1.0.into(),
                ..CostSpec::zero()
            },
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let j = relaxed_cost_exact(&model, &constant_policy(0.0, 0.0, 1.0), &grid).unwrap();
        assert!((j - 1.0).abs() < 1e-13);
    }

    #[test]
    fn optimal_cost_from_origin_is_log_cosh() {
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let j = optimal_cost(&tanh_model(0.0), &grid).unwrap();
        assert!((j - 1f64.cosh().ln()).abs() < 1e-9, "{j}");
        assert!((j - 0.433781).abs() < 1e-6);
    }

    #[test]
    fn optimal_cost_matches_value_function() {
        // J* = P_0 x0² + ∫ P σ̄² for the homogeneous quadratic cost
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let j = optimal_cost(&tanh_model(1.5), &grid).unwrap();
        let expected = 1f64.tanh() * 2.25 + 1f64.cosh().ln();
        assert!((j - expected).abs() < 1e-9, "{j} vs {expected}");
    }

    #[test]
    fn optimal_beats_perturbed_gains() {
        let model = LqModel::benchmark();
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let best = optimal_cost(&model, &grid).unwrap();
        for (i, (da, db)) in [(0.5, 0.0), (-0.4, 0.3), (0.2, -0.5), (1.0, 1.0)].iter().enumerate() {
            let theta = DriftParams::new(model.drift.a + da, model.drift.b + db);
            let sol = solve_riccati(theta, &model.cost, &grid).unwrap();
            let policy = GaussianPolicy::deterministic(&feedback_gains(&sol, &model.cost));
            let j = relaxed_cost_exact(&model, &policy, &grid).unwrap();
            assert!(best <= j + 1e-9, "perturbation {i}: {best} > {j}");
        }
    }

    #[test]
    fn zero_std_makes_relaxed_and_conditional_agree() {
        let model = LqModel::benchmark();
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let noise = sample_noise_path_seeded(&TimeGrid::new(1.0, 20).unwrap(), 5);
        let policy = constant_policy(0.2, -0.8, 0.0);
        let a = conditional_cost_exact(&model, &policy, &noise, &grid).unwrap();
        let b = relaxed_cost_exact(&model, &policy, &grid).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn deterministic_mean_matches_closed_form() {
        // σ̄ > 0 only enters m2; m1 solves m' = (A + B K) m + B k exactly
        let model = LqModel::benchmark();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let policy = constant_policy(0.4, -1.3, 0.0);
        let m = conditional_moments(
            &GeneralLqModel::from_lq(&model),
            &policy,
            Execution::Relaxed,
            &grid,
        )
        .unwrap();
        let alpha = 0.3 - 1.3;
        let exact = |t: f64| ((alpha * t).exp() * (1.0 + 0.4 / alpha)) - 0.4 / alpha;
        for t in grid.knots() {
            assert!((m.m1.value(t) - exact(t)).abs() < 1e-10);
        }
        // variance with constant coefficients: σ̄² (e^{2αt} - 1)/(2α)
        for t in grid.knots() {
            let var = 0.25 * ((2.0 * alpha * t).exp() - 1.0) / (2.0 * alpha);
            let got = m.m2.value(t) - m.m1.value(t).powi(2);
            assert!((got - var).abs() < 1e-8);
        }
    }

    #[test]
    fn non_refining_grid_is_rejected() {
        let model = LqModel::benchmark();
        let noise = sample_noise_path_seeded(&TimeGrid::new(1.0, 7).unwrap(), 5);
        let policy = constant_policy(0.0, 0.0, 1.0);
        let grid = TimeGrid::new(1.0, 100).unwrap();
        assert!(matches!(
            conditional_cost_exact(&model, &policy, &noise, &grid),
            Err(DynamicsError::NotRefining { .. })
        ));
        let wrong = TimeGrid::new(2.0, 100).unwrap();
        assert!(relaxed_cost_exact(&model, &policy, &wrong).is_err());
    }

    #[test]
    fn embedding_agrees_with_general_model() {
        let model = LqModel::benchmark();
        let general = GeneralLqModel::from_lq(&model);
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let noise = sample_noise_path_seeded(&TimeGrid::new(1.0, 8).unwrap(), 9);
        let policy = constant_policy(0.1, -0.6, 0.5);
        let a = conditional_cost_exact(&model, &policy, &noise, &grid).unwrap();
        let b = general_conditional_cost_exact(&general, &policy, &noise, &grid).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn gains_from_any_theta_feed_the_engine() {
        let model = LqModel::benchmark();
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let gains = FeedbackGains {
            gain: TimeFunction::tabulate(&grid, |t| -1.0 - t),
            offset: TimeFunction::tabulate(&grid, |t| 0.1 * t),
            theta: model.drift,
        };
        let policy = GaussianPolicy::from_gains(&gains, 0.3.into()).unwrap();
        let j = relaxed_cost_exact(&model, &policy, &grid.refine(4)).unwrap();
        assert!(j.is_finite() && j > 0.0);
    }

    proptest! {
        #[test]
        fn second_moment_dominates_squared_mean(
            a in -1.0f64..1.0, b in -2.0f64..2.0, c in -0.5f64..0.5, d in -0.5f64..0.5,
            k in -1.0f64..1.0, gain in -2.0f64..1.0, lam in 0.0f64..1.5, seed in 0u64..1000,
        ) {
            let model = GeneralLqModel {
                a: a.into(), b: b.into(), offset: 0.2.into(), c: c.into(), d: d.into(),
                noise: 0.3.into(), x0: 0.7, horizon: 1.0,
                cost: CostSpec::quadratic(1.0, 1.0, 1.0),
            };
            let policy = GaussianPolicy::new(k.into(), gain.into(), lam.into()).unwrap();
            let grid = TimeGrid::new(1.0, 80).unwrap();
            let noise = sample_noise_path_seeded(&TimeGrid::new(1.0, 8).unwrap(), seed);
            for exec in [Execution::Relaxed, Execution::Randomised(&noise)] {
                let m = conditional_moments(&model, &policy, exec, &grid).unwrap();
                for t in grid.knots() {
                    prop_assert!(m.m2.value(t) >= m.m1.value(t).powi(2) - 1e-9);
                }
            }
        }
    }
}

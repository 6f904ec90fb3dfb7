//! Reproducible numerical studies shared by the command-line tool and the
//! acceptance suite.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{repetition_bias, DynamicsError, MomentEngine};
use crate::model::{CostSpec, DriftParams, GeneralLqModel, LqModel, TimeGrid};
use crate::policy::{exploratory_policy, GaussianPolicy};
use crate::riccati::{feedback_gains, solve_riccati, RiccatiError};
use crate::rng::stream_rng;
use crate::stats::{log_log_slope, mean, quantile, std_error};

pub const GAP_MESHES: [usize; 6] = [8, 16, 32, 64, 128, 256];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiRow {
    pub case: &'static str,
    pub steps: usize,
    pub dt: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiCheck {
    pub rows: Vec<RiccatiRow>,
    /// Max knot error of the tanh case at `dt = 1e-4`.
    pub tanh_error: f64,
    /// Max knot error of the exponential case at `dt = 1e-4`.
    pub exponential_error: f64,
    /// Fitted order of the tanh case on the coarse sweep.
    pub order: f64,
}

pub const RICCATI_TOLERANCE: f64 = 1e-8;
pub const ORDER_RANGE: (f64, f64) = (3.6, 4.4);

impl RiccatiCheck {
    pub fn passed(&self) -> bool {
        self.tanh_error <= RICCATI_TOLERANCE
            && self.exponential_error <= RICCATI_TOLERANCE
            && (ORDER_RANGE.0..=ORDER_RANGE.1).contains(&self.order)
    }
}

fn max_knot_error(
    theta: DriftParams,
    cost: &CostSpec,
    steps: usize,
    exact: impl Fn(f64) -> f64,
) -> Result<f64, RiccatiError> {
    let grid = TimeGrid::new(1.0, steps).expect("positive steps");
    let sol = solve_riccati(theta, cost, &grid)?;
    Ok(grid
        .knots()
        .iter()
        .map(|&t| (sol.p.value(t) - exact(t)).abs())
        .fold(0.0, f64::max))
}

/// Closed-form comparisons: `P_t = tanh(1 - t)` for `A = 0, B = Q = R = 1,
/// M = 0`, and `P_t = (M + Q/2A) e^{2A(1-t)} - Q/2A` for `B = 0`.
pub fn riccati_check(sweep: &[usize]) -> Result<RiccatiCheck, RiccatiError> {
    let tanh_theta = DriftParams::new(0.0, 1.0);
    let tanh_cost = CostSpec::quadratic(1.0, 1.0, 0.0);
    let tanh_exact = |t: f64| (1.0 - t).tanh();
    let (a, q, m) = (0.5, 1.0, 0.5);
    let exp_theta = DriftParams::new(a, 0.0);
    let exp_cost = CostSpec::quadratic(q, 1.0, m);
    let exp_exact = move |t: f64| (m + q / (2.0 * a)) * (2.0 * a * (1.0 - t)).exp() - q / (2.0 * a);

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &n in sweep {
        let err = max_knot_error(tanh_theta, &tanh_cost, n, tanh_exact)?;
        errors.push(err);
        rows.push(RiccatiRow {
            case: "tanh",
            steps: n,
            dt: 1.0 / n as f64,
            max_error: err,
        });
    }
    let fine = 10_000;
    let tanh_error = max_knot_error(tanh_theta, &tanh_cost, fine, tanh_exact)?;
    let exponential_error = max_knot_error(exp_theta, &exp_cost, fine, exp_exact)?;
    rows.push(RiccatiRow {
        case: "tanh",
        steps: fine,
        dt: 1e-4,
        max_error: tanh_error,
    });
    rows.push(RiccatiRow {
        case: "exponential",
        steps: fine,
        dt: 1e-4,
        max_error: exponential_error,
    });
    let dts: Vec<f64> = sweep.iter().map(|&n| 1.0 / n as f64).collect();
    Ok(RiccatiCheck {
        rows,
        tanh_error,
        exponential_error,
        order: log_log_slope(&dts, &errors),
    })
}

pub const DEFAULT_SWEEP: [usize; 5] = [10, 20, 40, 80, 160];

/// The exploratory policy `N(k^θ + K^θ x, ρ/(2R))` on `model`.
///
/// With `θ` equal to the true drift the first-order part of the mean gap
/// cancels, so rate studies use a misspecified `θ` such as the prior mean.
pub fn gap_setup(
    model: &LqModel,
    theta: DriftParams,
    rho: f64,
    grid_steps: usize,
) -> Result<(GeneralLqModel, GaussianPolicy), DynamicsError> {
    let grid = TimeGrid::new(model.horizon, grid_steps)?;
    let sol = solve_riccati(theta, &model.cost, &grid)?;
    let policy = exploratory_policy(&feedback_gains(&sol, &model.cost), rho, &model.cost)?;
    Ok((GeneralLqModel::from_lq(model), policy))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRow {
    pub mesh_n: usize,
    pub mean_gap: f64,
    pub se_mean_gap: f64,
    pub p95_abs_gap: f64,
    pub n_draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStudy {
    pub rows: Vec<GapRow>,
    /// Slope of `ln |mean gap|` against `ln |π|`.
    pub mean_slope: f64,
    /// Slope of `ln p95 |gap|` against `ln n`.
    pub p95_slope: f64,
}

pub const MEAN_SLOPE_RANGE: (f64, f64) = (0.75, 1.25);
pub const P95_SLOPE_RANGE: (f64, f64) = (-0.65, -0.35);

impl GapStudy {
    pub fn mean_slope_ok(&self) -> bool {
        (MEAN_SLOPE_RANGE.0..=MEAN_SLOPE_RANGE.1).contains(&self.mean_slope)
    }

    pub fn p95_slope_ok(&self) -> bool {
        (P95_SLOPE_RANGE.0..=P95_SLOPE_RANGE.1).contains(&self.p95_slope)
    }
}

/// Exact gaps `J(φ) - J̃(ν)` from the moment ODEs for `draws` independent
/// noise paths per mesh. The ODE grid must be a multiple of every mesh.
/// Draw `i` at mesh `n` uses stream `n·2³² + i` under `seed`.
pub fn execution_gap_study(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    meshes: &[usize],
    draws: usize,
    ode_steps: usize,
    seed: u64,
) -> Result<GapStudy, DynamicsError> {
    let ode = TimeGrid::new(model.horizon, ode_steps)?;
    let engine = MomentEngine::new(model, policy, &ode)?;
    let relaxed = engine.relaxed_cost();
    let mut rows = Vec::with_capacity(meshes.len());
    for &n in meshes {
        let exec = TimeGrid::new(model.horizon, n)?;
        crate::dynamics::refinement_check(&ode, &exec)?;
        let gaps: Vec<f64> = (0..draws)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, ((n as u64) << 32) | i as u64);
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                engine.conditional_cost_draws(&z) - relaxed
            })
            .collect();
        let abs: Vec<f64> = gaps.iter().map(|g| g.abs()).collect();
        rows.push(GapRow {
            mesh_n: n,
            mean_gap: mean(&gaps),
            se_mean_gap: std_error(&gaps),
            p95_abs_gap: quantile(&abs, 0.95),
            n_draws: draws,
        });
    }
    let mesh: Vec<f64> = rows.iter().map(|r| model.horizon / r.mesh_n as f64).collect();
    let ns: Vec<f64> = rows.iter().map(|r| r.mesh_n as f64).collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_gap.abs()).collect();
    let p95: Vec<f64> = rows.iter().map(|r| r.p95_abs_gap).collect();
    Ok(GapStudy {
        mean_slope: log_log_slope(&mesh, &means),
        p95_slope: log_log_slope(&ns, &p95),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepetitionRow {
    pub n_agents: usize,
    pub empirical: f64,
    pub std_error: f64,
    pub analytic: f64,
}

pub const REPETITION_AGENTS: [usize; 4] = [100, 1000, 10_000, 100_000];

/// Repetition bias for growing agent counts; every count reuses the same
/// draw stream, so smaller populations are prefixes of larger ones.
pub fn repetition_sweep(
    mu: f64,
    lambda: f64,
    agents: &[usize],
    steps: usize,
    seed: u64,
) -> Result<Vec<RepetitionRow>, DynamicsError> {
    agents
        .iter()
        .map(|&n| {
            let r = repetition_bias(mu, lambda, n, steps, seed)?;
            Ok(RepetitionRow {
                n_agents: n,
                empirical: r.empirical.mean,
                std_error: r.empirical.std_error,
                analytic: r.analytic,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::expected_gap;

    const PRIOR: DriftParams = DriftParams { a: 0.0, b: 0.5 };

    #[test]
    fn optimal_gains_cancel_first_order_mean_gap() {
        let base = LqModel::benchmark();
        let quad = TimeGrid::new(1.0, 4096).unwrap();
        let exec = TimeGrid::new(1.0, 8).unwrap();
        let (model, optimal) = gap_setup(&base, base.drift, 1.0, 1024).unwrap();
        let (_, prior) = gap_setup(&base, PRIOR, 1.0, 1024).unwrap();
        let cancelled = expected_gap(&model, &optimal, &exec, &quad).unwrap();
        let generic = expected_gap(&model, &prior, &exec, &quad).unwrap();
        assert!(cancelled.abs() < 1e-6 * generic.abs(), "{cancelled} vs {generic}");
    }

    #[test]
    fn riccati_check_passes() {
        let check = riccati_check(&DEFAULT_SWEEP).unwrap();
        assert!(check.passed(), "{check:?}");
    }

    #[test]
    fn zero_spread_gives_zero_gaps() {
        let (model, mut policy) = gap_setup(&LqModel::benchmark(), PRIOR, 1.0, 256).unwrap();
        policy.std = 0.0.into();
        let study = execution_gap_study(&model, &policy, &[8, 16], 50, 256, 0).unwrap();
        assert!(study.rows.iter().all(|r| r.mean_gap == 0.0 && r.p95_abs_gap == 0.0));
    }

    #[test]
    fn mean_gap_scales_with_spread_squared() {
        let base = LqModel::benchmark();
        let (model, policy) = gap_setup(&base, PRIOR, 1.0, 256).unwrap();
        let doubled = GaussianPolicy {
            std: crate::model::TimeFunction::combine(&[&policy.std], |t| 2.0 * policy.std.value(t)),
            ..policy.clone()
        };
        let a = execution_gap_study(&model, &policy, &[16], 4000, 256, 1).unwrap();
        let b = execution_gap_study(&model, &doubled, &[16], 4000, 256, 1).unwrap();
        let ratio = b.rows[0].mean_gap / a.rows[0].mean_gap;
        let tol = 3.0 * (b.rows[0].se_mean_gap / b.rows[0].mean_gap.abs()
            + a.rows[0].se_mean_gap / a.rows[0].mean_gap.abs())
            * ratio.abs();
        assert!((ratio - 4.0).abs() <= tol, "ratio {ratio} ± {tol}");
    }

    #[test]
    fn repetition_rows() {
        let rows = repetition_sweep(1.0, 0.0, &[10, 100], 20, 0).unwrap();
        assert!(rows.iter().all(|r| r.empirical == 0.0 && r.analytic == 0.0));
        let neg = repetition_sweep(-1.0, 1.0, &[10], 20, 0).unwrap();
        assert!((neg[0].analytic + 0.5677).abs() < 1e-4);
    }
}

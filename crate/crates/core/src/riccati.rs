//! Backward Riccati system for the scalar LQ problem with parameters `θ`:
//!
//! ```text
//! P' + 2 A P - (B P + S)² / R + Q = 0,                           P_T = M
//! η' + (A - (B P + S) B / R) η + p - (B P + S) q / R = 0,        η_T = m̄
//! ```
//!
//! `P` is integrated first with classical RK4 backwards from `T`; `η` is
//! linear given `P` and reuses a cubic Hermite interpolant of `P` (built
//! from the knot values and slopes) for its midpoint stages, so the pair is
//! fourth-order accurate.

use thiserror::Error;

use crate::model::{CostSpec, DriftParams, TimeFunction, TimeGrid};

pub const DEFAULT_BLOWUP_BOUND: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("Riccati solution diverged: |P| = {value:e} at t = {time}")]
    Divergence { time: f64, value: f64 },
    #[error("Riccati grid needs at least 2 steps, got {0}")]
    GridTooCoarse(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: TimeFunction,
    pub eta: TimeFunction,
    pub theta: DriftParams,
    pub grid: TimeGrid,
}

/// Affine feedback `a = k_t + K_t x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGains {
    /// `K`
    pub gain: TimeFunction,
    /// `k`
    pub offset: TimeFunction,
    pub theta: DriftParams,
}

impl FeedbackGains {
    #[inline]
    pub fn action(&self, t: f64, x: f64) -> f64 {
        self.offset.value(t) + self.gain.value(t) * x
    }
}

#[inline]
fn riccati_rhs(theta: &DriftParams, cost: &CostSpec, t: f64, p: f64) -> f64 {
    let r = cost.control_weight.value(t);
    let s = cost.cross_weight.value(t);
    let bps = theta.b * p + s;
    -2.0 * theta.a * p + bps * bps / r - cost.state_weight.value(t)
}

#[inline]
fn offset_rhs(theta: &DriftParams, cost: &CostSpec, t: f64, p: f64, eta: f64) -> f64 {
    let r = cost.control_weight.value(t);
    let bps = theta.b * p + cost.cross_weight.value(t);
    -(theta.a - bps * theta.b / r) * eta - cost.state_linear.value(t)
        + bps * cost.control_linear.value(t) / r
}

pub fn solve_riccati(
    theta: DriftParams,
    cost: &CostSpec,
    grid: &TimeGrid,
) -> Result<RiccatiSolution, RiccatiError> {
    solve_riccati_with_bound(theta, cost, grid, DEFAULT_BLOWUP_BOUND)
}

pub fn solve_riccati_with_bound(
    theta: DriftParams,
    cost: &CostSpec,
    grid: &TimeGrid,
    blowup_bound: f64,
) -> Result<RiccatiSolution, RiccatiError> {
    let n = grid.steps();
    if n < 2 {
        return Err(RiccatiError::GridTooCoarse(n));
    }
    let h = grid.dt();
    let mut p = vec![0.0; n + 1];
    let mut dp = vec![0.0; n + 1];
    p[n] = cost.terminal_weight;
    dp[n] = riccati_rhs(&theta, cost, grid.knot(n), p[n]);
    for i in (0..n).rev() {
        let t = grid.knot(i + 1);
        let y = p[i + 1];
        let k1 = riccati_rhs(&theta, cost, t, y);
        let k2 = riccati_rhs(&theta, cost, t - 0.5 * h, y - 0.5 * h * k1);
        let k3 = riccati_rhs(&theta, cost, t - 0.5 * h, y - 0.5 * h * k2);
        let k4 = riccati_rhs(&theta, cost, t - h, y - h * k3);
        let next = y - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() || next.abs() > blowup_bound {
            return Err(RiccatiError::Divergence {
                time: grid.knot(i),
                value: next.abs(),
            });
        }
        p[i] = next;
        dp[i] = riccati_rhs(&theta, cost, grid.knot(i), next);
    }

    let mut eta = vec![0.0; n + 1];
    eta[n] = cost.terminal_linear;
    for i in (0..n).rev() {
        let t = grid.knot(i + 1);
        // cubic Hermite midpoint of P on [t_i, t_{i+1}]
        let p_mid = 0.5 * (p[i] + p[i + 1]) + h / 8.0 * (dp[i] - dp[i + 1]);
        let y = eta[i + 1];
        let k1 = offset_rhs(&theta, cost, t, p[i + 1], y);
        let k2 = offset_rhs(&theta, cost, t - 0.5 * h, p_mid, y - 0.5 * h * k1);
        let k3 = offset_rhs(&theta, cost, t - 0.5 * h, p_mid, y - 0.5 * h * k2);
        let k4 = offset_rhs(&theta, cost, t - h, p[i], y - h * k3);
        eta[i] = y - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    let horizon = grid.horizon();
    Ok(RiccatiSolution {
        p: TimeFunction::sampled(horizon, p).expect("finite samples"),
        eta: TimeFunction::sampled(horizon, eta).expect("finite samples"),
        theta,
        grid: *grid,
    })
}

/// `K_t = -(B P_t + S_t)/R_t`, `k_t = -(B η_t + q_t)/R_t` at every knot of
/// the solution grid.
pub fn feedback_gains(sol: &RiccatiSolution, cost: &CostSpec) -> FeedbackGains {
    let b = sol.theta.b;
    let gain = TimeFunction::tabulate(&sol.grid, |t| {
        -(b * sol.p.value(t) + cost.cross_weight.value(t)) / cost.control_weight.value(t)
    });
    let offset = TimeFunction::tabulate(&sol.grid, |t| {
        -(b * sol.eta.value(t) + cost.control_linear.value(t)) / cost.control_weight.value(t)
    });
    FeedbackGains {
        gain,
        offset,
        theta: sol.theta,
    }
}

/// `H(t,x,a,y) = (A x + B a) y + f(t,x,a)`.
pub fn hamiltonian(theta: &DriftParams, cost: &CostSpec, t: f64, x: f64, a: f64, y: f64) -> f64 {
    (theta.a * x + theta.b * a) * y + cost.running(t, x, a)
}

/// Minimiser of `a ↦ H(t, x, a, 2(P_t x + η_t))`, which equals `k_t + K_t x`.
pub fn greedy_action(sol: &RiccatiSolution, cost: &CostSpec, t: f64, x: f64) -> f64 {
    let costate = sol.p.value(t) * x + sol.eta.value(t);
    -(sol.theta.b * costate + cost.cross_weight.value(t) * x + cost.control_linear.value(t))
        / cost.control_weight.value(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tanh_cost() -> CostSpec {
        CostSpec::quadratic(1.0, 1.0, 0.0)
    }

    fn max_tanh_error(steps: usize) -> f64 {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let sol = solve_riccati(DriftParams::new(0.0, 1.0), &tanh_cost(), &grid).unwrap();
        grid.knots()
            .iter()
            .map(|&t| (sol.p.value(t) - (1.0 - t).tanh()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn tanh_closed_form() {
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let sol = solve_riccati(DriftParams::new(0.0, 1.0), &tanh_cost(), &grid).unwrap();
        assert!((sol.p.value(0.0) - 0.761_594_155_955_764_9).abs() < 1e-12);
        assert!(max_tanh_error(1000) < 1e-12);
    }

    #[test]
    fn fourth_order_convergence() {
        let errs: Vec<f64> = [100, 200, 400].iter().map(|&n| max_tanh_error(n)).collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((13.0..19.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn exponential_closed_form() {
        let a = 0.7;
        let m_bar = -0.4;
        let cost = CostSpec {
            terminal_weight: 1.0,
            terminal_linear: m_bar,
            ..CostSpec::quadratic(0.0, 1.0, 1.0)
        };
        let grid = TimeGrid::new(1.5, 600).unwrap();
        let sol = solve_riccati(DriftParams::new(a, 0.0), &cost, &grid).unwrap();
        for t in grid.knots() {
            let tau = 1.5 - t;
            assert!((sol.p.value(t) - (2.0 * a * tau).exp()).abs() < 1e-10);
            assert!((sol.eta.value(t) - m_bar * (a * tau).exp()).abs() < 1e-11);
        }
    }

    #[test]
    fn offset_fourth_order() {
        // no closed form with all linear terms on; compare to a fine grid
        let cost = CostSpec {
            state_linear: 1.0.into(),
            control_linear: 0.5.into(),
            terminal_linear: 0.3,
            ..CostSpec::quadratic(1.0, 1.0, 0.2)
        };
        let theta = DriftParams::new(0.4, 1.3);
        let reference = solve_riccati(theta, &cost, &TimeGrid::new(1.0, 3200).unwrap()).unwrap();
        let err = |n: usize| {
            let grid = TimeGrid::new(1.0, n).unwrap();
            let sol = solve_riccati(theta, &cost, &grid).unwrap();
            grid.knots()
                .iter()
                .map(|&t| (sol.eta.value(t) - reference.eta.value(t)).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(20) / err(40);
        assert!(ratio > 12.0, "ratio {ratio}");
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let sol = solve_riccati(DriftParams::new(0.5, 2.0), &CostSpec::quadratic(0.0, 1.0, 0.0), &grid)
            .unwrap();
        assert_eq!(sol.p.sup_norm(), 0.0);
        assert_eq!(sol.eta.sup_norm(), 0.0);
        let gains = feedback_gains(&sol, &CostSpec::quadratic(0.0, 1.0, 0.0));
        assert_eq!(gains.gain.sup_norm(), 0.0);
        assert_eq!(gains.offset.sup_norm(), 0.0);
    }

    #[test]
    fn terminal_conditions_are_exact() {
        let cost = CostSpec {
            terminal_linear: 0.123456789,
            ..CostSpec::quadratic(1.0, 2.0, 0.987654321)
        };
        let grid = TimeGrid::new(2.0, 37).unwrap();
        let sol = solve_riccati(DriftParams::new(-0.3, 0.8), &cost, &grid).unwrap();
        let p = sol.p.samples().unwrap().values();
        let eta = sol.eta.samples().unwrap().values();
        assert_eq!(p[37], 0.987654321);
        assert_eq!(eta[37], 0.123456789);
    }

    #[test]
    fn gains_examples() {
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let sol = solve_riccati(DriftParams::new(0.0, 1.0), &tanh_cost(), &grid).unwrap();
        let gains = feedback_gains(&sol, &tanh_cost());
        for t in [0.0, 0.25, 0.5, 1.0] {
            assert!((gains.gain.value(t) + (1.0 - t).tanh()).abs() < 1e-9);
        }
        assert!((greedy_action(&sol, &tanh_cost(), 0.0, 1.0) + 1f64.tanh()).abs() < 1e-9);

        let cost = CostSpec {
            cross_weight: 2.0.into(),
            ..CostSpec::quadratic(5.0, 1.0, 3.0)
        };
        let sol = solve_riccati(DriftParams::new(0.2, 0.0), &cost, &grid).unwrap();
        let gains = feedback_gains(&sol, &cost);
        assert!(gains.gain.samples().unwrap().values().iter().all(|&k| k == -2.0));
    }

    #[test]
    fn hamiltonian_examples() {
        let zero = CostSpec::zero();
        assert_eq!(hamiltonian(&DriftParams::new(0.0, 0.0), &zero, 0.3, 1.0, 2.0, 3.0), 0.0);
        let cost = CostSpec::quadratic(1.0, 1.0, 0.0);
        assert_eq!(hamiltonian(&DriftParams::new(1.0, 1.0), &cost, 0.0, 1.0, 1.0, 1.0), 4.0);
    }

    #[test]
    fn blow_up_is_reported() {
        // P_t = exp(2 A (T - t)) passes the bound long before t = 0
        let cost = CostSpec::quadratic(0.0, 1.0, 0.0);
        let theta = DriftParams::new(3.0, 0.0);
        let grid = TimeGrid::new(10.0, 1000).unwrap();
        let err = solve_riccati_with_bound(theta, &CostSpec { terminal_weight: 1.0, ..cost.clone() }, &grid, 1e6)
            .unwrap_err();
        match err {
            RiccatiError::Divergence { time, value } => {
                assert!(value > 1e6);
                assert!(time < 10.0 && time > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            solve_riccati(theta, &cost, &TimeGrid::new(1.0, 1).unwrap()),
            Err(RiccatiError::GridTooCoarse(1))
        ));
    }
}

//! Closed-form execution gap `J(φ) - J̃(ν)` as a quadratic form in the
//! execution noise:
//!
//! ```text
//! ∫ h₁ λ ξ dt + ∫ h₂ λ² (ξ² - 1) dt + ∬ h₃(t,r) λ_t λ_r ξ_t ξ_r dr dt
//! ```
//!
//! Here `h₃` is kept in its lower-triangular form `h₃(t,r) = G_t H_r` for
//! `r ≤ t` and zero above the diagonal. All integrals are trapezoid sums on a
//! quadrature grid that refines the execution grid, so `ξ` is constant on
//! every quadrature cell.

use super::{check_horizon, refinement, DynamicsError};
use crate::model::{GeneralLqModel, TimeFunction, TimeGrid};
use crate::policy::{GaussianPolicy, NoisePath};

/// Kernels of the gap expansion on a quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GapFunctions {
    pub grid: TimeGrid,
    pub h1: TimeFunction,
    pub h2: TimeFunction,
    h3_left: Vec<f64>,
    h3_right: Vec<f64>,
    lam: Vec<f64>,
}

fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// `∫_t^T` at every knot.
fn tail_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let head = cumulative_trapezoid(values, h);
    let total = *head.last().unwrap();
    head.iter().map(|c| total - c).collect()
}

pub fn gap_functions(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    quad_grid: &TimeGrid,
) -> Result<GapFunctions, DynamicsError> {
    model.validate()?;
    check_horizon(quad_grid, model.horizon)?;
    let h = quad_grid.dt();
    let ts = quad_grid.knots();
    let at = |f: &TimeFunction| -> Vec<f64> { ts.iter().map(|&t| f.value(t)).collect() };
    let (a, b, bbar, c, d, sig) = (
        at(&model.a),
        at(&model.b),
        at(&model.offset),
        at(&model.c),
        at(&model.d),
        at(&model.noise),
    );
    let (k, gain, lam) = (at(&policy.offset), at(&policy.gain), at(&policy.std));
    let cost = &model.cost;
    let (q, s, r, p, ql) = (
        at(&cost.state_weight),
        at(&cost.cross_weight),
        at(&cost.control_weight),
        at(&cost.state_linear),
        at(&cost.control_linear),
    );
    let n = ts.len();
    let idx = 0..n;
    let alpha: Vec<f64> = idx.clone().map(|j| a[j] + b[j] * gain[j]).collect();
    let gamma: Vec<f64> = idx.clone().map(|j| c[j] + d[j] * gain[j]).collect();
    let f1: Vec<f64> = cumulative_trapezoid(&alpha, h).iter().map(|x| x.exp()).collect();
    let rate2: Vec<f64> = idx.clone().map(|j| 2.0 * alpha[j] + gamma[j] * gamma[j]).collect();
    let f2: Vec<f64> = cumulative_trapezoid(&rate2, h).iter().map(|x| x.exp()).collect();
    let forcing: Vec<f64> = idx.clone().map(|j| (b[j] * k[j] + bbar[j]) / f1[j]).collect();
    let xbar: Vec<f64> = cumulative_trapezoid(&forcing, h)
        .iter()
        .zip(&f1)
        .map(|(i, f)| f * (model.x0 + i))
        .collect();
    let diff0: Vec<f64> = idx.clone().map(|j| sig[j] + d[j] * k[j]).collect();
    let f3: Vec<f64> = idx
        .clone()
        .map(|j| 2.0 * (b[j] * k[j] + bbar[j]) + 2.0 * gamma[j] * diff0[j])
        .collect();
    let f4: Vec<f64> = idx.clone().map(|j| 2.0 * b[j] + 2.0 * d[j] * gamma[j]).collect();
    let f5: Vec<f64> = idx
        .clone()
        .map(|j| 2.0 * d[j] * diff0[j] + 2.0 * (b[j] + d[j] * gamma[j]) * xbar[j])
        .collect();
    let w: Vec<f64> = idx
        .clone()
        .map(|j| q[j] + 2.0 * s[j] * gain[j] + r[j] * gain[j] * gain[j])
        .collect();
    let u: Vec<f64> = idx.clone().map(|j| 2.0 * s[j] + 2.0 * r[j] * gain[j]).collect();
    let v: Vec<f64> = idx
        .clone()
        .map(|j| u[j] * k[j] + 2.0 * p[j] + 2.0 * ql[j] * gain[j])
        .collect();
    let e: Vec<f64> = idx.clone().map(|j| 2.0 * r[j] * k[j] + 2.0 * ql[j]).collect();

    let f1_end = f1[n - 1];
    let f2_end = f2[n - 1];
    let weighted: Vec<f64> = idx.clone().map(|j| w[j] * f2[j]).collect();
    let w2 = tail_trapezoid(&weighted, h);
    // adjoint of the second moment
    let phi: Vec<f64> = idx
        .clone()
        .map(|j| (cost.terminal_weight * f2_end + w2[j]) / f2[j])
        .collect();
    let first_order: Vec<f64> = idx.clone().map(|j| (v[j] + f3[j] * phi[j]) * f1[j]).collect();
    let psi = tail_trapezoid(&first_order, h);

    let h1: Vec<f64> = idx
        .clone()
        .map(|j| {
            2.0 * cost.terminal_linear * f1_end * b[j] / f1[j]
                + xbar[j] * u[j]
                + e[j]
                + f5[j] * phi[j]
                + b[j] / f1[j] * psi[j]
        })
        .collect();
    let h2: Vec<f64> = idx.clone().map(|j| r[j] + d[j] * d[j] * phi[j]).collect();
    let h3_left: Vec<f64> = idx.clone().map(|j| (f4[j] * phi[j] + u[j]) * f1[j]).collect();
    let h3_right: Vec<f64> = idx.map(|j| b[j] / f1[j]).collect();
    let horizon = quad_grid.horizon();
    Ok(GapFunctions {
        grid: *quad_grid,
        h1: TimeFunction::sampled(horizon, h1)?,
        h2: TimeFunction::sampled(horizon, h2)?,
        h3_left,
        h3_right,
        lam,
    })
}

/// Per-execution-cell integrals of the gap kernels.
#[derive(Debug, Clone)]
pub struct CellIntegrals {
    /// `∫_c h₁ λ`.
    linear: Vec<f64>,
    /// `∫_c h₂ λ²`.
    square: Vec<f64>,
    /// `∫_c G λ` and `∫_c H λ`.
    left: Vec<f64>,
    right: Vec<f64>,
    /// `∬_{c×c, r≤t} G_t λ_t H_r λ_r`.
    diagonal: Vec<f64>,
}

impl GapFunctions {
    /// `h₃` at the product-grid node `(t_i, t_j)`.
    pub fn h3(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.h3_left[i] * self.h3_right[j]
        } else {
            0.0
        }
    }

    /// Collapses the kernels onto the cells of an execution grid.
    pub fn cells(&self, exec_grid: &TimeGrid) -> Result<CellIntegrals, DynamicsError> {
        let factor = refinement(&self.grid, exec_grid)?;
        let h = self.grid.dt();
        let cells = exec_grid.steps();
        let h1 = self.h1.samples().map(|s| s.values()).expect("sampled");
        let h2 = self.h2.samples().map(|s| s.values()).expect("sampled");
        let mut out = CellIntegrals {
            linear: vec![0.0; cells],
            square: vec![0.0; cells],
            left: vec![0.0; cells],
            right: vec![0.0; cells],
            diagonal: vec![0.0; cells],
        };
        for c in 0..cells {
            let mut local = 0.0;
            for j in c * factor..(c + 1) * factor {
                let lam0 = self.lam[j];
                let lam1 = self.lam[j + 1];
                let trap = |f0: f64, f1: f64| 0.5 * h * (f0 + f1);
                out.linear[c] += trap(h1[j] * lam0, h1[j + 1] * lam1);
                out.square[c] += trap(h2[j] * lam0 * lam0, h2[j + 1] * lam1 * lam1);
                let (g0, g1) = (self.h3_left[j] * lam0, self.h3_left[j + 1] * lam1);
                out.left[c] += trap(g0, g1);
                let next = local + trap(self.h3_right[j] * lam0, self.h3_right[j + 1] * lam1);
                out.diagonal[c] += trap(g0 * local, g1 * next);
                local = next;
            }
            out.right[c] = local;
        }
        Ok(out)
    }
}

impl CellIntegrals {
    /// Gap for one vector of cell draws.
    pub fn gap(&self, draws: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut history = 0.0;
        for (c, &z) in draws.iter().enumerate() {
            total += z * self.linear[c]
                + (z * z - 1.0) * self.square[c]
                + z * (history * self.left[c] + z * self.diagonal[c]);
            history += z * self.right[c];
        }
        total
    }

    /// Mean of [`Self::gap`] over independent standard-normal draws.
    pub fn expected(&self) -> f64 {
        self.diagonal.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }
}

/// `J(φ) - J̃(ν)` from the closed-form kernels.
pub fn closed_form_gap(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    noise: &NoisePath,
    quad_grid: &TimeGrid,
) -> Result<f64, DynamicsError> {
    let cells = gap_functions(model, policy, quad_grid)?.cells(&noise.grid)?;
    Ok(cells.gap(&noise.draws))
}

/// Mean execution gap over noise paths on `exec_grid`.
pub fn expected_gap(
    model: &GeneralLqModel,
    policy: &GaussianPolicy,
    exec_grid: &TimeGrid,
    quad_grid: &TimeGrid,
) -> Result<f64, DynamicsError> {
    Ok(gap_functions(model, policy, quad_grid)?.cells(exec_grid)?.expected())
}

//! Gaussian relaxed policies `ν(t,x) = N(k_t + K_t x, λ_t²)`, their
//! piecewise-constant randomised executions, and the two entropy-regularised
//! constructions: the exploratory policy (entropy reward against Lebesgue
//! measure) and the proximal update (KL penalty against the previous policy).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{CostSpec, TimeFunction, TimeGrid};
use crate::riccati::{hamiltonian, FeedbackGains, RiccatiSolution};

/// Smallest standard deviation accepted as a proximal-update prior.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("regularisation weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("standard deviation must be non-negative, got {value} at t = {t}")]
    NegativeStd { t: f64, value: f64 },
    #[error("previous policy has standard deviation {value} below {LAMBDA_FLOOR} at t = {t}")]
    DegenerateStd { t: f64, value: f64 },
    #[error("reference standard deviation must be positive, got {0}")]
    NonPositiveReferenceStd(f64),
    #[error("time {t} outside the execution horizon [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("noise path needs {expected} draws, got {found}")]
    DrawCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    /// Mean offset `k`.
    pub offset: TimeFunction,
    /// Mean feedback gain `K`.
    pub gain: TimeFunction,
    /// Standard deviation `λ ≥ 0`.
    pub std: TimeFunction,
}

impl GaussianPolicy {
    pub fn new(
        offset: TimeFunction,
        gain: TimeFunction,
        std: TimeFunction,
    ) -> Result<Self, PolicyError> {
        if let Some((t, value)) = first_knot_where(&std, |v| v < 0.0) {
            return Err(PolicyError::NegativeStd { t, value });
        }
        Ok(Self { offset, gain, std })
    }

    pub fn from_gains(gains: &FeedbackGains, std: TimeFunction) -> Result<Self, PolicyError> {
        Self::new(gains.offset.clone(), gains.gain.clone(), std)
    }

    /// Deterministic feedback: `λ ≡ 0`.
    pub fn deterministic(gains: &FeedbackGains) -> Self {
        Self {
            offset: gains.offset.clone(),
            gain: gains.gain.clone(),
            std: TimeFunction::zero(),
        }
    }

    /// The same mean with `λ ≡ 0`.
    pub fn mean_policy(&self) -> Self {
        Self {
            offset: self.offset.clone(),
            gain: self.gain.clone(),
            std: TimeFunction::zero(),
        }
    }

    #[inline]
    pub fn mean(&self, t: f64, x: f64) -> f64 {
        self.offset.value(t) + self.gain.value(t) * x
    }
}

fn first_knot_where(f: &TimeFunction, bad: impl Fn(f64) -> bool) -> Option<(f64, f64)> {
    f.knot_times()
        .into_iter()
        .map(|t| (t, f.value(t)))
        .find(|&(_, v)| bad(v))
}

/// Piecewise-constant execution noise: one standard-normal draw per interval
/// of the execution grid, `ξ_t = ζ_i` for `t ∈ [t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub draws: Vec<f64>,
    /// Seed the draws came from, when known.
    pub seed: Option<u64>,
}

impl NoisePath {
    pub fn from_draws(grid: TimeGrid, draws: Vec<f64>) -> Result<Self, PolicyError> {
        if draws.len() != grid.steps() {
            return Err(PolicyError::DrawCount {
                expected: grid.steps(),
                found: draws.len(),
            });
        }
        Ok(Self {
            grid,
            draws,
            seed: None,
        })
    }

    /// All draws zero.
    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            draws: vec![0.0; grid.steps()],
            seed: None,
        }
    }

    /// `ξ_t`; the horizon uses the last draw.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        self.draws[self.grid.interval_index(t)]
    }
}

pub fn sample_noise_path<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> NoisePath {
    NoisePath {
        grid: *grid,
        draws: (0..grid.steps()).map(|_| rng.sample(StandardNormal)).collect(),
        seed: None,
    }
}

/// [`sample_noise_path`] from a fresh generator, recording the seed.
pub fn sample_noise_path_seeded(grid: &TimeGrid, seed: u64) -> NoisePath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NoisePath {
        seed: Some(seed),
        ..sample_noise_path(grid, &mut rng)
    }
}

/// `φ(t,x) = k_t + K_t x + λ_t ξ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomisedPolicy {
    pub base: GaussianPolicy,
    pub noise: NoisePath,
}

impl RandomisedPolicy {
    pub fn new(base: GaussianPolicy, noise: NoisePath) -> Self {
        Self { base, noise }
    }

    #[inline]
    pub fn action(&self, t: f64, x: f64) -> f64 {
        self.base.mean(t, x) + self.base.std.value(t) * self.noise.value(t)
    }

    pub fn eval(&self, t: f64, x: f64) -> Result<f64, PolicyError> {
        let horizon = self.noise.grid.horizon();
        if !(t.is_finite() && (0.0..=horizon).contains(&t)) {
            return Err(PolicyError::OutOfRange { t, horizon });
        }
        Ok(self.action(t, x))
    }
}

/// Mixing weight `h ∈ [0, 1]` of a proximal update.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingWeight(pub TimeFunction);

fn check_weight(rho: f64) -> Result<(), PolicyError> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(PolicyError::NonPositiveWeight(rho))
    }
}

/// Optimal policy of the entropy-rewarded problem:
/// `N(k_t + K_t x, ρ / (2 R_t))`.
pub fn exploratory_policy(
    gains: &FeedbackGains,
    rho: f64,
    cost: &CostSpec,
) -> Result<GaussianPolicy, PolicyError> {
    check_weight(rho)?;
    let r = &cost.control_weight;
    let std = TimeFunction::combine(&[r], |t| (rho / (2.0 * r.value(t))).sqrt());
    GaussianPolicy::from_gains(gains, std)
}

/// Minimiser of the KL-regularised Hamiltonian around `prev`:
///
/// ```text
/// h = 2R / (2R + ρ λ⁻²),  k' = h k^θ + (1-h) k,  K' = h K^θ + (1-h) K,
/// λ'⁻² = 2R/ρ + λ⁻²
/// ```
///
/// evaluated knotwise on the finest grid among the inputs.
pub fn proximal_update(
    prev: &GaussianPolicy,
    gains: &FeedbackGains,
    rho: f64,
    cost: &CostSpec,
) -> Result<(GaussianPolicy, MixingWeight), PolicyError> {
    check_weight(rho)?;
    let r = &cost.control_weight;
    let inputs = [
        &prev.offset,
        &prev.gain,
        &prev.std,
        &gains.offset,
        &gains.gain,
        r,
    ];
    let grid = crate::model::finest_grid(&inputs);
    let knots = grid.map(|g| g.knots()).unwrap_or_else(|| vec![0.0]);
    let mut offset = Vec::with_capacity(knots.len());
    let mut gain = Vec::with_capacity(knots.len());
    let mut std = Vec::with_capacity(knots.len());
    let mut mix = Vec::with_capacity(knots.len());
    for &t in &knots {
        let lambda = prev.std.value(t);
        if !(lambda >= LAMBDA_FLOOR) {
            return Err(PolicyError::DegenerateStd { t, value: lambda });
        }
        let two_r = 2.0 * r.value(t);
        let prec = 1.0 / (lambda * lambda);
        let h = two_r / (two_r + rho * prec);
        offset.push(h * gains.offset.value(t) + (1.0 - h) * prev.offset.value(t));
        gain.push(h * gains.gain.value(t) + (1.0 - h) * prev.gain.value(t));
        std.push((two_r / rho + prec).sqrt().recip());
        mix.push(h);
    }
    let build = |values: Vec<f64>| match grid {
        None => TimeFunction::Constant(values[0]),
        Some(g) => TimeFunction::sampled(g.horizon(), values).expect("finite update"),
    };
    let policy = GaussianPolicy {
        offset: build(offset),
        gain: build(gain),
        std: build(std),
    };
    Ok((policy, MixingWeight(build(mix))))
}

/// `1 - (λ'/λ)²`, which must reproduce the proximal mixing weight.
pub fn mixing_identity_check(
    prev_std: &TimeFunction,
    next_std: &TimeFunction,
) -> Result<TimeFunction, PolicyError> {
    if let Some((t, value)) = first_knot_where(prev_std, |v| !(v > 0.0)) {
        return Err(PolicyError::DegenerateStd { t, value });
    }
    Ok(TimeFunction::combine(&[prev_std, next_std], |t| {
        let ratio = next_std.value(t) / prev_std.value(t);
        1.0 - ratio * ratio
    }))
}

/// `KL(N(m₁, s₁²) ‖ N(m₂, s₂²))`; `+∞` when `s₁ = 0`.
pub fn gaussian_kl(mean1: f64, sd1: f64, mean2: f64, sd2: f64) -> Result<f64, PolicyError> {
    if !(sd2 > 0.0) {
        return Err(PolicyError::NonPositiveReferenceStd(sd2));
    }
    if sd1 < 0.0 {
        return Err(PolicyError::NegativeStd { t: f64::NAN, value: sd1 });
    }
    if sd1 == 0.0 {
        return Ok(f64::INFINITY);
    }
    let dm = mean1 - mean2;
    Ok((sd2 / sd1).ln() + (sd1 * sd1 + dm * dm) / (2.0 * sd2 * sd2) - 0.5)
}

/// `∫ H(t,x,a,2(P_t x + η_t)) ν(da) + ρ KL(ν ‖ prior(t,x))` for the
/// candidate `ν = N(mean, sd²)`, in closed form.
#[allow(clippy::too_many_arguments)]
pub fn regularised_hamiltonian_objective(
    sol: &RiccatiSolution,
    cost: &CostSpec,
    prior: &GaussianPolicy,
    rho: f64,
    t: f64,
    x: f64,
    cand_mean: f64,
    cand_sd: f64,
) -> Result<f64, PolicyError> {
    check_weight(rho)?;
    if !(cand_sd > 0.0) {
        return Err(PolicyError::NonPositiveReferenceStd(cand_sd));
    }
    let prior_sd = prior.std.value(t);
    if !(prior_sd > 0.0) {
        return Err(PolicyError::DegenerateStd { t, value: prior_sd });
    }
    let costate = 2.0 * (sol.p.value(t) * x + sol.eta.value(t));
    // H is quadratic in a with leading coefficient R, so E[H] = H(mean) + R sd²
    let expected_h = hamiltonian(&sol.theta, cost, t, x, cand_mean, costate)
        + cost.control_weight.value(t) * cand_sd * cand_sd;
    let kl = gaussian_kl(cand_mean, cand_sd, prior.mean(t, x), prior_sd)?;
    Ok(expected_h + rho * kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriftParams;
    use crate::riccati::{feedback_gains, solve_riccati};
    use proptest::prelude::*;

    fn unit_gains(k: f64, gain: f64) -> FeedbackGains {
        FeedbackGains {
            gain: gain.into(),
            offset: k.into(),
            theta: DriftParams::new(0.0, 1.0),
        }
    }

    #[test]
    fn exploratory_std_examples() {
        let g = unit_gains(0.0, 0.0);
        let p = exploratory_policy(&g, 2.0, &CostSpec::quadratic(0.0, 1.0, 0.0)).unwrap();
        assert_eq!(p.std, TimeFunction::Constant(1.0));
        let p = exploratory_policy(&g, 1.0, &CostSpec::quadratic(0.0, 2.0, 0.0)).unwrap();
        assert_eq!(p.std, TimeFunction::Constant(0.5));
        let p = exploratory_policy(&g, 1e-10, &CostSpec::quadratic(0.0, 1.0, 0.0)).unwrap();
        assert!(p.std.value(0.0) < 1e-5);
        assert!(exploratory_policy(&g, 0.0, &CostSpec::zero()).is_err());
    }

    #[test]
    fn proximal_examples() {
        let cost = CostSpec::quadratic(0.0, 1.0, 0.0);
        let prev = GaussianPolicy::new(0.3.into(), (-0.2).into(), 1.0.into()).unwrap();
        let (next, h) = proximal_update(&prev, &unit_gains(1.0, -1.0), 2.0, &cost).unwrap();
        assert!((next.std.value(0.0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((h.0.value(0.0) - 0.5).abs() < 1e-15);
        assert!((next.gain.value(0.0) + 0.6).abs() < 1e-15);
        assert!((next.offset.value(0.0) - 0.65).abs() < 1e-15);

        let (next, _) = proximal_update(&prev, &unit_gains(1.0, -1.0), 1e12, &cost).unwrap();
        assert!((next.gain.value(0.0) - prev.gain.value(0.0)).abs() <= 1e-10 * (1.0 + 0.8));

        let same = GaussianPolicy::new(1.0.into(), (-1.0).into(), 0.4.into()).unwrap();
        let (next, _) = proximal_update(&same, &unit_gains(1.0, -1.0), 0.7, &cost).unwrap();
        assert_eq!(next.gain.value(0.5), -1.0);
        assert_eq!(next.offset.value(0.5), 1.0);

        let degenerate = GaussianPolicy::new(0.0.into(), 0.0.into(), 0.0.into()).unwrap();
        assert!(matches!(
            proximal_update(&degenerate, &unit_gains(0.0, 0.0), 1.0, &cost),
            Err(PolicyError::DegenerateStd { .. })
        ));
    }

    #[test]
    fn mixing_identity_examples() {
        let h = mixing_identity_check(&1.0.into(), &0.5f64.sqrt().into()).unwrap();
        assert!((h.value(0.0) - 0.5).abs() < 1e-15);
        let h = mixing_identity_check(&0.7.into(), &0.7.into()).unwrap();
        assert_eq!(h.value(0.0), 0.0);
        let h = mixing_identity_check(&0.7.into(), &1e-9.into()).unwrap();
        assert!(1.0 - h.value(0.0) < 1e-15);
        assert!(mixing_identity_check(&0.0.into(), &0.0.into()).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(gaussian_kl(0.3, 1.2, 0.3, 1.2).unwrap(), 0.0);
        assert!((gaussian_kl(1.0, 1.0, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let expected = 0.5f64.ln() + 1.5;
        assert!((gaussian_kl(0.0, 2.0, 0.0, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.8069).abs() < 1e-4);
        assert_eq!(gaussian_kl(0.0, 0.0, 0.0, 1.0).unwrap(), f64::INFINITY);
        assert!(gaussian_kl(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn noise_path_conventions() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let noise = NoisePath::from_draws(grid, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pure = RandomisedPolicy::new(
            GaussianPolicy::new(0.0.into(), 0.0.into(), 1.0.into()).unwrap(),
            noise.clone(),
        );
        assert_eq!(pure.eval(0.25, 10.0).unwrap(), 2.0);
        assert_eq!(pure.eval(0.2499, 10.0).unwrap(), 1.0);
        assert_eq!(pure.eval(1.0, 10.0).unwrap(), 4.0);
        assert!(pure.eval(1.1, 0.0).is_err());

        let det = RandomisedPolicy::new(
            GaussianPolicy::new(0.5.into(), 2.0.into(), 0.0.into()).unwrap(),
            noise,
        );
        assert_eq!(det.eval(0.6, 3.0).unwrap(), 6.5);
        assert!(NoisePath::from_draws(grid, vec![0.0; 3]).is_err());
    }

    #[test]
    fn noise_paths_are_reproducible() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let a = sample_noise_path_seeded(&grid, 11);
        let b = sample_noise_path_seeded(&grid, 11);
        assert_eq!(a, b);
        assert_eq!(a.seed, Some(11));
        assert_ne!(a.draws, sample_noise_path_seeded(&grid, 12).draws);
    }

    #[test]
    fn pooled_draws_look_standard_normal() {
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut all = Vec::with_capacity(1_000_000);
        for _ in 0..1000 {
            all.extend(sample_noise_path(&grid, &mut rng).draws);
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        let lag1 = all.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>()
            / ((n - 1.0) * var);
        assert!(lag1.abs() < 4.0 / n.sqrt(), "lag-1 autocorrelation {lag1}");
    }

    #[test]
    fn large_rho_objective_minimised_near_prior() {
        let cost = CostSpec::quadratic(1.0, 1.0, 0.2);
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let sol = solve_riccati(DriftParams::new(0.1, 0.9), &cost, &grid).unwrap();
        let prior = GaussianPolicy::new(0.2.into(), (-0.4).into(), 0.6.into()).unwrap();
        let (t, x) = (0.3, 0.8);
        let at_prior = regularised_hamiltonian_objective(
            &sol, &cost, &prior, 1e6, t, x, prior.mean(t, x), 0.6,
        )
        .unwrap();
        let costate = 2.0 * (sol.p.value(t) * x + sol.eta.value(t));
        let expected = hamiltonian(&sol.theta, &cost, t, x, prior.mean(t, x), costate) + 0.36;
        assert!((at_prior - expected).abs() < 1e-12);
        let gains = feedback_gains(&sol, &cost);
        let (next, _) = proximal_update(&prior, &gains, 1e6, &cost).unwrap();
        assert!((next.mean(t, x) - prior.mean(t, x)).abs() < 1e-5);
    }

    #[test]
    fn pure_entropy_case_minimised_at_prior() {
        let cost = CostSpec::quadratic(0.0, 1.0, 0.0);
        let zero_sol = RiccatiSolution {
            p: 0.0.into(),
            eta: 0.0.into(),
            theta: DriftParams::new(0.0, 0.0),
            grid: TimeGrid::new(1.0, 10).unwrap(),
        };
        let cost = CostSpec {
            control_weight: 1e-300.into(),
            ..cost
        };
        let prior = GaussianPolicy::new(0.5.into(), 0.0.into(), 0.8.into()).unwrap();
        let obj = |m: f64, s: f64| {
            regularised_hamiltonian_objective(&zero_sol, &cost, &prior, 2.0, 0.5, 1.0, m, s).unwrap()
        };
        let best = obj(0.5, 0.8);
        assert!(best.abs() < 1e-12);
        for (m, s) in [(0.4, 0.8), (0.5, 0.7), (0.6, 0.9)] {
            assert!(obj(m, s) > best);
        }
    }

    proptest! {
        #[test]
        fn std_is_monotone_and_identity_holds(
            lambda0 in 0.05f64..3.0,
            r in 0.1f64..5.0,
            rho in 0.01f64..50.0,
        ) {
            let cost = CostSpec::quadratic(0.0, r, 0.0);
            let prev = GaussianPolicy::new(0.0.into(), 0.0.into(), lambda0.into()).unwrap();
            let (next, h) = proximal_update(&prev, &unit_gains(1.0, 1.0), rho, &cost).unwrap();
            prop_assert!(next.std.value(0.0) <= lambda0);
            let check = mixing_identity_check(&prev.std, &next.std).unwrap();
            prop_assert!((check.value(0.0) - h.0.value(0.0)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&h.0.value(0.0)));
        }
    }
}

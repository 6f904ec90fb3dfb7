//! Episodic learners: posterior estimation of the drift followed by either an
//! entropy-rewarded exploratory policy or a KL-proximal policy update, with
//! exact regret accounting.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{conditional_cost_exact, optimal_cost, simulate_episode, DynamicsError};
use crate::inference::{posterior, truncate, InferenceError, Mat2, SufficientStats};
use crate::model::{DriftParams, LqModel, ModelError, ThetaBox, TimeGrid};
use crate::policy::{
    exploratory_policy, proximal_update, sample_noise_path, GaussianPolicy, PolicyError,
    RandomisedPolicy,
};
use crate::riccati::{feedback_gains, solve_riccati, FeedbackGains, RiccatiError};
use crate::rng::stream_rng;
use crate::stats::{log_log_slope, log_spaced, quantile};

/// Instantaneous regret below this is treated as evaluator noise.
pub const REGRET_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Exploratory policy with `ρ_m = ρ₀ m^{-1/2} ln(m+1)`.
    ExplorationReward,
    /// Proximal update with `ρ_m = ρ₀ m^{1/2} ln(m+1)`.
    ProximalUpdate,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ExplorationReward => "alg1",
            Algorithm::ProximalUpdate => "alg2",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("Riccati solve failed in episode {episode}: {source}")]
    Riccati {
        episode: usize,
        source: RiccatiError,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("need at least {needed} runs, got {found}")]
    TooFewRuns { needed: usize, found: usize },
    #[error("window [{lo}, {hi}] is not inside 1..={episodes}")]
    BadWindow { lo: usize, hi: usize, episodes: usize },
}

pub fn schedule_rho(algorithm: Algorithm, rho0: f64, m: usize) -> Result<f64, LearnerError> {
    if m == 0 {
        return Err(LearnerError::InvalidConfig("episode index starts at 1".into()));
    }
    let mf = m as f64;
    let log = (mf + 1.0).ln();
    Ok(match algorithm {
        Algorithm::ExplorationReward => rho0 * log / mf.sqrt(),
        Algorithm::ProximalUpdate => rho0 * mf.sqrt() * log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub model: LqModel,
    pub theta_box: ThetaBox,
    pub prior_theta: DriftParams,
    pub prior_cov: Mat2,
    pub rho0: f64,
    pub algorithm: Algorithm,
    pub episodes: usize,
    /// Execution intervals per episode; the mesh is `T / exec_steps`.
    pub exec_steps: usize,
    /// Simulation steps per execution interval.
    pub sim_refine: usize,
    pub seed: u64,
    /// Certainty-equivalent diagnostic: every policy has `λ ≡ 0`.
    pub greedy: bool,
}

impl LearnerConfig {
    pub fn benchmark(algorithm: Algorithm) -> Self {
        Self {
            model: LqModel::benchmark(),
            theta_box: ThetaBox::new(-2.0, 2.0, 0.2, 3.0).expect("valid box"),
            prior_theta: DriftParams::new(0.0, 0.5),
            prior_cov: Mat2::identity(),
            rho0: 1.0,
            algorithm,
            episodes: 2000,
            exec_steps: 50,
            sim_refine: 10,
            seed: 0,
            greedy: false,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        crate::model::validate_lq_model(&self.model)?;
        let bad = |msg: &str| Err(LearnerError::InvalidConfig(msg.into()));
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if !(self.rho0.is_finite() && self.rho0 > 0.0) {
            return bad("rho0 must be positive");
        }
        if self.exec_steps == 0 || self.sim_refine == 0 {
            return bad("exec_steps and sim_refine must be positive");
        }
        if !self.prior_cov.is_positive_definite() {
            return bad("prior covariance must be positive definite");
        }
        Ok(())
    }

    pub fn exec_grid(&self) -> TimeGrid {
        TimeGrid::new(self.model.horizon, self.exec_steps).expect("validated")
    }

    pub fn sim_grid(&self) -> TimeGrid {
        self.exec_grid().refine(self.sim_refine)
    }

    /// Mesh size `|π_m|`, the same for every episode.
    pub fn mesh(&self) -> f64 {
        self.exec_grid().dt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Exact cost of the executed policy given its noise path.
    pub cost: f64,
    pub optimal_cost: f64,
    pub regret: f64,
    pub cumulative_regret: f64,
    /// `ρ_m`, used to build the next policy.
    pub rho: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `K_0` of the executed policy.
    pub gain_at_zero: f64,
    /// Posterior mean after this episode.
    pub theta_hat: DriftParams,
    /// Truncated estimate after this episode.
    pub theta: DriftParams,
    pub estimation_error: f64,
    pub covariance: Mat2,
    pub precision_min_eig: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
}

impl RegretRecord {
    pub fn cumulative(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.cumulative_regret).collect()
    }

    pub fn estimation_errors(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.estimation_error).collect()
    }

    /// Episodes whose regret is below `-REGRET_TOLERANCE`.
    pub fn flagged(&self) -> Vec<usize> {
        self.episodes
            .iter()
            .filter(|e| e.regret < -REGRET_TOLERANCE)
            .map(|e| e.episode)
            .collect()
    }
}

fn gains_at(
    theta: DriftParams,
    config: &LearnerConfig,
    grid: &TimeGrid,
    episode: usize,
) -> Result<FeedbackGains, LearnerError> {
    let sol = solve_riccati(theta, &config.model.cost, grid)
        .map_err(|source| LearnerError::Riccati { episode, source })?;
    Ok(feedback_gains(&sol, &config.model.cost))
}

fn initial_policy(config: &LearnerConfig, gains: &FeedbackGains) -> Result<GaussianPolicy, LearnerError> {
    if config.greedy {
        return Ok(GaussianPolicy::deterministic(gains));
    }
    Ok(match config.algorithm {
        Algorithm::ExplorationReward => exploratory_policy(gains, config.rho0, &config.model.cost)?,
        Algorithm::ProximalUpdate => GaussianPolicy::from_gains(gains, config.rho0.into())?,
    })
}

/// One learning run. Episode `m` draws its execution noise from stream
/// `2m` and its Brownian increments from stream `2m + 1` under
/// `config.seed`.
pub fn run_learning(config: &LearnerConfig) -> Result<RegretRecord, LearnerError> {
    config.validate()?;
    let model = &config.model;
    let exec = config.exec_grid();
    let sim = config.sim_grid();
    let optimal = optimal_cost(model, &sim)?;
    let mut policy = initial_policy(config, &gains_at(config.prior_theta, config, &sim, 0)?)?;
    let mut stats = SufficientStats::default();
    let mut cumulative = 0.0;
    let mut rows = Vec::with_capacity(config.episodes);

    for m in 1..=config.episodes {
        let noise = sample_noise_path(&exec, &mut stream_rng(config.seed, 2 * m as u64));
        let phi = RandomisedPolicy::new(policy.clone(), noise);
        let traj = simulate_episode(model, &phi, &sim, &mut stream_rng(config.seed, 2 * m as u64 + 1))?;
        let cost = conditional_cost_exact(model, &phi.base, &phi.noise, &sim)?;
        let regret = cost - optimal;
        cumulative += regret;

        stats = stats.accumulate(&traj, &model.noise)?;
        let post = posterior(config.prior_theta, &config.prior_cov, &stats)?;
        let theta = truncate(&post, &config.theta_box);
        let rho = schedule_rho(config.algorithm, config.rho0, m)?;
        rows.push(EpisodeRecord {
            episode: m,
            cost,
            optimal_cost: optimal,
            regret,
            cumulative_regret: cumulative,
            rho,
            lambda_min: policy.std.min_value(),
            lambda_max: policy.std.max_value(),
            gain_at_zero: policy.gain.value(0.0),
            theta_hat: post.theta_hat,
            theta,
            estimation_error: theta.distance_squared(&model.drift),
            covariance: post.covariance,
            precision_min_eig: post.precision.min_eigenvalue(),
        });

        if m == config.episodes {
            break;
        }
        let gains = gains_at(theta, config, &sim, m)?;
        policy = if config.greedy {
            GaussianPolicy::deterministic(&gains)
        } else {
            match config.algorithm {
                Algorithm::ExplorationReward => exploratory_policy(&gains, rho, &model.cost)?,
                Algorithm::ProximalUpdate => proximal_update(&policy, &gains, rho, &model.cost)?.0,
            }
        };
    }
    Ok(RegretRecord {
        algorithm: config.algorithm,
        seed: config.seed,
        episodes: rows,
    })
}

/// Independent runs, one per seed, in parallel; output order follows
/// `seeds`.
pub fn run_many(config: &LearnerConfig, seeds: &[u64]) -> Result<Vec<RegretRecord>, LearnerError> {
    seeds
        .par_iter()
        .map(|&seed| run_learning(&LearnerConfig { seed, ..config.clone() }))
        .collect()
}

/// Log-log slope of a run-averaged curve with a bootstrap interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Episode indices used in the fit.
    pub points: Vec<usize>,
    /// Run-averaged curve at those indices.
    pub means: Vec<f64>,
}

pub const MIN_RUNS: usize = 10;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
const FIT_POINTS: usize = 25;

/// Fits `ln mean_r curve_r(m)` against `ln m` at log-spaced episodes in
/// `window`, resampling runs for a 95% interval.
pub fn curve_slope(
    curves: &[Vec<f64>],
    window: (usize, usize),
    seed: u64,
) -> Result<SlopeFit, LearnerError> {
    if curves.len() < MIN_RUNS {
        return Err(LearnerError::TooFewRuns {
            needed: MIN_RUNS,
            found: curves.len(),
        });
    }
    let episodes = curves.iter().map(Vec::len).min().unwrap_or(0);
    let (lo, hi) = window;
    if lo == 0 || lo >= hi || hi > episodes {
        return Err(LearnerError::BadWindow { lo, hi, episodes });
    }
    let points = log_spaced(lo, hi, FIT_POINTS);
    let xs: Vec<f64> = points.iter().map(|&m| m as f64).collect();
    let mean_at = |runs: &[usize]| -> Vec<f64> {
        points
            .iter()
            .map(|&m| runs.iter().map(|&r| curves[r][m - 1]).sum::<f64>() / runs.len() as f64)
            .collect()
    };
    let all: Vec<usize> = (0..curves.len()).collect();
    let means = mean_at(&all);
    let slope = log_log_slope(&xs, &means);
    let mut rng = stream_rng(seed, 0);
    let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let pick: Vec<usize> = (0..curves.len())
                .map(|_| rng.random_range(0..curves.len()))
                .collect();
            log_log_slope(&xs, &mean_at(&pick))
        })
        .collect();
    Ok(SlopeFit {
        slope,
        ci_low: quantile(&boot, 0.025),
        ci_high: quantile(&boot, 0.975),
        points,
        means,
    })
}

/// Slope of mean cumulative regret against the episode count.
pub fn regret_slope(
    records: &[RegretRecord],
    window: (usize, usize),
    seed: u64,
) -> Result<SlopeFit, LearnerError> {
    let curves: Vec<Vec<f64>> = records.iter().map(RegretRecord::cumulative).collect();
    curve_slope(&curves, window, seed)
}

/// Slope of mean squared estimation error against the episode index.
pub fn estimation_slope(
    records: &[RegretRecord],
    window: (usize, usize),
    seed: u64,
) -> Result<SlopeFit, LearnerError> {
    let curves: Vec<Vec<f64>> = records.iter().map(RegretRecord::estimation_errors).collect();
    curve_slope(&curves, window, seed)
}

//! Flat `key = value` experiment files (TOML syntax). Coefficients are either
//! a number or an array sampled uniformly on `[0, T]`. Missing keys take the
//! benchmark value.

use std::path::Path;

use lqrl::inference::Mat2;
use lqrl::learner::{Algorithm, LearnerConfig};
use lqrl::model::{CostSpec, DriftParams, LqModel, ThetaBox, TimeFunction};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Coefficient {
    Scalar(f64),
    Samples(Vec<f64>),
}

impl Coefficient {
    fn into_function(self, horizon: f64, name: &str) -> Result<TimeFunction, CliError> {
        match self {
            Coefficient::Scalar(v) => Ok(TimeFunction::constant(v)),
            Coefficient::Samples(v) => TimeFunction::sampled(horizon, v)
                .map_err(|e| CliError::Validation(format!("{name}: {e}"))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "A_star")]
    a_star: Option<f64>,
    #[serde(rename = "B_star")]
    b_star: Option<f64>,
    sigma_bar: Option<Coefficient>,
    x0: Option<f64>,
    #[serde(rename = "T")]
    horizon: Option<f64>,
    #[serde(rename = "Q")]
    q_weight: Option<Coefficient>,
    #[serde(rename = "S")]
    s_weight: Option<Coefficient>,
    #[serde(rename = "R")]
    r_weight: Option<Coefficient>,
    p: Option<Coefficient>,
    q: Option<Coefficient>,
    #[serde(rename = "M")]
    m_weight: Option<f64>,
    m_bar: Option<f64>,
    theta_box: Option<[[f64; 2]; 2]>,
    algorithm: Option<String>,
    rho0: Option<f64>,
    episodes: Option<usize>,
    exec_steps: Option<usize>,
    sim_refine: Option<usize>,
    seeds: Option<Vec<u64>>,
    theta0: Option<[f64; 2]>,
    #[serde(rename = "V0")]
    v0: Option<[[f64; 2]; 2]>,
}

/// A validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub learner: LearnerConfig,
    pub seeds: Option<Vec<u64>>,
}

impl ExperimentConfig {
    pub fn benchmark() -> Self {
        Self {
            learner: LearnerConfig::benchmark(Algorithm::ExplorationReward),
            seeds: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(CliError::validation)?;
        let base = LearnerConfig::benchmark(Algorithm::ExplorationReward);
        let b = &base.model;
        let horizon = raw.horizon.unwrap_or(b.horizon);
        let coef = |c: Option<Coefficient>, default: &TimeFunction, name: &str| match c {
            Some(c) => c.into_function(horizon, name),
            None => Ok(default.clone()),
        };
        let cost = CostSpec {
            state_weight: coef(raw.q_weight, &b.cost.state_weight, "Q")?,
            cross_weight: coef(raw.s_weight, &b.cost.cross_weight, "S")?,
            control_weight: coef(raw.r_weight, &b.cost.control_weight, "R")?,
            state_linear: coef(raw.p, &b.cost.state_linear, "p")?,
            control_linear: coef(raw.q, &b.cost.control_linear, "q")?,
            terminal_weight: raw.m_weight.unwrap_or(b.cost.terminal_weight),
            terminal_linear: raw.m_bar.unwrap_or(b.cost.terminal_linear),
        };
        let model = LqModel::new(
            DriftParams::new(
                raw.a_star.unwrap_or(b.drift.a),
                raw.b_star.unwrap_or(b.drift.b),
            ),
            coef(raw.sigma_bar, &b.noise, "sigma_bar")?,
            raw.x0.unwrap_or(b.x0),
            horizon,
            cost,
        )
        .map_err(CliError::validation)?;
        let theta_box = match raw.theta_box {
            Some([[a_lo, a_hi], [b_lo, b_hi]]) => {
                ThetaBox::new(a_lo, a_hi, b_lo, b_hi).map_err(CliError::validation)?
            }
            None => base.theta_box,
        };
        let algorithm = match raw.algorithm.as_deref() {
            None => base.algorithm,
            Some(name) => parse_algorithm(name)?,
        };
        let prior_cov = match raw.v0 {
            Some([[xx, xy], [yx, yy]]) => {
                if xy != yx {
                    return Err(CliError::Validation("V0 must be symmetric".into()));
                }
                Mat2::new(xx, xy, yy)
            }
            None => base.prior_cov,
        };
        let learner = LearnerConfig {
            model,
            theta_box,
            prior_theta: raw.theta0.map(DriftParams::from_array).unwrap_or(base.prior_theta),
            prior_cov,
            rho0: raw.rho0.unwrap_or(base.rho0),
            algorithm,
            episodes: raw.episodes.unwrap_or(base.episodes),
            exec_steps: raw.exec_steps.unwrap_or(base.exec_steps),
            sim_refine: raw.sim_refine.unwrap_or(base.sim_refine),
            ..base
        };
        learner.validate().map_err(CliError::validation)?;
        if matches!(&raw.seeds, Some(s) if s.is_empty()) {
            return Err(CliError::Validation("seeds must not be empty".into()));
        }
        Ok(Self {
            learner,
            seeds: raw.seeds,
        })
    }
}

pub fn parse_algorithm(name: &str) -> Result<Algorithm, CliError> {
    match name {
        "alg1" => Ok(Algorithm::ExplorationReward),
        "alg2" => Ok(Algorithm::ProximalUpdate),
        other => Err(CliError::Validation(format!(
            "unknown algorithm {other:?}, expected \"alg1\" or \"alg2\""
        ))),
    }
}

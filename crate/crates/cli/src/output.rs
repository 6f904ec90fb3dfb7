//! CSV tables: RFC 4180 with a header row and LF line endings.
#![allow(non_snake_case)]

use std::fs::File;
use std::path::{Path, PathBuf};

use lqrl::learner::{EpisodeRecord, RegretRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const RICCATI_CSV: &str = "riccati_check.csv";
pub const REPETITION_CSV: &str = "repetition_bias.csv";
pub const GAP_CSV: &str = "execution_gap.csv";
pub const GAP_SLOPES_CSV: &str = "execution_gap_slopes.csv";
pub const GAP_POLICY_CSV: &str = "gap_policy.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";

pub fn aggregate_csv(alg: &str) -> String {
    format!("{alg}_aggregate.csv")
}

pub fn estimation_csv(alg: &str) -> String {
    format!("{alg}_estimation.csv")
}

pub fn slopes_csv(alg: &str) -> String {
    format!("{alg}_slopes.csv")
}

pub fn run_csv(alg: &str, seed: u64) -> String {
    format!("{alg}_run_{seed}.csv")
}

pub fn posterior_csv(alg: &str, seed: u64) -> String {
    format!("{alg}_posterior_{seed}.csv")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiccatiRow {
    pub case: String,
    pub steps: usize,
    pub dt: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepetitionRow {
    pub n_agents: usize,
    pub empirical: f64,
    pub std_error: f64,
    pub analytic: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRow {
    pub mesh_n: usize,
    pub mean_gap: f64,
    pub se_mean_gap: f64,
    pub p95_abs_gap: f64,
    pub n_draws: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeRow {
    pub quantity: String,
    pub slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub range_lo: f64,
    pub range_hi: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyRow {
    pub t: f64,
    pub k: f64,
    #[serde(rename = "K")]
    pub gain: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    #[serde(rename = "X")]
    pub state: f64,
    pub action: f64,
    pub xi: Option<f64>,
    #[serde(rename = "dW")]
    pub dw: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub cost: f64,
    pub optimal_cost: f64,
    pub regret: f64,
    pub cumulative_regret: f64,
    pub rho: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub gain_at_zero: f64,
    pub theta_hat_A: f64,
    pub theta_hat_B: f64,
    pub theta_A: f64,
    pub theta_B: f64,
    pub estimation_error: f64,
}

impl From<&EpisodeRecord> for EpisodeRow {
    fn from(r: &EpisodeRecord) -> Self {
        Self {
            episode: r.episode,
            cost: r.cost,
            optimal_cost: r.optimal_cost,
            regret: r.regret,
            cumulative_regret: r.cumulative_regret,
            rho: r.rho,
            lambda_min: r.lambda_min,
            lambda_max: r.lambda_max,
            gain_at_zero: r.gain_at_zero,
            theta_hat_A: r.theta_hat.a,
            theta_hat_B: r.theta_hat.b,
            theta_A: r.theta.a,
            theta_B: r.theta.b,
            estimation_error: r.estimation_error,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub episode: usize,
    pub theta_hat_A: f64,
    pub theta_hat_B: f64,
    pub V_11: f64,
    pub V_12: f64,
    pub V_22: f64,
    pub theta_A: f64,
    pub theta_B: f64,
    pub lambda_min_Vinv: f64,
}

impl From<&EpisodeRecord> for PosteriorRow {
    fn from(r: &EpisodeRecord) -> Self {
        Self {
            episode: r.episode,
            theta_hat_A: r.theta_hat.a,
            theta_hat_B: r.theta_hat.b,
            V_11: r.covariance.xx,
            V_12: r.covariance.xy,
            V_22: r.covariance.yy,
            theta_A: r.theta.a,
            theta_B: r.theta.b,
            lambda_min_Vinv: r.precision_min_eig,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_regret: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationRow {
    pub m: usize,
    pub mean_sq_error: f64,
    pub se: f64,
}

/// Per-episode mean and standard error of `curve` across runs.
pub fn across_runs(
    records: &[RegretRecord],
    curve: impl Fn(&RegretRecord) -> Vec<f64>,
) -> Vec<(usize, f64, f64)> {
    let curves: Vec<Vec<f64>> = records.iter().map(curve).collect();
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let column: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            let se = if column.len() > 1 {
                lqrl::stats::std_error(&column)
            } else {
                0.0
            };
            (i + 1, lqrl::stats::mean(&column), se)
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    for row in rows {
        writer.serialize(row).map_err(|e| CliError::io(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_lf_endings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            TrajectoryRow { t: 0.0, state: 1.5, action: -0.25, xi: Some(0.1), dw: Some(0.01) },
            TrajectoryRow { t: 1.0, state: 2.0, action: 0.5, xi: Some(0.1), dw: None },
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next().unwrap(), "t,X,action,xi,dW");
        assert_eq!(text.lines().nth(2).unwrap(), "1.0,2.0,0.5,0.1,");
        let back: Vec<TrajectoryRow> = read_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].dw, None);
        assert_eq!(back[0].action, -0.25);
    }
}

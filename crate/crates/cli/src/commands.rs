use std::path::{Path, PathBuf};

use lqrl::dynamics::{simulate_general, Execution};
use lqrl::experiments::{
    execution_gap_study, gap_setup, repetition_sweep, riccati_check, DEFAULT_SWEEP, GAP_MESHES,
    MEAN_SLOPE_RANGE, ORDER_RANGE, P95_SLOPE_RANGE, REPETITION_AGENTS, RICCATI_TOLERANCE,
};
use lqrl::learner::{
    estimation_slope, regret_slope, run_many, Algorithm, RegretRecord, SlopeFit, MIN_RUNS,
};
use lqrl::model::{TimeFunction, TimeGrid};
use lqrl::policy::{sample_noise_path, GaussianPolicy};
use lqrl::rng::stream_rng;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::*;
use crate::plot::{Chart, Series};

pub const DEFAULT_RUNS: usize = 50;
pub const REGRET_SLOPE_RANGE: (f64, f64) = (0.40, 0.70);
pub const ESTIMATION_SLOPE_RANGE: (f64, f64) = (-0.65, -0.35);
/// Largest allowed max/min of `Reg(N)/(√N ln N)` over the fit window.
pub const REGRET_RATIO_SPREAD: f64 = 2.0;

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seeds: Option<Vec<u64>>,
    pub runs: Option<usize>,
    pub episodes: Option<usize>,
    pub exec_steps: Option<usize>,
    pub plot: bool,
}

impl ExperimentSpec {
    pub fn load_config(&self) -> Result<ExperimentConfig, CliError> {
        match &self.config {
            Some(path) => ExperimentConfig::load(path),
            None => Ok(ExperimentConfig::benchmark()),
        }
    }

    /// `--seeds`, else the config's `seeds`, else `0..runs`; `--runs`
    /// truncates an explicit list.
    pub fn resolve_seeds(&self, config: &ExperimentConfig) -> Result<Vec<u64>, CliError> {
        let explicit = self.seeds.clone().or_else(|| config.seeds.clone());
        let seeds = match (explicit, self.runs) {
            (Some(list), None) => list,
            (Some(list), Some(r)) => {
                if r > list.len() {
                    return Err(CliError::Validation(format!(
                        "--runs {r} exceeds the {} listed seeds",
                        list.len()
                    )));
                }
                list[..r].to_vec()
            }
            (None, runs) => (0..runs.unwrap_or(DEFAULT_RUNS) as u64).collect(),
        };
        if seeds.is_empty() {
            return Err(CliError::Validation("at least one seed is required".into()));
        }
        Ok(seeds)
    }

    fn first_seed(&self, config: &ExperimentConfig) -> u64 {
        self.seeds
            .as_ref()
            .or(config.seeds.as_ref())
            .and_then(|s| s.first().copied())
            .unwrap_or(0)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn within(range: (f64, f64), v: f64) -> bool {
    (range.0..=range.1).contains(&v)
}

pub fn cmd_riccati_check(spec: &ExperimentSpec, sweep: Option<Vec<usize>>) -> Result<(), CliError> {
    spec.load_config()?;
    let sweep = match sweep {
        Some(s) if !s.is_empty() => s,
        _ => DEFAULT_SWEEP.to_vec(),
    };
    if sweep.len() < 2 || sweep.iter().any(|&n| n < 2) {
        return Err(CliError::Validation(
            "--dt-sweep needs at least two step counts, each at least 2".into(),
        ));
    }
    let check = riccati_check(&sweep).map_err(CliError::validation)?;
    ensure_dir(&spec.out)?;
    let rows: Vec<RiccatiRow> = check
        .rows
        .iter()
        .map(|r| RiccatiRow {
            case: r.case.to_string(),
            steps: r.steps,
            dt: r.dt,
            max_error: r.max_error,
        })
        .collect();
    write_csv(&spec.path(RICCATI_CSV), &rows)?;
    for r in &rows {
        println!("{:<12} steps {:>6}  dt {:.3e}  max error {:.3e}", r.case, r.steps, r.dt, r.max_error);
    }
    println!(
        "tanh error {:.3e}, exponential error {:.3e} (tol {RICCATI_TOLERANCE:e}); order {:.3} (range [{}, {}])",
        check.tanh_error, check.exponential_error, check.order, ORDER_RANGE.0, ORDER_RANGE.1
    );
    if spec.plot {
        plot_riccati(&spec.out)?;
    }
    if check.passed() {
        Ok(())
    } else {
        Err(CliError::Tolerance("Riccati check outside tolerance".into()))
    }
}

pub fn cmd_repetition_bias(
    spec: &ExperimentSpec,
    mu: f64,
    lambda: f64,
    steps: usize,
) -> Result<(), CliError> {
    let config = spec.load_config()?;
    if steps == 0 {
        return Err(CliError::Validation("--steps must be positive".into()));
    }
    let rows = repetition_sweep(mu, lambda, &REPETITION_AGENTS, steps, spec.first_seed(&config))
        .map_err(CliError::validation)?;
    ensure_dir(&spec.out)?;
    let rows: Vec<RepetitionRow> = rows
        .iter()
        .map(|r| RepetitionRow {
            n_agents: r.n_agents,
            empirical: r.empirical,
            std_error: r.std_error,
            analytic: r.analytic,
        })
        .collect();
    write_csv(&spec.path(REPETITION_CSV), &rows)?;
    for r in &rows {
        println!(
            "agents {:>7}: empirical {:.6} ± {:.6}, analytic {:.6}",
            r.n_agents, r.empirical, r.std_error, r.analytic
        );
    }
    if spec.plot {
        plot_repetition(&spec.out)?;
    }
    let last = rows.last().expect("agent sweep is non-empty");
    if (last.empirical - last.analytic).abs() <= 3.0 * last.std_error {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!(
            "empirical bias {:.6} is more than 3 SE from {:.6}",
            last.empirical, last.analytic
        )))
    }
}

pub fn cmd_execution_gap(
    spec: &ExperimentSpec,
    draws: usize,
    ode_steps: usize,
    lambda_scale: f64,
) -> Result<(), CliError> {
    let config = spec.load_config()?;
    let finest = *GAP_MESHES.last().expect("meshes");
    if draws < 2 {
        return Err(CliError::Validation("--draws must be at least 2".into()));
    }
    if ode_steps == 0 || !ode_steps.is_multiple_of(finest) {
        return Err(CliError::Validation(format!(
            "--ode-steps must be a positive multiple of {finest}"
        )));
    }
    if !(lambda_scale.is_finite() && lambda_scale >= 0.0) {
        return Err(CliError::Validation("--lambda-scale must be non-negative".into()));
    }
    let l = &config.learner;
    let (model, base) =
        gap_setup(&l.model, l.prior_theta, l.rho0, ode_steps).map_err(CliError::validation)?;
    let policy = GaussianPolicy::new(
        base.offset.clone(),
        base.gain.clone(),
        TimeFunction::combine(&[&base.std], |t| lambda_scale * base.std.value(t)),
    )
    .map_err(CliError::validation)?;
    let seed = spec.first_seed(&config);
    ensure_dir(&spec.out)?;

    let exec = TimeGrid::new(model.horizon, finest).map_err(CliError::validation)?;
    let policy_rows: Vec<PolicyRow> = (0..=exec.steps())
        .map(|i| {
            let t = exec.knot(i);
            PolicyRow {
                t,
                k: policy.offset.value(t),
                gain: policy.gain.value(t),
                lambda: policy.std.value(t),
            }
        })
        .collect();
    write_csv(&spec.path(GAP_POLICY_CSV), &policy_rows)?;

    let mut rng = stream_rng(seed, u64::MAX);
    let noise = sample_noise_path(&exec, &mut rng);
    let sim = TimeGrid::new(model.horizon, ode_steps).map_err(CliError::validation)?;
    let traj = simulate_general(&model, &policy, Execution::Randomised(&noise), &sim, &mut rng)
        .map_err(CliError::validation)?;
    let traj_rows: Vec<TrajectoryRow> = traj
        .rows()
        .map(|(t, state, action, xi, dw)| TrajectoryRow { t, state, action, xi, dw })
        .collect();
    write_csv(&spec.path(TRAJECTORY_CSV), &traj_rows)?;

    let study = execution_gap_study(&model, &policy, &GAP_MESHES, draws, ode_steps, seed)
        .map_err(CliError::validation)?;
    let rows: Vec<GapRow> = study
        .rows
        .iter()
        .map(|r| GapRow {
            mesh_n: r.mesh_n,
            mean_gap: r.mean_gap,
            se_mean_gap: r.se_mean_gap,
            p95_abs_gap: r.p95_abs_gap,
            n_draws: r.n_draws,
        })
        .collect();
    write_csv(&spec.path(GAP_CSV), &rows)?;
    for r in &rows {
        println!(
            "n {:>4}: mean gap {:.4e} ± {:.2e}, p95 |gap| {:.4e}",
            r.mesh_n, r.mean_gap, r.se_mean_gap, r.p95_abs_gap
        );
    }
    let vanishing = rows.iter().all(|r| r.mean_gap == 0.0 && r.p95_abs_gap == 0.0);
    let (lo, hi) = (GAP_MESHES[0] as f64, finest as f64);
    let slopes = vec![
        SlopeRow {
            quantity: "mean_gap_vs_mesh".into(),
            slope: study.mean_slope,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            window_lo: model.horizon / hi,
            window_hi: model.horizon / lo,
            range_lo: MEAN_SLOPE_RANGE.0,
            range_hi: MEAN_SLOPE_RANGE.1,
            within: study.mean_slope_ok(),
        },
        SlopeRow {
            quantity: "p95_abs_gap_vs_n".into(),
            slope: study.p95_slope,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            window_lo: lo,
            window_hi: hi,
            range_lo: P95_SLOPE_RANGE.0,
            range_hi: P95_SLOPE_RANGE.1,
            within: study.p95_slope_ok(),
        },
    ];
    write_csv(&spec.path(GAP_SLOPES_CSV), &slopes)?;
    if spec.plot {
        plot_gap(&spec.out)?;
    }
    if vanishing {
        println!("all gaps vanish (lambda = 0); no slopes to fit");
        return Ok(());
    }
    println!(
        "mean-gap slope vs |pi| {:.3} (range [{}, {}]); p95 slope vs n {:.3} (range [{}, {}])",
        study.mean_slope,
        MEAN_SLOPE_RANGE.0,
        MEAN_SLOPE_RANGE.1,
        study.p95_slope,
        P95_SLOPE_RANGE.0,
        P95_SLOPE_RANGE.1
    );
    if study.mean_slope_ok() && study.p95_slope_ok() {
        Ok(())
    } else {
        Err(CliError::Tolerance("gap slopes outside their ranges".into()))
    }
}

fn slope_row(quantity: &str, fit: &SlopeFit, range: (f64, f64)) -> SlopeRow {
    SlopeRow {
        quantity: quantity.into(),
        slope: fit.slope,
        ci_low: fit.ci_low,
        ci_high: fit.ci_high,
        window_lo: *fit.points.first().expect("fit points") as f64,
        window_hi: *fit.points.last().expect("fit points") as f64,
        range_lo: range.0,
        range_hi: range.1,
        within: within(range, fit.slope),
    }
}

/// `max / min` of `Reg(N) / (√N ln N)` over the fit points.
pub fn regret_ratio_spread(fit: &SlopeFit) -> f64 {
    let ratios: Vec<f64> = fit
        .points
        .iter()
        .zip(&fit.means)
        .map(|(&n, r)| r / ((n as f64).sqrt() * (n as f64).ln()))
        .collect();
    ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        / ratios.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn cmd_run(spec: &ExperimentSpec, algorithm: Algorithm) -> Result<(), CliError> {
    let config = spec.load_config()?;
    let mut learner = config.learner.clone();
    learner.algorithm = algorithm;
    if let Some(n) = spec.episodes {
        learner.episodes = n;
    }
    if let Some(n) = spec.exec_steps {
        learner.exec_steps = n;
    }
    learner.validate().map_err(CliError::validation)?;
    let seeds = spec.resolve_seeds(&config)?;
    let records = run_many(&learner, &seeds).map_err(|e| match e {
        lqrl::learner::LearnerError::InvalidConfig(_) => CliError::validation(e),
        other => CliError::Tolerance(other.to_string()),
    })?;
    ensure_dir(&spec.out)?;
    let alg = algorithm.name();
    for r in &records {
        let rows: Vec<EpisodeRow> = r.episodes.iter().map(EpisodeRow::from).collect();
        write_csv(&spec.path(&run_csv(alg, r.seed)), &rows)?;
        let rows: Vec<PosteriorRow> = r.episodes.iter().map(PosteriorRow::from).collect();
        write_csv(&spec.path(&posterior_csv(alg, r.seed)), &rows)?;
    }
    let aggregate: Vec<AggregateRow> = across_runs(&records, RegretRecord::cumulative)
        .into_iter()
        .map(|(n, mean_regret, se)| AggregateRow { n, mean_regret, se })
        .collect();
    write_csv(&spec.path(&aggregate_csv(alg)), &aggregate)?;
    let estimation: Vec<EstimationRow> = across_runs(&records, RegretRecord::estimation_errors)
        .into_iter()
        .map(|(m, mean_sq_error, se)| EstimationRow { m, mean_sq_error, se })
        .collect();
    write_csv(&spec.path(&estimation_csv(alg)), &estimation)?;
    let flagged: usize = records.iter().map(|r| r.flagged().len()).sum();
    if flagged > 0 {
        println!("warning: {flagged} episodes with regret below -tolerance");
    }
    let n = learner.episodes;
    println!(
        "{alg}: {} runs x {n} episodes, mean Reg(N) = {:.4}",
        records.len(),
        aggregate.last().map_or(f64::NAN, |a| a.mean_regret)
    );

    let mut slopes = Vec::new();
    let mut verdict = Ok(());
    let (regret_window, estimation_window) = ((n / 10, n), (n / 20, n));
    if records.len() < MIN_RUNS || estimation_window.0 == 0 || regret_window.0 == 0 {
        println!("slopes skipped: need at least {MIN_RUNS} runs and 20 episodes");
    } else {
        let fit = regret_slope(&records, regret_window, 0).map_err(CliError::validation)?;
        let spread = regret_ratio_spread(&fit);
        println!(
            "regret slope {:.3} (95% CI [{:.3}, {:.3}]) over N in [{}, {}], range [{}, {}]; Reg/(sqrt(N) ln N) spread {spread:.3}",
            fit.slope, fit.ci_low, fit.ci_high, regret_window.0, regret_window.1,
            REGRET_SLOPE_RANGE.0, REGRET_SLOPE_RANGE.1
        );
        slopes.push(slope_row("regret", &fit, REGRET_SLOPE_RANGE));
        if !within(REGRET_SLOPE_RANGE, fit.slope) || spread >= REGRET_RATIO_SPREAD {
            verdict = Err(CliError::Tolerance(format!(
                "regret slope {:.3} or ratio spread {spread:.3} outside tolerance",
                fit.slope
            )));
        }
        let fit = estimation_slope(&records, estimation_window, 1).map_err(CliError::validation)?;
        println!(
            "estimation slope {:.3} (95% CI [{:.3}, {:.3}]) over m in [{}, {}], reference range [{}, {}]",
            fit.slope, fit.ci_low, fit.ci_high, estimation_window.0, estimation_window.1,
            ESTIMATION_SLOPE_RANGE.0, ESTIMATION_SLOPE_RANGE.1
        );
        slopes.push(slope_row("estimation", &fit, ESTIMATION_SLOPE_RANGE));
    }
    let slopes_path = spec.path(&slopes_csv(alg));
    if slopes.is_empty() {
        if slopes_path.exists() {
            std::fs::remove_file(&slopes_path).map_err(|e| CliError::io(&slopes_path, e))?;
        }
    } else {
        write_csv(&slopes_path, &slopes)?;
    }
    if spec.plot {
        plot_learning(&spec.out, alg)?;
    }
    verdict
}

/// Regenerates every chart whose CSV exists under `out`.
pub fn cmd_replot(out: &Path) -> Result<(), CliError> {
    let mut drawn = 0;
    if out.join(RICCATI_CSV).exists() {
        plot_riccati(out)?;
        drawn += 1;
    }
    if out.join(REPETITION_CSV).exists() {
        plot_repetition(out)?;
        drawn += 1;
    }
    if out.join(GAP_CSV).exists() {
        plot_gap(out)?;
        drawn += 1;
    }
    for alg in [Algorithm::ExplorationReward, Algorithm::ProximalUpdate] {
        if out.join(aggregate_csv(alg.name())).exists() {
            plot_learning(out, alg.name())?;
            drawn += 1;
        }
    }
    if drawn == 0 {
        return Err(CliError::io(out, "no experiment CSV files found"));
    }
    println!("redrew {drawn} chart(s) in {}", out.display());
    Ok(())
}

fn save(path: PathBuf, chart: &Chart) -> Result<(), CliError> {
    std::fs::write(&path, chart.render()).map_err(|e| CliError::io(path, e))
}

fn plot_riccati(out: &Path) -> Result<(), CliError> {
    let rows: Vec<RiccatiRow> = read_csv(&out.join(RICCATI_CSV))?;
    let mut cases: Vec<String> = rows.iter().map(|r| r.case.clone()).collect();
    cases.dedup();
    let series = cases
        .iter()
        .map(|c| {
            let pts = rows.iter().filter(|r| &r.case == c).map(|r| (r.dt, r.max_error)).collect();
            Series::solid(c.clone(), pts)
        })
        .collect();
    save(
        out.join("riccati_check.svg"),
        &Chart {
            title: "Riccati RK4 error".into(),
            x_label: "dt".into(),
            y_label: "max knot error".into(),
            log_x: true,
            log_y: true,
            series,
        },
    )
}

fn plot_repetition(out: &Path) -> Result<(), CliError> {
    let rows: Vec<RepetitionRow> = read_csv(&out.join(REPETITION_CSV))?;
    let pts = |f: fn(&RepetitionRow) -> f64| rows.iter().map(|r| (r.n_agents as f64, f(r))).collect();
    save(
        out.join("repetition_bias.svg"),
        &Chart {
            title: "Repetition bias".into(),
            x_label: "agents".into(),
            y_label: "bias".into(),
            log_x: true,
            log_y: false,
            series: vec![
                Series::solid("empirical", pts(|r| r.empirical)),
                Series::dashed("analytic", pts(|r| r.analytic)),
            ],
        },
    )
}

fn plot_gap(out: &Path) -> Result<(), CliError> {
    let rows: Vec<GapRow> = read_csv(&out.join(GAP_CSV))?;
    let pts = |f: fn(&GapRow) -> f64| rows.iter().map(|r| (r.mesh_n as f64, f(r))).collect();
    save(
        out.join("execution_gap.svg"),
        &Chart {
            title: "Execution gap".into(),
            x_label: "mesh count n".into(),
            y_label: "gap".into(),
            log_x: true,
            log_y: true,
            series: vec![
                Series::solid("|mean gap|", pts(|r| r.mean_gap.abs())),
                Series::solid("p95 |gap|", pts(|r| r.p95_abs_gap)),
            ],
        },
    )
}

/// Reference curve `c·f(x)` matched to the last point of `pts`.
fn reference(pts: &[(f64, f64)], f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    match pts.last() {
        Some(&(x, y)) if f(x) != 0.0 => {
            let c = y / f(x);
            pts.iter().map(|&(x, _)| (x, c * f(x))).collect()
        }
        _ => Vec::new(),
    }
}

fn plot_learning(out: &Path, alg: &str) -> Result<(), CliError> {
    let rows: Vec<AggregateRow> = read_csv(&out.join(aggregate_csv(alg)))?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.mean_regret)).collect();
    let reference_pts = reference(&pts, |n| n.sqrt() * n.ln());
    save(
        out.join(format!("{alg}_regret.svg")),
        &Chart {
            title: format!("{alg} cumulative regret"),
            x_label: "episodes N".into(),
            y_label: "mean Reg(N)".into(),
            log_x: true,
            log_y: true,
            series: vec![
                Series::solid("mean Reg(N)", pts),
                Series::dashed("c sqrt(N) ln N", reference_pts),
            ],
        },
    )?;
    let path = out.join(estimation_csv(alg));
    if path.exists() {
        let rows: Vec<EstimationRow> = read_csv(&path)?;
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.m as f64, r.mean_sq_error)).collect();
        let reference_pts = reference(&pts, |m| m.powf(-0.5));
        save(
            out.join(format!("{alg}_estimation.svg")),
            &Chart {
                title: format!("{alg} estimation error"),
                x_label: "episode m".into(),
                y_label: "mean |theta_m - theta*|^2".into(),
                log_x: true,
                log_y: true,
                series: vec![
                    Series::solid("mean squared error", pts),
                    Series::dashed("c m^-1/2", reference_pts),
                ],
            },
        )?;
    }
    Ok(())
}

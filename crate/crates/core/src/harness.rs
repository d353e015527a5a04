//! Seeded multi-trial experiments and their CSV/JSON output.
//!
//! Trial `i` draws transitions from `seed = base_seed + i`, and its
//! quantile simulations from `base_seed + M + i`. Trials run on a rayon pool
//! and are collected in trial order, so the output does not depend on the
//! thread count.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covest::MomentAccumulator;
use crate::error::{Error, Result};
use crate::inference::{ellipsoid_region, individual_ci, linf_quantile, simultaneous_ci_from_quantile};
use crate::mdp::{
    adversarial_stream, build_divergence_mdp, build_hard_mdp, closed_form_theta_star, ground_truth, GroundTruth,
    HardMdpParams, SampleTuple, TabularMdp, TransitionSampler,
};
use crate::metrics::{empirical_quantile, frobenius_error, ks_distance};
use crate::numkit::{seeded_rng, Matrix, Vector};
use crate::td::{CheckpointGrid, StepSchedule, TdState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MdpSpec {
    Hard(HardMdpParams),
    Json { path: PathBuf },
}

impl MdpSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        match self {
            MdpSpec::Hard(p) => build_hard_mdp(p),
            MdpSpec::Json { path } => TabularMdp::load(path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Upper quantile of `‖θ̄_t - θ*‖₂` across trials.
    L2Quantile,
    /// Per-coordinate KS distance of `√t (θ̄_t - θ*)` to its Gaussian limit.
    BerryEsseen,
    /// Mean Frobenius error of `Λ̂_t`.
    CovError,
    /// Coverage of per-coordinate, simultaneous and ellipsoidal regions.
    Coverage,
    /// Deterministic adversarial stream on the two-state counterexample.
    Divergence,
    /// Exact population quantities of the MDP.
    GroundTruth,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::L2Quantile => "l2-quantile",
            ExperimentKind::BerryEsseen => "berry-esseen",
            ExperimentKind::CovError => "cov-error",
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::Divergence => "divergence",
            ExperimentKind::GroundTruth => "ground-truth",
        }
    }

    fn needs_covariance(self) -> bool {
        matches!(self, ExperimentKind::CovError | ExperimentKind::Coverage)
    }

    /// Dense grid for coverage curves, geometric grid for rate plots.
    pub fn default_checkpoints(self) -> CheckpointGrid {
        match self {
            ExperimentKind::Coverage => CheckpointGrid::Every(100),
            _ => CheckpointGrid::PerDecade(20),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub mdp: MdpSpec,
    pub schedule: StepSchedule,
    pub horizon: u64,
    pub trials: usize,
    pub base_seed: u64,
    pub checkpoints: CheckpointGrid,
    pub delta: f64,
    pub n_sims: usize,
    /// First checkpoint at which `Λ̂_t` is reported; defaults to `10 d`.
    #[serde(default)]
    pub burn_in: Option<u64>,
    /// Worker threads; `None` lets rayon decide. Never affects results.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Desk-scale defaults: hard MDP with `|S| = 10, d = 3, γ = 0.2, ε = 0.01`,
    /// `η₀ = 5, α = 2/3, T = 10⁵, M = 10³, δ = 0.05`.
    pub fn desk_scale(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            mdp: MdpSpec::Hard(HardMdpParams::new(10, 3, 0.2, 0.01)),
            schedule: StepSchedule { eta0: 5.0, alpha: 2.0 / 3.0 },
            horizon: 100_000,
            trials: 1000,
            base_seed: 0,
            checkpoints: kind.default_checkpoints(),
            delta: 0.05,
            n_sims: 100_000,
            burn_in: None,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon T must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trial count M must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} is outside (0, 1)", self.delta)));
        }
        StepSchedule::new(self.schedule.eta0, self.schedule.alpha).map_err(|e| Error::Config(e.to_string()))?;
        if self.kind == ExperimentKind::BerryEsseen && self.trials < 10 {
            return Err(Error::Config("berry-esseen needs at least 10 trials".into()));
        }
        if self.kind == ExperimentKind::Coverage && self.n_sims < 100 {
            return Err(Error::Config("coverage needs n_sims of at least 100".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("thread count must be positive".into()));
        }
        self.checkpoints.points(self.horizon)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub t: u64,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMetadata {
    pub version: String,
    pub config: ExperimentConfig,
    /// Inclusive range of transition-stream seeds.
    pub trial_seeds: [u64; 2],
    /// Inclusive range of quantile-simulation seeds.
    pub quantile_seeds: [u64; 2],
    /// Checkpoints actually reported.
    pub checkpoints: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub experiment: String,
    pub trials: usize,
    pub seed: u64,
    pub metadata: ResultMetadata,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    fn new(config: &ExperimentConfig, checkpoints: Vec<u64>) -> Self {
        let m = config.trials as u64;
        let b = config.base_seed;
        ResultTable {
            experiment: config.kind.name().to_string(),
            trials: config.trials,
            seed: b,
            metadata: ResultMetadata {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: config.clone(),
                trial_seeds: [b, b.wrapping_add(m - 1)],
                quantile_seeds: [b.wrapping_add(m), b.wrapping_add(2 * m - 1)],
                checkpoints,
            },
            rows: Vec::new(),
        }
    }

    fn push(&mut self, t: u64, statistic: impl Into<String>, value: f64) {
        self.rows.push(ResultRow { t, statistic: statistic.into(), value });
    }

    /// Values of one statistic in checkpoint order.
    pub fn series(&self, statistic: &str) -> Vec<(u64, f64)> {
        self.rows.iter().filter(|r| r.statistic == statistic).map(|r| (r.t, r.value)).collect()
    }

    pub fn value(&self, t: u64, statistic: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.t == t && r.statistic == statistic).map(|r| r.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// `experiment,t,statistic,value,trials,seed` rows with 17 significant digits.
pub fn to_csv(table: &ResultTable) -> String {
    let mut out = String::from("experiment,t,statistic,value,trials,seed\n");
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{:.16e},{},{}",
            table.experiment, r.t, r.statistic, r.value, table.trials, table.seed
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn to_json(table: &ResultTable) -> Result<String> {
    let mut s = serde_json::to_string_pretty(table)?;
    s.push('\n');
    Ok(s)
}

pub fn render(table: &ResultTable, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => Ok(to_csv(table)),
        OutputFormat::Json => to_json(table),
    }
}

/// Writes the table to `path`, or to stdout when `path` is `None`.
pub fn emit(table: &ResultTable, format: OutputFormat, path: Option<&Path>) -> Result<()> {
    let text = render(table, format)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io { path: p.display().to_string(), source }),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|source| Error::Io { path: "<stdout>".into(), source }),
    }
}

/// Runs `f` on a pool with the configured thread count.
fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    match config.kind {
        ExperimentKind::GroundTruth => run_ground_truth(config),
        ExperimentKind::Divergence => run_divergence(config),
        _ => with_pool(config.threads, || run_monte_carlo(config))?,
    }
}

fn matrix_rows(table: &mut ResultTable, t: u64, name: &str, m: &Matrix) {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            table.push(t, format!("{name}[{i}][{j}]"), m[(i, j)]);
        }
    }
}

fn vector_rows(table: &mut ResultTable, t: u64, name: &str, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        table.push(t, format!("{name}[{i}]"), *x);
    }
}

fn run_ground_truth(config: &ExperimentConfig) -> Result<ResultTable> {
    let mdp = config.mdp.build()?;
    let gt = ground_truth(&mdp)?;
    let mut table = ResultTable::new(config, vec![0]);
    matrix_rows(&mut table, 0, "a", &gt.a);
    vector_rows(&mut table, 0, "b", &gt.b);
    matrix_rows(&mut table, 0, "sigma", &gt.sigma);
    vector_rows(&mut table, 0, "theta_star", &gt.theta_star);
    if let MdpSpec::Hard(p) = &config.mdp {
        let closed = closed_form_theta_star(p, &p.q_vector())?;
        vector_rows(&mut table, 0, "theta_star_closed_form", &closed);
    }
    matrix_rows(&mut table, 0, "gamma_noise", &gt.gamma_noise);
    matrix_rows(&mut table, 0, "lambda_star", &gt.lambda_star);
    table.push(0, "lambda0", gt.lambda0);
    table.push(0, "lambda_sigma", gt.lambda_sigma);
    vector_rows(&mut table, 0, "mu", gt.mu.probs());
    Ok(table)
}

/// `θ̄_t - θ*` on the adversarial stream, where every sample is the same
/// scalar pair `(a, b)`: then `θ_t - b/a = Π_{k≤t} (1 - a η_k) (θ₀ - b/a)`.
pub fn divergence_closed_form(schedule: &StepSchedule, checkpoints: &[u64], theta_star: f64) -> Vec<f64> {
    let tuple = adversarial_stream(1);
    let (a, b) = (tuple.a[(0, 0)], tuple.b[0]);
    let c = b / a;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut prod = 1.0;
    let mut sum = 0.0;
    let mut next = checkpoints.iter().peekable();
    for t in 1..=checkpoints.last().copied().unwrap_or(0) {
        prod *= 1.0 - a * schedule.eta(t);
        sum += prod;
        if next.next_if_eq(&&t).is_some() {
            out.push((c - theta_star) - c * sum / t as f64);
        }
    }
    out
}

fn run_divergence(config: &ExperimentConfig) -> Result<ResultTable> {
    let mdp = build_divergence_mdp();
    let gt = ground_truth(&mdp)?;
    let theta_star = gt.theta_star[0];
    let points = config.checkpoints.points(config.horizon)?;
    let closed = divergence_closed_form(&config.schedule, &points, theta_star);
    let mut table = ResultTable::new(config, points.clone());

    let sample = adversarial_stream(1);
    let mut state = TdState::zeros(1);
    let mut diverged = false;
    let mut next = points.iter().zip(&closed).peekable();
    for t in 1..=config.horizon {
        if !diverged && state.step(&sample, &config.schedule).is_err() {
            diverged = true;
        }
        let Some(&(&cp, &cf)) = next.peek() else { break };
        if cp != t {
            continue;
        }
        next.next();
        let delta = if diverged { f64::NAN } else { state.theta_bar[0] - theta_star };
        table.push(t, "delta_bar", delta);
        table.push(t, "delta_bar_closed_form", cf);
        table.push(t, "delta_bar_l2", delta.abs());
        table.push(t, "relative_residual", ((delta - cf) / cf).abs());
        table.push(t, "diverged", f64::from(u8::from(diverged)));
    }
    Ok(table)
}

/// Per-trial values at one checkpoint; `None` once the trial has diverged.
struct Observation {
    theta_bar: Vector,
    /// `None` when `Λ̂_t` could not be formed (singular `Ā`).
    lambda_hat: Option<Matrix>,
    /// Per-coordinate, simultaneous and ellipsoid membership of `θ*`.
    covered: Option<(Vec<bool>, bool, bool)>,
}

struct Shared<'a> {
    config: &'a ExperimentConfig,
    sampler: TransitionSampler<'a>,
    gt: &'a GroundTruth,
    points: &'a [u64],
}

fn is_estimate_failure(e: &Error) -> bool {
    matches!(e, Error::Singular | Error::NotPsd { .. })
}

fn run_trial(sh: &Shared<'_>, i: usize) -> Result<Vec<Option<Observation>>> {
    let cfg = sh.config;
    let m = cfg.trials as u64;
    let mdp = sh.sampler.mdp();
    let d = mdp.dim();
    let mut rng = seeded_rng(cfg.base_seed.wrapping_add(i as u64));
    let mut quantile_rng = seeded_rng(cfg.base_seed.wrapping_add(m + i as u64));
    let mut state = TdState::zeros(d);
    let mut acc = cfg.kind.needs_covariance().then(|| MomentAccumulator::new(d));
    let mut sample = SampleTuple::from_transition(mdp, 0, 0);
    let mut out: Vec<Option<Observation>> = Vec::with_capacity(sh.points.len());
    let mut next = sh.points.iter().peekable();
    let horizon = *sh.points.last().expect("grid is nonempty");

    for t in 1..=horizon {
        sh.sampler.sample_into(&mut rng, &mut sample);
        match state.step(&sample, &cfg.schedule) {
            Ok(()) => {}
            Err(Error::Diverged { .. }) => break,
            Err(e) => return Err(e),
        }
        if let Some(acc) = acc.as_mut() {
            acc.update(&sample)?;
        }
        if next.next_if_eq(&&t).is_none() {
            continue;
        }
        let mut obs = Observation { theta_bar: state.theta_bar.clone(), lambda_hat: None, covered: None };
        if let Some(acc) = &acc {
            match observe_covariance(sh, acc, &state.theta_bar, t, &mut quantile_rng) {
                Ok((lam, cov)) => {
                    obs.lambda_hat = Some(lam);
                    obs.covered = cov;
                }
                Err(e) if is_estimate_failure(&e) => {}
                Err(e) => return Err(e),
            }
        }
        out.push(Some(obs));
    }
    out.resize_with(sh.points.len(), || None);
    Ok(out)
}

type Covered = (Vec<bool>, bool, bool);

fn observe_covariance(
    sh: &Shared<'_>,
    acc: &MomentAccumulator,
    theta_bar: &Vector,
    t: u64,
    quantile_rng: &mut crate::numkit::SimRng,
) -> Result<(Matrix, Option<Covered>)> {
    let lambda_hat = acc.finalize(theta_bar)?.lambda_hat;
    if sh.config.kind != ExperimentKind::Coverage {
        return Ok((lambda_hat, None));
    }
    let cfg = sh.config;
    let star = sh.gt.theta_star.as_slice();
    let ind = individual_ci(theta_bar, &lambda_hat, t, cfg.delta)?;
    let per_coord = star.iter().enumerate().map(|(j, &x)| ind.contains_coord(j, x)).collect();
    let q = linf_quantile(&lambda_hat, cfg.delta, cfg.n_sims, quantile_rng)?;
    let sim = simultaneous_ci_from_quantile(theta_bar, q, t, cfg.delta)?.contains(star);
    let ell = ellipsoid_region(theta_bar, &lambda_hat, t, cfg.delta)?.contains(star);
    Ok((lambda_hat, Some((per_coord, sim, ell))))
}

fn run_monte_carlo(config: &ExperimentConfig) -> Result<ResultTable> {
    let mdp = config.mdp.build()?;
    let gt = ground_truth(&mdp)?;
    let d = mdp.dim();
    let mut points = config.checkpoints.points(config.horizon)?;
    if config.kind.needs_covariance() {
        let burn_in = config.burn_in.unwrap_or(10 * d as u64);
        points.retain(|&t| t >= burn_in);
        if points.is_empty() {
            return Err(Error::Config(format!(
                "no checkpoint at or after the burn-in {burn_in}; raise the horizon or lower the burn-in"
            )));
        }
    }
    let shared = Shared { config, sampler: TransitionSampler::new(&mdp, &gt.mu)?, gt: &gt, points: &points };
    let trials: Vec<Vec<Option<Observation>>> =
        (0..config.trials).into_par_iter().map(|i| run_trial(&shared, i)).collect::<Result<_>>()?;

    let mut table = ResultTable::new(config, points.clone());
    let star = &gt.theta_star;
    for (k, &t) in points.iter().enumerate() {
        let live: Vec<&Observation> = trials.iter().filter_map(|tr| tr[k].as_ref()).collect();
        let diverged = (trials.len() - live.len()) as f64;
        let nan_if_empty = |v: Result<f64>| if live.is_empty() { f64::NAN } else { v.unwrap_or(f64::NAN) };
        match config.kind {
            ExperimentKind::L2Quantile => {
                let norms: Vec<f64> = live.iter().map(|o| o.theta_bar.sub(star).norm2()).collect();
                table.push(t, "l2_quantile", nan_if_empty(empirical_quantile(&norms, 1.0 - config.delta)));
            }
            ExperimentKind::BerryEsseen => {
                let scale = (t as f64).sqrt();
                let scaled: Vec<Vector> = live.iter().map(|o| o.theta_bar.sub(star).scale(scale)).collect();
                let ks = if scaled.len() >= 10 { ks_distance(&scaled, &gt.lambda_star)? } else { f64::NAN };
                table.push(t, "ks_distance", ks);
            }
            ExperimentKind::CovError => {
                let errs: Vec<f64> = live
                    .iter()
                    .filter_map(|o| o.lambda_hat.as_ref())
                    .map(|l| frobenius_error(l, &gt.lambda_star, false))
                    .collect();
                let n = errs.len() as f64;
                let mean = |f: &dyn Fn(f64) -> f64| if errs.is_empty() { f64::NAN } else { errs.iter().map(|&e| f(e)).sum::<f64>() / n };
                table.push(t, "frobenius_error_mean", mean(&|e| e));
                table.push(t, "frobenius_error_sq_mean", mean(&|e| e * e));
                table.push(t, "estimate_failures", (live.len() - errs.len()) as f64);
            }
            ExperimentKind::Coverage => {
                let cov: Vec<&Covered> = live.iter().filter_map(|o| o.covered.as_ref()).collect();
                let n = cov.len() as f64;
                let rate = |hits: usize| if cov.is_empty() { f64::NAN } else { hits as f64 / n };
                for j in 0..d {
                    table.push(t, format!("coverage_ci[{j}]"), rate(cov.iter().filter(|c| c.0[j]).count()));
                }
                table.push(t, "coverage_simultaneous", rate(cov.iter().filter(|c| c.1).count()));
                table.push(t, "coverage_ellipsoid", rate(cov.iter().filter(|c| c.2).count()));
                table.push(t, "estimate_failures", (live.len() - cov.len()) as f64);
            }
            ExperimentKind::Divergence | ExperimentKind::GroundTruth => unreachable!("handled separately"),
        }
        table.push(t, "diverged_trials", diverged);
    }
    Ok(table)
}

/// One trajectory with `θ̄_t`, its error, and `Λ̂_t` after the burn-in.
pub fn run_single(config: &ExperimentConfig) -> Result<ResultTable> {
    let mut config = config.clone();
    config.trials = 1;
    config.validate()?;
    let mdp = config.mdp.build()?;
    let gt = ground_truth(&mdp)?;
    let d = mdp.dim();
    let points = config.checkpoints.points(config.horizon)?;
    let burn_in = config.burn_in.unwrap_or(10 * d as u64);
    let sampler = TransitionSampler::new(&mdp, &gt.mu)?;
    let mut rng = seeded_rng(config.base_seed);
    let mut state = TdState::zeros(d);
    let mut acc = MomentAccumulator::new(d);
    let mut sample = SampleTuple::from_transition(&mdp, 0, 0);
    let mut table = ResultTable::new(&config, points.clone());
    table.experiment = "run-td".into();
    let mut next = points.iter().peekable();
    let mut diverged = false;
    for t in 1..=config.horizon {
        sampler.sample_into(&mut rng, &mut sample);
        if !diverged {
            match state.step(&sample, &config.schedule) {
                Ok(()) => acc.update(&sample)?,
                Err(Error::Diverged { .. }) => diverged = true,
                Err(e) => return Err(e),
            }
        }
        if next.next_if_eq(&&t).is_none() {
            continue;
        }
        let nan = Vector::from_vec_unchecked(vec![f64::NAN; d]);
        let theta_bar = if diverged { &nan } else { &state.theta_bar };
        vector_rows(&mut table, t, "theta_bar", theta_bar);
        table.push(t, "l2_error", theta_bar.sub(&gt.theta_star).norm2());
        let lambda_hat = if diverged || t < burn_in {
            None
        } else {
            match acc.finalize(theta_bar) {
                Ok(est) => Some(est.lambda_hat),
                Err(e) if is_estimate_failure(&e) => None,
                Err(e) => return Err(e),
            }
        };
        let lambda_hat = lambda_hat.unwrap_or_else(|| Matrix::from_vec_unchecked(d, d, vec![f64::NAN; d * d]));
        matrix_rows(&mut table, t, "lambda_hat", &lambda_hat);
    }
    Ok(table)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use td_inference::harness::{
    emit, run_experiment, run_single, ExperimentConfig, ExperimentKind, MdpSpec, OutputFormat,
};
use td_inference::mdp::HardMdpParams;
use td_inference::td::{CheckpointGrid, StepSchedule};

/// TD(0) with Polyak-Ruppert averaging: ground truth, single runs and
/// Monte Carlo experiments on the hard MDP family or a JSON-specified MDP.
#[derive(Parser)]
#[command(name = "td-inference", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump A, b, Σ, θ*, Γ, Λ* and the stationary distribution.
    GroundTruth(Opts),
    /// Run one trajectory and report θ̄_t and Λ̂_t at each checkpoint.
    RunTd(Opts),
    /// Run a seeded multi-trial experiment.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args)]
struct Opts {
    /// Number of states in the hard MDP.
    #[arg(long, env = "TDINFER_STATES", default_value_t = 10)]
    states: usize,
    /// Feature dimension of the hard MDP.
    #[arg(long, env = "TDINFER_DIM", default_value_t = 3)]
    dim: usize,
    /// Discount factor.
    #[arg(long, env = "TDINFER_GAMMA", default_value_t = 0.2)]
    gamma: f64,
    /// Kernel perturbation of the hard MDP.
    #[arg(long, env = "TDINFER_EPS", default_value_t = 0.01)]
    eps: f64,
    /// Load the MDP from a JSON file instead of building the hard MDP.
    #[arg(long, env = "TDINFER_MDP_JSON")]
    mdp_json: Option<PathBuf>,
    #[arg(long, env = "TDINFER_ETA0", default_value_t = 5.0)]
    eta0: f64,
    #[arg(long, env = "TDINFER_ALPHA", default_value_t = 2.0 / 3.0)]
    alpha: f64,
    /// Number of TD iterations T.
    #[arg(long, env = "TDINFER_HORIZON", default_value_t = 100_000)]
    horizon: u64,
    /// Number of independent trials M.
    #[arg(long, env = "TDINFER_TRIALS", default_value_t = 1000)]
    trials: usize,
    /// Base seed; trial i uses seed + i.
    #[arg(long, env = "TDINFER_SEED", default_value_t = 0)]
    seed: u64,
    /// Miscoverage level of confidence regions.
    #[arg(long, env = "TDINFER_DELTA", default_value_t = 0.05)]
    delta: f64,
    /// Gaussian draws per simultaneous-interval quantile.
    #[arg(long, env = "TDINFER_NSIMS", default_value_t = 100_000)]
    nsims: usize,
    /// Record every k iterations.
    #[arg(long, env = "TDINFER_CHECKPOINT_EVERY", conflicts_with = "checkpoints_per_decade")]
    checkpoint_every: Option<u64>,
    /// Record on a geometric grid with n points per decade.
    #[arg(long, env = "TDINFER_CHECKPOINTS_PER_DECADE")]
    checkpoints_per_decade: Option<u32>,
    /// First checkpoint at which Λ̂ is reported [default: 10·d].
    #[arg(long, env = "TDINFER_BURN_IN")]
    burn_in: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, env = "TDINFER_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "TDINFER_FORMAT", value_enum, default_value = "csv")]
    format: OutputFormat,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "TDINFER_THREADS")]
    threads: Option<usize>,
}

impl Opts {
    fn config(&self, kind: ExperimentKind) -> ExperimentConfig {
        let mdp = match &self.mdp_json {
            Some(path) => MdpSpec::Json { path: path.clone() },
            None => MdpSpec::Hard(HardMdpParams::new(self.states, self.dim, self.gamma, self.eps)),
        };
        let checkpoints = match (self.checkpoint_every, self.checkpoints_per_decade) {
            (Some(k), _) => CheckpointGrid::Every(k),
            (None, Some(n)) => CheckpointGrid::PerDecade(n),
            (None, None) => kind.default_checkpoints(),
        };
        ExperimentConfig {
            kind,
            mdp,
            schedule: StepSchedule { eta0: self.eta0, alpha: self.alpha },
            horizon: self.horizon,
            trials: self.trials,
            base_seed: self.seed,
            checkpoints,
            delta: self.delta,
            n_sims: self.nsims,
            burn_in: self.burn_in,
            threads: self.threads,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, opts) = match &cli.command {
        Command::GroundTruth(o) => (run_experiment(&o.config(ExperimentKind::GroundTruth)), o),
        Command::RunTd(o) => (run_single(&o.config(ExperimentKind::L2Quantile)), o),
        Command::Experiment { kind, opts } => (run_experiment(&opts.config(*kind)), opts),
    };
    match result.and_then(|table| emit(&table, opts.format, opts.out.as_deref())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("td-inference: {e}");
            ExitCode::FAILURE
        }
    }
}

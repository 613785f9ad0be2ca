use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Defaults of every key, in config-file layout.
fn defaults_help(defaults: &impl Serialize) -> String {
    let json = serde_json::to_string_pretty(defaults).expect("defaults serialize");
    format!("Defaults (config file layout; flags without a listed default fall back to these):\n{json}")
}

/// Stein variational gradient descent over Bayesian neural networks with
/// matrix-variate Gaussian priors.
///
/// Every experiment command takes a JSON config file (`--config`) whose keys
/// mirror the resolved config echoed in `summary.json`; flags override it.
#[derive(Debug, Parser)]
#[command(name = "s2vgd", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a regression ensemble and report test RMSE and log-likelihood.
    #[command(after_help = defaults_help(&crate::supervised::SupervisedFile::default()))]
    Regress(SupervisedArgs),
    /// Train a classification ensemble and report accuracy and log-likelihood.
    #[command(after_help = defaults_help(&crate::supervised::SupervisedFile::default()))]
    Classify(SupervisedArgs),
    /// Run a contextual bandit and report cumulative regret per method.
    #[command(after_help = defaults_help(&crate::bandit::BanditFile::default()))]
    Bandit(BanditArgs),
    /// Train a CartPole policy ensemble with the Stein policy gradient.
    #[command(after_help = defaults_help(&crate::rl::RlFile::default()))]
    Rl(RlArgs),
    /// Run the built-in verification suites.
    Diag(DiagArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; required here or in the config file
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run seeds seed, seed+1, ... and add a mean ± std summary [default: 1]
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Output directory
    #[arg(long, env = "S2VGD_OUTPUT_DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads [default: available cores]; 1 gives the canonical trace
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Network and optimizer flags shared by every experiment command.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Hidden layer widths, comma-separated
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Number of particles
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Householder reflections per orthogonal factor, capped per layer at min(l1, l2)
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Base RMSProp step size
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Step-size decay period in epochs; 0 disables decay [default: 0]
    #[arg(long)]
    pub decay_every: Option<usize>,
    /// Step-size decay factor [default: 0.5]
    #[arg(long)]
    pub decay_factor: Option<f64>,
    /// Initial (or fixed) prior variance of the layer scales
    #[arg(long)]
    pub prior_variance: Option<f64>,
    /// `fixed` holds layer prior scales at --prior-variance, `learned` samples them [default: fixed]
    #[arg(long)]
    pub prior_scales: Option<String>,
}

#[derive(Debug, Args)]
pub struct SupervisedArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// `synthetic` or the path of a CSV file [default: synthetic]
    #[arg(long)]
    pub dataset: Option<String>,
    /// CSV target column, by header name or 0-based index [default: last column]
    #[arg(long)]
    pub target_column: Option<String>,
    /// CSV columns to one-hot encode, comma-separated
    #[arg(long, value_delimiter = ',')]
    pub categorical: Option<Vec<String>>,
    /// The CSV file has no header row
    #[arg(long)]
    pub no_header: bool,
    /// Share of CSV rows used for training [default: 0.9]
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// `relu` or `tanh` [default: relu]
    #[arg(long)]
    pub activation: Option<String>,
    /// Training epochs [default: 1500]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 5]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Standard deviation of the initial core weights and biases [default: 1.5]
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Write a metrics row every this many epochs [default: 1]
    #[arg(long)]
    pub log_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BanditArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// `mushroom_synthetic` or `mushroom:<path>` for the UCI table [default: mushroom_synthetic]
    #[arg(long)]
    pub env: Option<String>,
    /// Comma-separated methods: stein_thompson, greedy, eps_greedy:<ε> [default: stein_thompson,greedy]
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    /// Interaction steps [default: 5000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Ensemble updates after each step [default: 4]
    #[arg(long)]
    pub n_update: Option<usize>,
    /// Replay minibatch size [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RlArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Temperature of the tempered objective [default: 10]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Policy iterations [default: 100]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Episodes per particle per iteration [default: 10]
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Discount of the returns in the gradient estimate [default: 0.99]
    #[arg(long)]
    pub discount: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Flip the sign of the matrix-normal exponent; the density check must fail
    #[arg(long)]
    pub inject_sign_flip: bool,
}

/// Fields of a resolved config that `ModelArgs` can override.
pub(crate) struct ModelSlots<'a> {
    pub hidden: &'a mut Vec<usize>,
    pub particles: &'a mut usize,
    pub k: &'a mut usize,
    pub step: &'a mut s2vgd::svgd::StepConfig,
    pub prior_variance_init: &'a mut f64,
    pub prior_scales: &'a mut s2vgd::bnn::PriorScales,
}

impl ModelArgs {
    pub(crate) fn apply(&self, slots: ModelSlots<'_>) -> crate::Outcome<()> {
        use crate::apply;
        apply(slots.hidden, self.hidden.clone());
        apply(slots.particles, self.m);
        apply(slots.k, self.k);
        apply(&mut slots.step.epsilon, self.epsilon);
        apply(&mut slots.step.decay_every, self.decay_every);
        apply(&mut slots.step.decay_factor, self.decay_factor);
        apply(slots.prior_variance_init, self.prior_variance);
        if let Some(s) = &self.prior_scales {
            *slots.prior_scales = crate::parse_named("prior-scales", s)?;
        }
        Ok(())
    }
}

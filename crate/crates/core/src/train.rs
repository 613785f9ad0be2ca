//! Supervised training of a network ensemble on a dataset.

use serde::{Deserialize, Serialize};

use crate::bnn::{Activation, Batch, Likelihood, Network, NetworkSpec, Prediction, PriorScales, Target as Label};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax, RngStream};
use crate::mvg::HyperPrior;
use crate::svgd::{run_svgd, Ensemble, KernelConfig, RunConfig, StepConfig, Target};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Network posterior over a dataset, sampled in minibatches.
pub struct BnnTarget<'a> {
    pub net: &'a Network,
    pub data: &'a Dataset,
    pub batch_size: usize,
}

impl<'a> BnnTarget<'a> {
    pub fn new(net: &'a Network, data: &'a Dataset, batch_size: usize) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if data.input_dim() != net.spec().input_dim() {
            return Err(Error::dims(net.spec().input_dim(), data.input_dim(), "dataset input width"));
        }
        Ok(BnnTarget { net, data, batch_size })
    }
}

impl Target for BnnTarget<'_> {
    type Batch = Batch;

    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn init_particle(&self, stream: &mut RngStream) -> Vec<f64> {
        self.net.init_particle(stream)
    }

    /// The whole set when it fits in one batch, else a uniform draw without
    /// replacement.
    fn sample_batch(&self, stream: &mut RngStream) -> Batch {
        let n = self.data.len();
        let idx: Vec<usize> = if self.batch_size >= n {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            for i in 0..self.batch_size {
                let j = i + stream.index(n - i);
                all.swap(i, j);
            }
            all.truncate(self.batch_size);
            all
        };
        Batch {
            inputs: idx.iter().map(|&i| self.data.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.data.targets[i].clone()).collect(),
            weights: None,
            n_total: n,
        }
    }

    fn log_density_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.net.log_posterior_grad(theta, batch)
    }

    fn batches_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.batch_size)
    }

    fn project(&self, theta: &mut [f64]) {
        self.net.normalize_flows(theta);
    }
}

/// Test-set metrics in original target units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionMetrics {
    pub rmse: f64,
    /// Mean per-point log-likelihood of the particle mixture.
    pub log_likelihood: f64,
}

pub fn regression_metrics(net: &Network, particles: &[Vec<f64>], test: &Dataset) -> Result<RegressionMetrics> {
    if test.is_empty() {
        return Err(Error::Dataset("test set is empty".into()));
    }
    let norm = test.normalization.as_ref();
    let mut sq = 0.0;
    let mut ll = 0.0;
    let mut count = 0usize;
    for (x, t) in test.inputs.iter().zip(&test.targets) {
        let Label::Real(y) = t else {
            return Err(Error::TargetKind("regression metrics need real targets"));
        };
        let outs = particles
            .iter()
            .map(|p| net.forward(p, x))
            .collect::<Result<Vec<_>>>()?;
        let Prediction::Regression { mean, .. } = net.predict_ensemble(particles, x)? else {
            return Err(Error::TargetKind("regression metrics need a regression network"));
        };
        let denorm = |v: &[f64]| norm.map_or(v.to_vec(), |n| n.denormalize_target(v));
        let mean_orig = denorm(&mean);
        let y_orig = denorm(y);
        for k in 0..y.len() {
            sq += (mean_orig[k] - y_orig[k]).powi(2);
            count += 1;
            let scale = norm.map_or(1.0, |n| n.target_scale(k));
            let terms: Vec<f64> = outs
                .iter()
                .zip(particles)
                .map(|(o, p)| {
                    let g = net.gamma(p).expect("regression network");
                    -0.5 * (LN_2PI + g.ln()) - 0.5 * (y[k] - o[k]).powi(2) / g
                })
                .collect();
            ll += log_sum_exp(&terms) - (particles.len() as f64).ln() - scale.ln();
        }
    }
    Ok(RegressionMetrics {
        rmse: (sq / count as f64).sqrt(),
        log_likelihood: ll / count as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub log_likelihood: f64,
}

pub fn classification_metrics(net: &Network, particles: &[Vec<f64>], data: &Dataset) -> Result<ClassificationMetrics> {
    if data.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let mut correct = 0usize;
    let mut ll = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let Label::Class(c) = *t else {
            return Err(Error::TargetKind("classification metrics need class targets"));
        };
        let probs = class_probabilities(net, particles, x)?;
        if c >= probs.len() {
            return Err(Error::ClassOutOfRange {
                index: c,
                classes: probs.len(),
            });
        }
        if crate::math::argmax(&probs) == c {
            correct += 1;
        }
        ll += probs[c].max(f64::MIN_POSITIVE).ln();
    }
    let n = data.len() as f64;
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / n,
        log_likelihood: ll / n,
    })
}

/// Ensemble-averaged class probabilities.
pub fn class_probabilities(net: &Network, particles: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>> {
    match net.predict_ensemble(particles, x)? {
        Prediction::Classification { probs } => Ok(probs),
        Prediction::Regression { mean, .. } => Ok(softmax(&mean)),
    }
}

/// Network and schedule of a regression or classification run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub particles: usize,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub step: StepConfig,
    pub kernel: KernelConfig,
    pub hyper: HyperPrior,
    pub noise_hyper: HyperPrior,
    pub prior_variance_init: f64,
    pub prior_scales: PriorScales,
    pub init_std: f64,
    /// A metrics row every this many epochs, plus one after the last.
    pub log_every: usize,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            hidden: vec![100],
            activation: Activation::Relu,
            particles: 20,
            k: 1,
            epochs: 1500,
            batch_size: 5,
            step: StepConfig {
                epsilon: 5e-4,
                ..StepConfig::default()
            },
            kernel: KernelConfig::default(),
            hyper: HyperPrior::default(),
            noise_hyper: HyperPrior::default(),
            prior_variance_init: 1.0,
            prior_scales: PriorScales::Fixed,
            init_std: 1.5,
            log_every: 1,
        }
    }
}

impl SupervisedConfig {
    /// Gaussian output for real targets, softmax output for classes.
    pub fn network(&self, data: &Dataset) -> Result<Network> {
        let likelihood = if data.is_classification() {
            Likelihood::Categorical
        } else {
            Likelihood::GaussianRegression
        };
        let mut dims = vec![data.input_dim()];
        dims.extend(&self.hidden);
        dims.push(data.output_dim());
        let spec = NetworkSpec::with_uniform_k(dims, self.k, self.activation, likelihood)?
            .with_hyper(self.hyper)
            .with_noise_hyper(self.noise_hyper)
            .with_prior_variance_init(self.prior_variance_init)
            .with_prior_scales(self.prior_scales)
            .with_init_std(self.init_std);
        Network::new(spec)
    }
}

/// Held-out metrics of either kind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Evaluation {
    Regression(RegressionMetrics),
    Classification(ClassificationMetrics),
}

impl Evaluation {
    pub fn log_likelihood(&self) -> f64 {
        match self {
            Evaluation::Regression(m) => m.log_likelihood,
            Evaluation::Classification(m) => m.log_likelihood,
        }
    }
}

pub fn evaluate_ensemble(net: &Network, particles: &[Vec<f64>], data: &Dataset) -> Result<Evaluation> {
    match net.spec().likelihood {
        Likelihood::GaussianRegression => regression_metrics(net, particles, data).map(Evaluation::Regression),
        Likelihood::Categorical => classification_metrics(net, particles, data).map(Evaluation::Classification),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean over the epoch's iterations of the ensemble-mean log posterior.
    pub train_log_posterior: f64,
    pub test: Option<Evaluation>,
}

#[derive(Clone, Debug)]
pub struct SupervisedRun {
    pub net: Network,
    pub ensemble: Ensemble,
    pub rows: Vec<EpochRow>,
}

impl SupervisedRun {
    pub fn metrics_csv(&self) -> String {
        let classify = self.net.spec().likelihood == Likelihood::Categorical;
        let mut out = String::from(if classify {
            "epoch,train_log_posterior,test_accuracy,test_log_likelihood\n"
        } else {
            "epoch,train_log_posterior,test_rmse,test_log_likelihood\n"
        });
        for r in &self.rows {
            let (a, b) = match r.test {
                Some(Evaluation::Regression(m)) => (m.rmse.to_string(), m.log_likelihood.to_string()),
                Some(Evaluation::Classification(m)) => (m.accuracy.to_string(), m.log_likelihood.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!("{},{},{a},{b}\n", r.epoch, r.train_log_posterior));
        }
        out
    }
}

/// Trains an ensemble on `train` for `config.epochs` epochs. Particles are
/// initialised from `(seed, 0)` and minibatches drawn from the same stream.
pub fn train_supervised(
    config: &SupervisedConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<SupervisedRun> {
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let net = config.network(train)?;
    let target = BnnTarget::new(&net, train, config.batch_size)?;
    let per_epoch = target.batches_per_epoch();
    let run = RunConfig {
        particles: config.particles,
        iterations: config.epochs * per_epoch,
        kernel: config.kernel,
        step: config.step,
        log_every: per_epoch * config.log_every.max(1),
    };
    let mut rows = Vec::new();
    let mut acc = 0.0;
    let (ensemble, _) = run_svgd(&target, &run, &mut RngStream::new(seed, 0), |iter, ens, stats| {
        acc += stats.log_posterior_mean;
        if iter % per_epoch != 0 {
            return Ok(());
        }
        let epoch = iter / per_epoch;
        let value = acc / per_epoch as f64;
        acc = 0.0;
        if epoch % config.log_every.max(1) != 0 && epoch != config.epochs {
            return Ok(());
        }
        let test = test.map(|d| evaluate_ensemble(&net, &ens.particles, d)).transpose()?;
        let row = EpochRow {
            epoch,
            train_log_posterior: value,
            test,
        };
        on_epoch(&row);
        rows.push(row);
        Ok(())
    })?;
    Ok(SupervisedRun { net, ensemble, rows })
}

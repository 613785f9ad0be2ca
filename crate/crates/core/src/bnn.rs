//! Feed-forward Bayesian networks built from structured layers.
//!
//! A particle is a flat `Vec<f64>`; [`Layout`] says which slice belongs to
//! which layer and where the observation-noise log-variance lives. Hidden
//! layers apply the activation, the last layer is linear (the softmax of the
//! categorical likelihood lives in the likelihood).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::math::{log_sum_exp, mean, softmax, std_dev, Matrix, RngStream};
use crate::mvg::{HyperPrior, LayerCache, LayerShape, StructuredLayer};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation. ReLU uses 0 at the kink.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// `y ~ N(f(x), γ I)` with `γ ~ InvGamma(a, b)`.
    GaussianRegression,
    /// `y ~ Categorical(softmax(f(x)))`.
    Categorical,
}

/// Whether the per-layer variances `λ, φ, ψ` are sampled along with the
/// weights or held at `prior_variance_init`. The noise variance is always
/// sampled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorScales {
    #[default]
    Learned,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layer_dims: Vec<usize>,
    pub k_per_layer: Vec<usize>,
    pub activation: Activation,
    pub likelihood: Likelihood,
    pub hyper: HyperPrior,
    /// Hyperprior on the regression noise variance `γ`.
    #[serde(default)]
    pub noise_hyper: HyperPrior,
    pub prior_variance_init: f64,
    #[serde(default)]
    pub prior_scales: PriorScales,
    /// Std of the initial core weights and biases.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.05
}

impl NetworkSpec {
    pub fn new(
        layer_dims: Vec<usize>,
        k_per_layer: Vec<usize>,
        activation: Activation,
        likelihood: Likelihood,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            layer_dims,
            k_per_layer,
            activation,
            likelihood,
            hyper: HyperPrior::default(),
            noise_hyper: HyperPrior::default(),
            prior_variance_init: 1.0,
            prior_scales: PriorScales::Learned,
            init_std: default_init_std(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same flow length `k` on every layer, capped at `min(l1, l2)`.
    pub fn with_uniform_k(
        layer_dims: Vec<usize>,
        k: usize,
        activation: Activation,
        likelihood: Likelihood,
    ) -> Result<Self> {
        let ks = layer_dims.windows(2).map(|w| k.min(w[0]).min(w[1])).collect();
        NetworkSpec::new(layer_dims, ks, activation, likelihood)
    }

    pub fn with_hyper(mut self, hyper: HyperPrior) -> Self {
        self.hyper = hyper;
        self
    }

    pub fn with_noise_hyper(mut self, hyper: HyperPrior) -> Self {
        self.noise_hyper = hyper;
        self
    }

    pub fn with_prior_variance_init(mut self, v: f64) -> Self {
        self.prior_variance_init = v;
        self
    }

    pub fn with_prior_scales(mut self, scales: PriorScales) -> Self {
        self.prior_scales = scales;
        self
    }

    pub fn with_init_std(mut self, std: f64) -> Self {
        self.init_std = std;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        ensure_len(self.layer_dims.len() - 1, self.k_per_layer.len(), "flow lengths per layer")?;
        for (w, &k) in self.layer_dims.windows(2).zip(&self.k_per_layer) {
            LayerShape::new(w[0], w[1], k)?;
        }
        HyperPrior::new(self.hyper.a, self.hyper.b)?;
        HyperPrior::new(self.noise_hyper.a, self.noise_hyper.b)?;
        if !(self.prior_variance_init > 0.0) {
            return Err(Error::Config("prior_variance_init must be positive".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be finite and non-negative".into()));
        }
        if self.likelihood == Likelihood::Categorical && self.output_dim() < 2 {
            return Err(Error::Config("categorical likelihood needs at least two outputs".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }
}

/// Segment map of a particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub layers: Vec<LayerSegment>,
    /// Index of `log γ`, regression only.
    pub log_gamma: Option<usize>,
    pub len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSegment {
    pub shape: LayerShape,
    pub offset: usize,
}

impl Layout {
    pub fn for_spec(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.k_per_layer.len());
        let mut offset = 0;
        for (w, &k) in spec.layer_dims.windows(2).zip(&spec.k_per_layer) {
            let shape = LayerShape::new(w[0], w[1], k)?;
            layers.push(LayerSegment { shape, offset });
            offset += shape.len();
        }
        let log_gamma = match spec.likelihood {
            Likelihood::GaussianRegression => {
                offset += 1;
                Some(offset - 1)
            }
            Likelihood::Categorical => None,
        };
        Ok(Layout {
            layers,
            log_gamma,
            len: offset,
        })
    }
}

/// One supervision signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// Full regression target.
    Real(Vec<f64>),
    /// Class index for the categorical likelihood.
    Class(usize),
    /// Regression target on a single output coordinate; the others are
    /// left out of the likelihood.
    Single { index: usize, value: f64 },
}

/// A minibatch with the size of the full dataset for likelihood rescaling.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
    /// Optional per-point weights on the log-likelihood terms.
    pub weights: Option<Vec<f64>>,
    pub n_total: usize,
}

impl Batch {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Target>) -> Result<Self> {
        ensure_len(inputs.len(), targets.len(), "batch targets")?;
        let n_total = inputs.len();
        Ok(Batch {
            inputs,
            targets,
            weights: None,
            n_total,
        })
    }

    pub fn with_n_total(mut self, n_total: usize) -> Self {
        self.n_total = n_total;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        ensure_len(self.inputs.len(), weights.len(), "batch weights")?;
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Ensemble prediction at one input.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Regression {
        mean: Vec<f64>,
        epistemic_std: Vec<f64>,
        total_std: Vec<f64>,
    },
    Classification {
        probs: Vec<f64>,
    },
}

/// A network specification with its resolved layout.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    layout: Layout,
}

struct ForwardTrace {
    caches: Vec<LayerCache>,
    pre_activations: Vec<Matrix>,
    output: Matrix,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let layout = Layout::for_spec(&spec)?;
        Ok(Network { spec, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.len
    }

    pub fn layer<'a>(&self, params: &'a [f64], i: usize) -> Result<StructuredLayer<'a>> {
        let seg = self.layout.layers[i];
        StructuredLayer::new(seg.shape, &params[seg.offset..seg.offset + seg.shape.len()])
    }

    pub fn gamma(&self, params: &[f64]) -> Option<f64> {
        self.layout.log_gamma.map(|i| params[i].exp())
    }

    /// A fresh particle: see [`LayerShape::initialize`]; `log γ` starts at
    /// `log prior_variance_init`.
    pub fn init_particle(&self, stream: &mut RngStream) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.len];
        for seg in &self.layout.layers {
            seg.shape
                .initialize(
                    self.spec.prior_variance_init,
                    self.spec.init_std,
                    stream,
                    &mut out[seg.offset..seg.offset + seg.shape.len()],
                )
                .expect("segment sized by layout");
        }
        if let Some(i) = self.layout.log_gamma {
            out[i] = self.spec.prior_variance_init.ln();
        }
        out
    }

    /// Rescales every Householder vector to unit norm. Outputs and the
    /// likelihood do not depend on these norms, while the Gaussian prior on
    /// the vectors keeps shrinking them; this keeps long runs away from the
    /// degenerate-vector floor.
    pub fn normalize_flows(&self, params: &mut [f64]) {
        for seg in &self.layout.layers {
            let s = seg.shape;
            let start = seg.offset + s.p_offset();
            let p_end = seg.offset + s.q_offset();
            let q_end = seg.offset + s.bias_offset();
            for (range, dim) in [(start..p_end, s.l1), (p_end..q_end, s.l2)] {
                if dim == 0 {
                    continue;
                }
                for v in params[range].chunks_mut(dim) {
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 0.0 && norm.is_finite() {
                        v.iter_mut().for_each(|x| *x /= norm);
                    }
                }
            }
        }
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        ensure_len(self.layout.len, params.len(), "particle length")
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(params, &Matrix::column(x))?.into_vec())
    }

    /// Columns of `x` are inputs; columns of the result are outputs `f(x)`.
    pub fn forward_batch(&self, params: &[f64], x: &Matrix) -> Result<Matrix> {
        Ok(self.trace(params, x)?.output)
    }

    fn trace(&self, params: &[f64], x: &Matrix) -> Result<ForwardTrace> {
        self.check_params(params)?;
        ensure_len(self.spec.input_dim(), x.rows(), "network input width")?;
        let n_layers = self.layout.layers.len();
        let mut caches = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut h = x.clone();
        for i in 0..n_layers {
            let (z, cache) = self.layer(params, i)?.forward_batch(&h)?;
            caches.push(cache);
            if i + 1 < n_layers {
                let act = self.spec.activation;
                h = z.clone();
                for v in h.as_mut_slice() {
                    *v = act.apply(*v);
                }
                pre_activations.push(z);
            } else {
                h = z;
            }
        }
        Ok(ForwardTrace {
            caches,
            pre_activations,
            output: h,
        })
    }

    fn inputs_matrix(&self, batch: &Batch) -> Result<Matrix> {
        Matrix::from_columns(&batch.inputs)
    }

    /// Per-point log-likelihood terms and `∂/∂f`, `∂/∂log γ` for each.
    fn likelihood_terms(&self, params: &[f64], output: &Matrix, batch: &Batch) -> Result<(f64, Matrix, f64)> {
        let n = batch.len();
        let out_dim = self.spec.output_dim();
        let mut d_out = Matrix::zeros(out_dim, n);
        let mut total = 0.0;
        let mut d_log_gamma = 0.0;
        let log_gamma = self.layout.log_gamma.map(|i| params[i]);
        for (c, target) in batch.targets.iter().enumerate() {
            let w = batch.weights.as_ref().map_or(1.0, |ws| ws[c]);
            let f = output.col(c);
            let d = d_out.col_mut(c);
            match (self.spec.likelihood, target) {
                (Likelihood::GaussianRegression, Target::Real(y)) => {
                    ensure_len(out_dim, y.len(), "regression target width")?;
                    let lg = log_gamma.expect("regression layout has log gamma");
                    let inv = (-lg).exp();
                    for k in 0..out_dim {
                        let r = y[k] - f[k];
                        total += w * (-0.5 * (LN_2PI + lg) - 0.5 * r * r * inv);
                        d[k] = w * r * inv;
                        d_log_gamma += w * (-0.5 + 0.5 * r * r * inv);
                    }
                }
                (Likelihood::GaussianRegression, Target::Single { index, value }) => {
                    if *index >= out_dim {
                        return Err(Error::ClassOutOfRange {
                            index: *index,
                            classes: out_dim,
                        });
                    }
                    let lg = log_gamma.expect("regression layout has log gamma");
                    let inv = (-lg).exp();
                    let r = value - f[*index];
                    total += w * (-0.5 * (LN_2PI + lg) - 0.5 * r * r * inv);
                    d[*index] = w * r * inv;
                    d_log_gamma += w * (-0.5 + 0.5 * r * r * inv);
                }
                (Likelihood::Categorical, Target::Class(cls)) => {
                    if *cls >= out_dim {
                        return Err(Error::ClassOutOfRange {
                            index: *cls,
                            classes: out_dim,
                        });
                    }
                    let lse = log_sum_exp(f);
                    total += w * (f[*cls] - lse);
                    for k in 0..out_dim {
                        let p = (f[k] - lse).exp();
                        d[k] = w * (if k == *cls { 1.0 } else { 0.0 } - p);
                    }
                }
                (Likelihood::GaussianRegression, Target::Class(_)) => {
                    return Err(Error::TargetKind("class target under a regression likelihood"))
                }
                (Likelihood::Categorical, _) => {
                    return Err(Error::TargetKind("real target under a categorical likelihood"))
                }
            }
        }
        Ok((total, d_out, d_log_gamma))
    }

    /// Sum of per-point log-likelihoods (weighted when the batch has weights).
    pub fn log_likelihood(&self, params: &[f64], batch: &Batch) -> Result<f64> {
        let output = self.forward_batch(params, &self.inputs_matrix(batch)?)?;
        Ok(self.likelihood_terms(params, &output, batch)?.0)
    }

    /// Log-likelihood of the batch and its exact gradient.
    pub fn log_likelihood_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.layout.len];
        let value = self.accumulate_likelihood(params, batch, 1.0, &mut grad)?;
        Ok((value, grad))
    }

    fn accumulate_likelihood(&self, params: &[f64], batch: &Batch, scale: f64, grad: &mut [f64]) -> Result<f64> {
        let trace = self.trace(params, &self.inputs_matrix(batch)?)?;
        let (value, mut upstream, d_log_gamma) = self.likelihood_terms(params, &trace.output, batch)?;
        if scale != 1.0 {
            for v in upstream.as_mut_slice() {
                *v *= scale;
            }
        }
        if let Some(i) = self.layout.log_gamma {
            grad[i] += scale * d_log_gamma;
        }
        for i in (0..self.layout.layers.len()).rev() {
            let seg = self.layout.layers[i];
            let layer = self.layer(params, i)?;
            let down = layer.backward(
                &trace.caches[i],
                &upstream,
                &mut grad[seg.offset..seg.offset + seg.shape.len()],
            )?;
            if i == 0 {
                break;
            }
            upstream = down;
            let act = self.spec.activation;
            for (u, &z) in upstream
                .as_mut_slice()
                .iter_mut()
                .zip(trace.pre_activations[i - 1].as_slice())
            {
                *u *= act.derivative(z);
            }
        }
        Ok(value)
    }

    /// Log prior of every layer plus the noise hyperprior, with gradient.
    pub fn log_prior_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_params(params)?;
        let mut grad = vec![0.0; self.layout.len];
        let value = self.accumulate_prior(params, &mut grad)?;
        Ok((value, grad))
    }

    fn accumulate_prior(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        let mut value = 0.0;
        for (i, seg) in self.layout.layers.iter().enumerate() {
            let layer = self.layer(params, i)?;
            let g = &mut grad[seg.offset..seg.offset + seg.shape.len()];
            value += layer.log_prior_grad(&self.spec.hyper, g);
            if self.spec.prior_scales == PriorScales::Fixed {
                let s = seg.shape.log_lambda_offset();
                g[s..s + 3].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        if let Some(i) = self.layout.log_gamma {
            let (v, g) = self.spec.noise_hyper.log_density_of_log_scale(params[i]);
            value += v;
            grad[i] += g;
        }
        Ok(value)
    }

    /// `(n_total / |batch|) log p(batch | θ) + log p(θ)` and its gradient.
    pub fn log_posterior_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Dataset("empty minibatch".into()));
        }
        self.check_params(params)?;
        let scale = batch.n_total as f64 / batch.len() as f64;
        let mut grad = vec![0.0; self.layout.len];
        let ll = if scale == 0.0 {
            0.0
        } else {
            self.accumulate_likelihood(params, batch, scale, &mut grad)?
        };
        let prior = self.accumulate_prior(params, &mut grad)?;
        let value = scale * ll + prior;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("log posterior"));
        }
        Ok((value, grad))
    }

    /// Model-averaged prediction over the particles.
    pub fn predict_ensemble<P: AsRef<[f64]>>(&self, particles: &[P], x: &[f64]) -> Result<Prediction> {
        if particles.is_empty() {
            return Err(Error::Config("empty ensemble".into()));
        }
        let outputs = particles
            .iter()
            .map(|p| self.forward(p.as_ref(), x))
            .collect::<Result<Vec<_>>>()?;
        let out_dim = self.spec.output_dim();
        match self.spec.likelihood {
            Likelihood::GaussianRegression => {
                let noise = mean(
                    &particles
                        .iter()
                        .map(|p| self.gamma(p.as_ref()).expect("regression"))
                        .collect::<Vec<_>>(),
                );
                let mut m = Vec::with_capacity(out_dim);
                let mut epi = Vec::with_capacity(out_dim);
                let mut tot = Vec::with_capacity(out_dim);
                for k in 0..out_dim {
                    let col: Vec<f64> = outputs.iter().map(|o| o[k]).collect();
                    let s = std_dev(&col);
                    m.push(mean(&col));
                    epi.push(s);
                    tot.push((s * s + noise).sqrt());
                }
                Ok(Prediction::Regression {
                    mean: m,
                    epistemic_std: epi,
                    total_std: tot,
                })
            }
            Likelihood::Categorical => {
                let mut probs = vec![0.0; out_dim];
                for o in &outputs {
                    for (p, q) in probs.iter_mut().zip(softmax(o)) {
                        *p += q;
                    }
                }
                let m = particles.len() as f64;
                probs.iter_mut().for_each(|p| *p /= m);
                Ok(Prediction::Classification { probs })
            }
        }
    }
}

/// Serialized ensemble: network shape, layout and one value array per particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub layout: Layout,
    pub particles: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(net: &Network, particles: Vec<Vec<f64>>) -> Result<Self> {
        for p in &particles {
            ensure_len(net.dim(), p.len(), "checkpoint particle")?;
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("checkpoint particle"));
            }
        }
        Ok(Checkpoint {
            spec: net.spec().clone(),
            layout: net.layout().clone(),
            particles,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        let layout = Layout::for_spec(&ck.spec)?;
        if layout != ck.layout {
            return Err(Error::Config("checkpoint layout does not match its spec".into()));
        }
        for p in &ck.particles {
            ensure_len(layout.len, p.len(), "checkpoint particle")?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn network(&self) -> Result<Network> {
        Network::new(self.spec.clone())
    }
}

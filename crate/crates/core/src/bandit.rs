//! Contextual bandits: environments, a replay buffer, Thompson sampling over
//! a particle ensemble and ε-greedy point-estimate baselines.
//!
//! The agent's network maps a context to one expected reward per action.
//! Only the played action's output enters the likelihood.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bnn::{Activation, Batch, Likelihood, Network, NetworkSpec, PriorScales, Target as Label};
use crate::data::{load_csv, CsvSchema, TargetKind};
use crate::error::{Error, Result};
use crate::math::{argmax, RngStream};
use crate::mvg::HyperPrior;
use crate::svgd::{init_ensemble, svgd_iteration, Ensemble, KernelConfig, StepConfig, Target};

/// An observed context. `key` lets an environment recover hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub features: Vec<f64>,
    pub key: usize,
}

pub trait BanditEnv: Sync {
    fn context_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn sample_context(&self, stream: &mut RngStream) -> Context;
    fn reward(&self, context: &Context, action: usize, stream: &mut RngStream) -> f64;
    fn oracle_expected_reward(&self, context: &Context, action: usize) -> f64;
}

pub const EAT: usize = 0;
pub const SKIP: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MushroomRewards {
    pub edible: f64,
    pub poisonous_bad: f64,
    pub poisonous_good: f64,
    /// Probability that eating a poisonous mushroom goes badly.
    pub poisonous_bad_prob: f64,
}

impl Default for MushroomRewards {
    fn default() -> Self {
        MushroomRewards {
            edible: 5.0,
            poisonous_bad: -10.0,
            poisonous_good: 5.0,
            poisonous_bad_prob: 0.5,
        }
    }
}

/// Eat-or-skip over a table of mushrooms.
#[derive(Clone, Debug, PartialEq)]
pub struct MushroomEnv {
    pub features: Vec<Vec<f64>>,
    pub poisonous: Vec<bool>,
    pub rewards: MushroomRewards,
}

impl MushroomEnv {
    pub fn new(features: Vec<Vec<f64>>, poisonous: Vec<bool>) -> Result<Self> {
        if features.is_empty() || features.len() != poisonous.len() {
            return Err(Error::Dataset("mushroom table needs matching, nonempty rows".into()));
        }
        Ok(MushroomEnv {
            features,
            poisonous,
            rewards: MushroomRewards::default(),
        })
    }

    /// `rows` random binary feature vectors of width `width` (at least 4).
    /// A mushroom is poisonous iff `(x0 ∧ x1) ∨ (x2 ∧ ¬x3)`.
    pub fn synthetic(rows: usize, width: usize, stream: &mut RngStream) -> Result<Self> {
        if width < 4 {
            return Err(Error::Config("synthetic mushrooms need at least 4 features".into()));
        }
        let mut features = Vec::with_capacity(rows);
        let mut poisonous = Vec::with_capacity(rows);
        for _ in 0..rows {
            let x: Vec<f64> = (0..width).map(|_| if stream.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
            let on = |i: usize| x[i] == 1.0;
            poisonous.push((on(0) && on(1)) || (on(2) && !on(3)));
            features.push(x);
        }
        MushroomEnv::new(features, poisonous)
    }

    /// The UCI table layout: no header, class letter (`e`/`p`) in the first
    /// column, every other column categorical and one-hot encoded.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let peek = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::Data {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .records()
            .next()
            .transpose()
            .map_err(|e| Error::Data {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .map_or(0, |r| r.len());
        let mut schema = CsvSchema::new("0", TargetKind::Class);
        schema.has_header = false;
        schema.categorical_columns = (1..peek).map(|c| c.to_string()).collect();
        let d = load_csv(path, &schema)?;
        let poison_class = d.class_labels.iter().position(|l| l == "p").ok_or_else(|| Error::Data {
            path: path.to_path_buf(),
            message: "no 'p' (poisonous) labels in the first column".into(),
        })?;
        let poisonous = d.targets.iter().map(|t| *t == Label::Class(poison_class)).collect();
        MushroomEnv::new(d.inputs, poisonous)
    }
}

impl BanditEnv for MushroomEnv {
    fn context_dim(&self) -> usize {
        self.features[0].len()
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn sample_context(&self, stream: &mut RngStream) -> Context {
        let key = stream.index(self.features.len());
        Context {
            features: self.features[key].clone(),
            key,
        }
    }

    fn reward(&self, context: &Context, action: usize, stream: &mut RngStream) -> f64 {
        let r = &self.rewards;
        match (action, self.poisonous[context.key]) {
            (EAT, false) => r.edible,
            (EAT, true) => {
                if stream.bernoulli(r.poisonous_bad_prob) {
                    r.poisonous_bad
                } else {
                    r.poisonous_good
                }
            }
            _ => 0.0,
        }
    }

    fn oracle_expected_reward(&self, context: &Context, action: usize) -> f64 {
        let r = &self.rewards;
        match (action, self.poisonous[context.key]) {
            (EAT, false) => r.edible,
            (EAT, true) => r.poisonous_bad_prob * r.poisonous_bad + (1.0 - r.poisonous_bad_prob) * r.poisonous_good,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub context: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

/// Fixed-capacity FIFO of observations.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    records: VecDeque<Record>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, record: Record) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Record {
        &self.records[i]
    }

    /// Up to `n` distinct records drawn uniformly.
    pub fn sample(&self, n: usize, stream: &mut RngStream) -> Vec<&Record> {
        let len = self.records.len();
        if n >= len {
            return self.records.iter().collect();
        }
        let mut idx: Vec<usize> = (0..len).collect();
        for i in 0..n {
            let j = i + stream.index(len - i);
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| &self.records[i]).collect()
    }
}

/// Reward-head posterior over the buffer contents.
struct BufferTarget<'a> {
    net: &'a Network,
    buffer: &'a ReplayBuffer,
    batch_size: usize,
}

impl Target for BufferTarget<'_> {
    type Batch = Batch;

    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn init_particle(&self, stream: &mut RngStream) -> Vec<f64> {
        self.net.init_particle(stream)
    }

    fn sample_batch(&self, stream: &mut RngStream) -> Batch {
        let picked = self.buffer.sample(self.batch_size, stream);
        Batch {
            inputs: picked.iter().map(|r| r.context.clone()).collect(),
            targets: picked
                .iter()
                .map(|r| Label::Single {
                    index: r.action,
                    value: r.reward,
                })
                .collect(),
            weights: None,
            n_total: self.buffer.len(),
        }
    }

    fn log_density_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.net.log_posterior_grad(theta, batch)
    }
    fn project(&self, theta: &mut [f64]) {
        self.net.normalize_flows(theta);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Method {
    SteinThompson,
    Greedy,
    EpsGreedy(f64),
}

impl Method {
    fn epsilon(&self) -> Option<f64> {
        match *self {
            Method::SteinThompson => None,
            Method::Greedy => Some(0.0),
            Method::EpsGreedy(e) => Some(e),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::SteinThompson => write!(f, "stein_thompson"),
            Method::Greedy => write!(f, "greedy"),
            Method::EpsGreedy(e) => write!(f, "eps_greedy:{e}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stein_thompson" => Ok(Method::SteinThompson),
            "greedy" => Ok(Method::Greedy),
            _ => {
                let e = s
                    .strip_prefix("eps_greedy:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown bandit method '{s}'")))?;
                if !(0.0..=1.0).contains(&e) {
                    return Err(Error::Config("ε must lie in [0, 1]".into()));
                }
                Ok(Method::EpsGreedy(e))
            }
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    pub hidden: Vec<usize>,
    pub particles: usize,
    pub k: usize,
    pub steps: usize,
    pub n_update: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub step: StepConfig,
    pub kernel: KernelConfig,
    pub hyper: HyperPrior,
    pub prior_variance_init: f64,
    pub prior_scales: PriorScales,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            hidden: vec![50],
            particles: 20,
            k: 1,
            steps: 5000,
            n_update: 4,
            batch_size: 64,
            buffer_capacity: 4096,
            step: StepConfig {
                epsilon: 2e-3,
                ..StepConfig::default()
            },
            kernel: KernelConfig::default(),
            hyper: HyperPrior::default(),
            prior_variance_init: 1.0,
            prior_scales: PriorScales::Fixed,
        }
    }
}

impl BanditConfig {
    pub fn network(&self, env: &dyn BanditEnv) -> Result<Network> {
        let mut dims = vec![env.context_dim()];
        dims.extend(&self.hidden);
        dims.push(env.n_actions());
        let spec = NetworkSpec::with_uniform_k(dims, self.k, Activation::Relu, Likelihood::GaussianRegression)?
            .with_hyper(self.hyper)
            .with_prior_variance_init(self.prior_variance_init)
            .with_prior_scales(self.prior_scales);
        Network::new(spec)
    }
}

/// Action of a particle drawn uniformly from the ensemble.
pub fn choose_thompson(net: &Network, particles: &[Vec<f64>], context: &[f64], stream: &mut RngStream) -> Result<usize> {
    let i = stream.index(particles.len());
    Ok(argmax(&net.forward(&particles[i], context)?))
}

/// ε-greedy over predicted rewards; also reports whether it explored.
pub fn choose_epsilon_greedy(values: &[f64], epsilon: f64, stream: &mut RngStream) -> (usize, bool) {
    if stream.uniform() < epsilon {
        (stream.index(values.len()), true)
    } else {
        (argmax(values), false)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub cumulative_reward: f64,
    pub cumulative_regret: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditRun {
    pub rows: Vec<StepRow>,
    pub ensemble: Ensemble,
}

impl BanditRun {
    pub const HEADER: &'static str = "step,action,reward,cumulative_reward,cumulative_regret";

    pub fn final_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative_regret)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.action, r.reward, r.cumulative_reward, r.cumulative_regret
            ));
        }
        out
    }
}

/// Running sum of oracle gaps between the best action and the played one.
pub fn cumulative_regret(env: &dyn BanditEnv, trace: &[(Context, usize)]) -> Vec<f64> {
    let mut total = 0.0;
    trace
        .iter()
        .map(|(ctx, a)| {
            let best = (0..env.n_actions())
                .map(|b| env.oracle_expected_reward(ctx, b))
                .fold(f64::NEG_INFINITY, f64::max);
            total += (best - env.oracle_expected_reward(ctx, *a)).max(0.0);
            total
        })
        .collect()
}

/// The interaction loop. Contexts come from stream 1 of `seed` and the
/// reward at step `t` from stream 2 forked at `t`, so every method sees the
/// same context sequence.
pub fn run_bandit(
    env: &dyn BanditEnv,
    method: Method,
    config: &BanditConfig,
    seed: u64,
    mut on_step: impl FnMut(&StepRow),
) -> Result<BanditRun> {
    config.step.validate()?;
    let net = config.network(env)?;
    let m = match method {
        Method::SteinThompson => config.particles.max(1),
        _ => 1,
    };
    let mut context_stream = RngStream::new(seed, 1);
    let reward_stream = RngStream::new(seed, 2);
    let mut agent_stream = RngStream::new(seed, 3);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut ensemble = {
        let target = BufferTarget {
            net: &net,
            buffer: &buffer,
            batch_size: config.batch_size,
        };
        init_ensemble(&target, m, &RngStream::new(seed, 4))?
    };

    let mut rows = Vec::with_capacity(config.steps);
    let mut cum_reward = 0.0;
    let mut cum_regret = 0.0;
    for t in 0..config.steps {
        let ctx = env.sample_context(&mut context_stream);
        let action = match method.epsilon() {
            None => choose_thompson(&net, &ensemble.particles, &ctx.features, &mut agent_stream)?,
            Some(eps) => {
                let values = net.forward(&ensemble.particles[0], &ctx.features)?;
                choose_epsilon_greedy(&values, eps, &mut agent_stream).0
            }
        };
        let reward = env.reward(&ctx, action, &mut reward_stream.fork(t as u64));
        cum_reward += reward;
        cum_regret += cumulative_regret(env, &[(ctx.clone(), action)])[0];
        buffer.push(Record {
            context: ctx.features,
            action,
            reward,
        });
        let target = BufferTarget {
            net: &net,
            buffer: &buffer,
            batch_size: config.batch_size,
        };
        for _ in 0..config.n_update {
            svgd_iteration(&target, &mut ensemble, &config.kernel, &config.step, &mut agent_stream, false)?;
        }
        let row = StepRow {
            step: t + 1,
            action,
            reward,
            cumulative_reward: cum_reward,
            cumulative_regret: cum_regret,
        };
        on_step(&row);
        rows.push(row);
    }
    Ok(BanditRun { rows, ensemble })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    struct OneArm;

    impl BanditEnv for OneArm {
        fn context_dim(&self) -> usize {
            2
        }
        fn n_actions(&self) -> usize {
            1
        }
        fn sample_context(&self, stream: &mut RngStream) -> Context {
            Context {
                features: vec![stream.normal(), stream.normal()],
                key: 0,
            }
        }
        fn reward(&self, _: &Context, _: usize, stream: &mut RngStream) -> f64 {
            stream.normal()
        }
        fn oracle_expected_reward(&self, _: &Context, _: usize) -> f64 {
            0.0
        }
    }

    /// Two arms whose oracle gap depends on the context key.
    struct Toy;

    impl BanditEnv for Toy {
        fn context_dim(&self) -> usize {
            1
        }
        fn n_actions(&self) -> usize {
            2
        }
        fn sample_context(&self, _: &mut RngStream) -> Context {
            unreachable!()
        }
        fn reward(&self, _: &Context, _: usize, _: &mut RngStream) -> f64 {
            unreachable!()
        }
        fn oracle_expected_reward(&self, c: &Context, a: usize) -> f64 {
            if a == c.key {
                1.0
            } else {
                0.0
            }
        }
    }

    fn small_config(steps: usize) -> BanditConfig {
        BanditConfig {
            hidden: vec![8],
            particles: 4,
            steps,
            n_update: 2,
            batch_size: 16,
            ..BanditConfig::default()
        }
    }

    fn toy_env() -> MushroomEnv {
        MushroomEnv::synthetic(200, 6, &mut RngStream::new(99, 0)).unwrap()
    }

    #[test]
    fn mushroom_rewards() {
        let env = toy_env();
        let edible = env.poisonous.iter().position(|p| !p).unwrap();
        let poison = env.poisonous.iter().position(|p| *p).unwrap();
        let ctx = |key: usize| Context {
            features: env.features[key].clone(),
            key,
        };
        let mut s = RngStream::new(1, 0);
        assert_eq!(env.reward(&ctx(edible), EAT, &mut s), 5.0);
        assert_eq!(env.reward(&ctx(edible), SKIP, &mut s), 0.0);
        assert_eq!(env.reward(&ctx(poison), SKIP, &mut s), 0.0);
        let n = 100_000;
        let total: f64 = (0..n).map(|_| env.reward(&ctx(poison), EAT, &mut s)).sum();
        assert!((total / n as f64 + 2.5).abs() < 0.15);
        assert_eq!(env.oracle_expected_reward(&ctx(edible), EAT), 5.0);
        assert_eq!(env.oracle_expected_reward(&ctx(poison), EAT), -2.5);
        assert_eq!(env.oracle_expected_reward(&ctx(poison), SKIP), 0.0);
        assert_eq!(env.oracle_expected_reward(&ctx(edible), SKIP), 0.0);
    }

    #[test]
    fn synthetic_rule_is_planted() {
        let env = toy_env();
        for (x, &p) in env.features.iter().zip(&env.poisonous) {
            assert_eq!(p, (x[0] == 1.0 && x[1] == 1.0) || (x[2] == 1.0 && x[3] == 0.0));
            assert!(x.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn uci_style_csv() {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"p,x,s\ne,x,y\ne,b,s\np,x,y\n").unwrap();
        let env = MushroomEnv::from_csv(f.path()).unwrap();
        assert_eq!(env.poisonous, vec![true, false, false, true]);
        assert_eq!(env.features[0], vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(env.features[2], vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn replay_buffer_is_fifo() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(Record {
                context: vec![i as f64],
                action: 0,
                reward: 0.0,
            });
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).context, vec![2.0]);
        assert_eq!(b.get(2).context, vec![4.0]);
        let mut s = RngStream::new(2, 0);
        assert_eq!(b.sample(10, &mut s).len(), 3);
        let two = b.sample(2, &mut s);
        assert_ne!(two[0], two[1]);
    }

    #[test]
    fn thompson_picks_the_argmax_of_the_drawn_particle() {
        // one linear layer, K = 0: outputs equal the bias
        let spec = NetworkSpec::new(vec![2, 3], vec![0], Activation::Relu, Likelihood::GaussianRegression).unwrap();
        let net = Network::new(spec).unwrap();
        let mut p = vec![0.0; net.dim()];
        let bias = net.layout().layers[0].shape.bias_offset();
        p[bias..bias + 3].copy_from_slice(&[2.0, 7.0, 1.0]);
        let mut s = RngStream::new(3, 0);
        assert_eq!(choose_thompson(&net, &[p.clone()], &[0.4, -1.0], &mut s).unwrap(), 1);
        // positive affine rescaling of the outputs keeps the choice
        let mut q = p.clone();
        for v in &mut q[bias..bias + 3] {
            *v = 3.0 * *v - 11.0;
        }
        assert_eq!(choose_thompson(&net, &[q], &[0.4, -1.0], &mut s).unwrap(), 1);
    }

    #[test]
    fn single_action_env_always_plays_it() {
        let run = run_bandit(&OneArm, Method::SteinThompson, &small_config(20), 4, |_| {}).unwrap();
        assert!(run.rows.iter().all(|r| r.action == 0));
        assert_eq!(run.final_regret(), 0.0);
    }

    #[test]
    fn buffer_grows_by_one_per_step() {
        let env = toy_env();
        let mut lens = Vec::new();
        let mut buffer = ReplayBuffer::new(4096);
        let mut s = RngStream::new(5, 0);
        for _ in 0..10 {
            let ctx = env.sample_context(&mut s);
            buffer.push(Record {
                context: ctx.features,
                action: EAT,
                reward: 1.0,
            });
            lens.push(buffer.len());
        }
        assert_eq!(lens, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn epsilon_greedy_extremes() {
        let mut s = RngStream::new(6, 0);
        let values = [0.1, 0.9, -0.3, 0.5];
        assert!((0..1000).all(|_| choose_epsilon_greedy(&values, 0.0, &mut s).0 == 1));

        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[choose_epsilon_greedy(&values, 1.0, &mut s).0] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 {chi2}, p {p}");

        let explored = (0..n).filter(|_| choose_epsilon_greedy(&values, 0.03, &mut s).1).count();
        assert!((explored as f64 / n as f64 - 0.03).abs() < 0.01);
    }

    #[test]
    fn regret_hand_example() {
        let trace: Vec<(Context, usize)> = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 1)]
            .iter()
            .map(|&(key, a)| {
                (
                    Context {
                        features: vec![0.0],
                        key,
                    },
                    a,
                )
            })
            .collect();
        assert_eq!(cumulative_regret(&Toy, &trace), vec![0.0, 1.0, 1.0, 2.0, 3.0]);
        let optimal: Vec<_> = trace.iter().map(|(c, _)| (c.clone(), c.key)).collect();
        assert!(cumulative_regret(&Toy, &optimal).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("stein_thompson".parse::<Method>().unwrap(), Method::SteinThompson);
        assert_eq!("greedy".parse::<Method>().unwrap(), Method::Greedy);
        assert_eq!("eps_greedy:0.03".parse::<Method>().unwrap(), Method::EpsGreedy(0.03));
        assert!("eps_greedy:1.5".parse::<Method>().is_err());
        assert!("ucb".parse::<Method>().is_err());
        assert_eq!(Method::EpsGreedy(0.03).to_string(), "eps_greedy:0.03");
    }

    #[test]
    fn greedy_equals_eps_greedy_zero() {
        let env = toy_env();
        let cfg = small_config(30);
        let a = run_bandit(&env, Method::Greedy, &cfg, 7, |_| {}).unwrap();
        let b = run_bandit(&env, Method::EpsGreedy(0.0), &cfg, 7, |_| {}).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn runs_are_reproducible() {
        let env = toy_env();
        let cfg = small_config(30);
        let a = run_bandit(&env, Method::SteinThompson, &cfg, 8, |_| {}).unwrap();
        let b = run_bandit(&env, Method::SteinThompson, &cfg, 8, |_| {}).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.ensemble, b.ensemble);
        assert!(a.rows.windows(2).all(|w| w[1].cumulative_regret >= w[0].cumulative_regret));
    }

    proptest! {
        #[test]
        fn regret_is_monotone(actions in prop::collection::vec((0usize..2, 0usize..2), 1..50)) {
            let trace: Vec<_> = actions
                .iter()
                .map(|&(key, a)| (Context { features: vec![0.0], key }, a))
                .collect();
            let r = cumulative_regret(&Toy, &trace);
            prop_assert!(r[0] >= 0.0);
            prop_assert!(r.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}

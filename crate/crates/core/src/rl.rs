//! Episodic control: CartPole, REINFORCE with a time-indexed baseline and
//! the tempered Stein update of a policy ensemble.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnn::{Activation, Batch, Likelihood, Network, NetworkSpec, PriorScales, Target};
use crate::error::{Error, Result};
use crate::math::{mean, softmax, std_dev, RngStream};
use crate::mvg::HyperPrior;
use crate::svgd::{ksd_diagnostic, median_bandwidth, svgd_update, Ensemble, KernelConfig, StepConfig};

pub trait EpisodicEnv: Sync {
    type State: Clone + Send;

    fn state_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&self, stream: &mut RngStream) -> Self::State;
    fn observe(&self, state: &Self::State) -> Vec<f64>;
    /// `(next_state, reward, done)`.
    fn step(&self, state: &Self::State, action: usize, stream: &mut RngStream) -> (Self::State, f64, bool);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPole {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub force: f64,
    pub tau: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
    pub horizon: usize,
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            tau: 0.02,
            angle_limit: 12.0_f64.to_radians(),
            position_limit: 2.4,
            horizon: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub t: usize,
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

impl CartPole {
    pub fn out_of_bounds(&self, s: &CartPoleState) -> bool {
        s.x.abs() > self.position_limit || s.theta.abs() > self.angle_limit
    }
}

impl EpisodicEnv for CartPole {
    type State = CartPoleState;

    fn state_dim(&self) -> usize {
        4
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&self, stream: &mut RngStream) -> CartPoleState {
        let mut u = || stream.uniform_range(-0.05, 0.05);
        CartPoleState {
            x: u(),
            x_dot: u(),
            theta: u(),
            theta_dot: u(),
            t: 0,
        }
    }

    fn observe(&self, s: &CartPoleState) -> Vec<f64> {
        vec![s.x, s.x_dot, s.theta, s.theta_dot]
    }

    /// One explicit Euler step; the stream is unused.
    fn step(&self, s: &CartPoleState, action: usize, _stream: &mut RngStream) -> (CartPoleState, f64, bool) {
        let force = if action == RIGHT { self.force } else { -self.force };
        let total_mass = self.cart_mass + self.pole_mass;
        let pm_len = self.pole_mass * self.half_length;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + pm_len * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc =
            (self.gravity * sin - cos * temp) / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pm_len * theta_acc * cos / total_mass;
        let next = CartPoleState {
            x: s.x + self.tau * s.x_dot,
            x_dot: s.x_dot + self.tau * x_acc,
            theta: s.theta + self.tau * s.theta_dot,
            theta_dot: s.theta_dot + self.tau * theta_acc,
            t: s.t + 1,
        };
        let done = self.out_of_bounds(&next) || self.out_of_bounds(s) || next.t >= self.horizon;
        (next, 1.0, done)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// `G_t = r_t + γ G_{t+1}` from the end.
pub fn discounted_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + discount * g;
        out[t] = g;
    }
    out
}

/// Action probabilities of a policy particle.
pub fn policy(net: &Network, particle: &[f64], observation: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&net.forward(particle, observation)?))
}

/// Runs `n_episodes` episodes under the softmax policy of `particle`.
pub fn collect_trajectories<E: EpisodicEnv>(
    net: &Network,
    particle: &[f64],
    env: &E,
    n_episodes: usize,
    discount: f64,
    stream: &mut RngStream,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut state = env.reset(stream);
        let mut tr = Trajectory {
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            returns: Vec::new(),
        };
        loop {
            let obs = env.observe(&state);
            let probs = policy(net, particle, &obs)?;
            let action = stream.categorical(&probs);
            let (next, reward, done) = env.step(&state, action, stream);
            tr.observations.push(obs);
            tr.actions.push(action);
            tr.rewards.push(reward);
            state = next;
            if done {
                break;
            }
        }
        tr.returns = discounted_returns(&tr.rewards, discount);
        out.push(tr);
    }
    Ok(out)
}

/// Mean return at each time index over the episodes; missing steps count
/// as zero.
pub fn time_baseline(trajectories: &[Trajectory]) -> Vec<f64> {
    let horizon = trajectories.iter().map(Trajectory::len).max().unwrap_or(0);
    let mut b = vec![0.0; horizon];
    for tr in trajectories {
        for (x, g) in b.iter_mut().zip(&tr.returns) {
            *x += g;
        }
    }
    let n = trajectories.len().max(1) as f64;
    b.iter_mut().for_each(|x| *x /= n);
    b
}

#[derive(Clone, Debug, PartialEq)]
pub enum Baseline {
    None,
    Constant(f64),
    TimeIndexed,
}

/// `(1/n) Σ_episodes Σ_t ∇log π(a_t|s_t) (G_t − b_t)`.
pub fn estimate_policy_gradient(
    net: &Network,
    particle: &[f64],
    trajectories: &[Trajectory],
    baseline: &Baseline,
) -> Result<Vec<f64>> {
    if trajectories.is_empty() {
        return Err(Error::Config("no trajectories to estimate a gradient from".into()));
    }
    let b = match baseline {
        Baseline::TimeIndexed => time_baseline(trajectories),
        _ => Vec::new(),
    };
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for tr in trajectories {
        for t in 0..tr.len() {
            let adv = tr.returns[t]
                - match baseline {
                    Baseline::None => 0.0,
                    Baseline::Constant(c) => *c,
                    Baseline::TimeIndexed => b[t],
                };
            if adv == 0.0 {
                continue;
            }
            inputs.push(tr.observations[t].clone());
            targets.push(Target::Class(tr.actions[t]));
            weights.push(adv);
        }
    }
    if inputs.is_empty() {
        return Ok(vec![0.0; net.dim()]);
    }
    let batch = Batch::new(inputs, targets)?.with_weights(weights)?;
    let (_, mut grad) = net.log_likelihood_grad(particle, &batch)?;
    let n = trajectories.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}

/// `J_i / α + ∇log p(θ_i)` for every particle.
pub fn tempered_scores(j_grads: &[Vec<f64>], prior_grads: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    j_grads
        .iter()
        .zip(prior_grads)
        .map(|(j, p)| j.iter().zip(p).map(|(j, p)| j / alpha + p).collect())
        .collect()
}

/// One Stein move on the tempered objective. Returns the bandwidth used.
pub fn stein_policy_update(
    ensemble: &mut Ensemble,
    j_grads: &[Vec<f64>],
    prior_grads: &[Vec<f64>],
    alpha: f64,
    kernel: &KernelConfig,
    step: &StepConfig,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    svgd_update(ensemble, &tempered_scores(j_grads, prior_grads, alpha), kernel, step)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub hidden: Vec<usize>,
    pub particles: usize,
    pub k: usize,
    pub alpha: f64,
    pub discount: f64,
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub step: StepConfig,
    pub kernel: KernelConfig,
    pub hyper: HyperPrior,
    pub prior_variance_init: f64,
    pub prior_scales: PriorScales,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            hidden: vec![25, 10],
            particles: 8,
            k: 1,
            alpha: 10.0,
            discount: 0.99,
            iterations: 100,
            episodes_per_iter: 10,
            step: StepConfig {
                epsilon: 1e-2,
                ..StepConfig::default()
            },
            kernel: KernelConfig::default(),
            hyper: HyperPrior::default(),
            prior_variance_init: 10.0,
            prior_scales: PriorScales::Fixed,
        }
    }
}

impl RlConfig {
    pub fn network<E: EpisodicEnv>(&self, env: &E) -> Result<Network> {
        let mut dims = vec![env.state_dim()];
        dims.extend(&self.hidden);
        dims.push(env.n_actions());
        let spec = NetworkSpec::with_uniform_k(dims, self.k, Activation::Tanh, Likelihood::Categorical)?
            .with_hyper(self.hyper)
            .with_prior_variance_init(self.prior_variance_init)
            .with_prior_scales(self.prior_scales);
        Network::new(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlRow {
    pub iteration: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub ksd: Option<f64>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlRun {
    pub rows: Vec<RlRow>,
    pub ensemble: Ensemble,
}

impl RlRun {
    pub const HEADER: &'static str = "iteration,mean_return,std_return,ksd,alpha";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let ksd = r.ksd.map_or(String::new(), |k| k.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.mean_return, r.std_return, ksd, r.alpha
            ));
        }
        out
    }
}

/// Policy-ensemble training. Episodes of particle `i` at iteration `t` use
/// stream `(seed, 1)` forked at `t` then `i`, so collection can run in
/// parallel without changing results. Returns are undiscounted episode
/// totals over every particle's episodes.
pub fn run_rl<E: EpisodicEnv>(
    env: &E,
    config: &RlConfig,
    seed: u64,
    mut on_iter: impl FnMut(&RlRow),
) -> Result<RlRun> {
    config.step.validate()?;
    if config.particles == 0 || config.episodes_per_iter == 0 {
        return Err(Error::Config("need at least one particle and one episode".into()));
    }
    let net = config.network(env)?;
    let mut ensemble = Ensemble::new(
        (0..config.particles)
            .map(|i| net.init_particle(&mut RngStream::new(seed, 2).fork(i as u64)))
            .collect(),
    )?;
    let episodes = RngStream::new(seed, 1);
    let mut rows = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let iter_stream = episodes.fork(it as u64);
        let results: Vec<(Vec<f64>, Vec<f64>)> = ensemble
            .particles
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut s = iter_stream.fork(i as u64);
                let trs = collect_trajectories(&net, p, env, config.episodes_per_iter, config.discount, &mut s)?;
                let g = estimate_policy_gradient(&net, p, &trs, &Baseline::TimeIndexed)?;
                Ok((trs.iter().map(Trajectory::total_reward).collect(), g))
            })
            .collect::<Result<_>>()?;
        let (totals, j_grads): (Vec<Vec<f64>>, Vec<Vec<f64>>) = results.into_iter().unzip();
        let prior_grads = ensemble
            .particles
            .iter()
            .map(|p| net.log_prior_grad(p).map(|(_, g)| g))
            .collect::<Result<Vec<_>>>()?;
        let ksd = if ensemble.len() > 1 {
            let scores = tempered_scores(&j_grads, &prior_grads, config.alpha);
            let h = median_bandwidth(&ensemble.particles, &config.kernel)?;
            Some(ksd_diagnostic(&ensemble.particles, &scores, h)?)
        } else {
            None
        };
        stein_policy_update(&mut ensemble, &j_grads, &prior_grads, config.alpha, &config.kernel, &config.step)?;
        for p in &mut ensemble.particles {
            net.normalize_flows(p);
        }
        let all: Vec<f64> = totals.into_iter().flatten().collect();
        let row = RlRow {
            iteration: it + 1,
            mean_return: mean(&all),
            std_return: std_dev(&all),
            ksd,
            alpha: config.alpha,
        };
        on_iter(&row);
        rows.push(row);
    }
    Ok(RlRun { rows, ensemble })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svgd::svgd_direction;
    use proptest::prelude::*;

    /// One state, two actions, episode ends after one step.
    struct OneStep;

    impl EpisodicEnv for OneStep {
        type State = ();
        fn state_dim(&self) -> usize {
            1
        }
        fn n_actions(&self) -> usize {
            2
        }
        fn reset(&self, _: &mut RngStream) {}
        fn observe(&self, _: &()) -> Vec<f64> {
            vec![1.0]
        }
        fn step(&self, _: &(), action: usize, _: &mut RngStream) -> ((), f64, bool) {
            ((), if action == 0 { 3.0 } else { 1.0 }, true)
        }
    }

    fn small_policy(seed: u64) -> (Network, Vec<f64>) {
        let spec = NetworkSpec::with_uniform_k(vec![1, 3, 2], 1, Activation::Tanh, Likelihood::Categorical).unwrap();
        let net = Network::new(spec).unwrap();
        let mut s = RngStream::new(seed, 0);
        let mut p = net.init_particle(&mut s);
        for x in p.iter_mut() {
            *x += 0.3 * s.normal();
        }
        (net, p)
    }

    fn upright() -> CartPoleState {
        CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: 0.0,
            theta_dot: 0.0,
            t: 0,
        }
    }

    #[test]
    fn cartpole_alternating_forces_stay_up() {
        let env = CartPole::default();
        let mut s = RngStream::new(1, 0);
        let mut state = upright();
        for t in 0..5 {
            let (next, r, done) = env.step(&state, t % 2, &mut s);
            assert_eq!(r, 1.0);
            assert!(!done);
            assert!(next.theta.abs() < 12f64.to_radians());
            state = next;
        }
    }

    #[test]
    fn cartpole_dynamics_hand_step() {
        // from rest, a push to the right: x_acc and theta_acc by hand
        let env = CartPole::default();
        let (s1, _, _) = env.step(&upright(), RIGHT, &mut RngStream::new(0, 0));
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        assert_eq!((s1.x, s1.theta), (0.0, 0.0));
        assert!((s1.x_dot - 0.02 * x_acc).abs() < 1e-15);
        assert!((s1.theta_dot - 0.02 * theta_acc).abs() < 1e-15);
        assert_eq!(s1.t, 1);
    }

    #[test]
    fn cartpole_termination() {
        let env = CartPole::default();
        let tilted = CartPoleState {
            theta: 13f64.to_radians(),
            ..upright()
        };
        assert!(env.step(&tilted, LEFT, &mut RngStream::new(0, 0)).2);
        let last = CartPoleState { t: 199, ..upright() };
        assert!(env.step(&last, LEFT, &mut RngStream::new(0, 0)).2);
        let far = CartPoleState { x: 2.5, ..upright() };
        assert!(env.step(&far, LEFT, &mut RngStream::new(0, 0)).2);
    }

    #[test]
    fn episodes_are_reproducible_and_bounded() {
        let env = CartPole::default();
        let spec = NetworkSpec::with_uniform_k(vec![4, 25, 10, 2], 1, Activation::Tanh, Likelihood::Categorical).unwrap();
        let net = Network::new(spec).unwrap();
        let p = net.init_particle(&mut RngStream::new(2, 0));
        let a = collect_trajectories(&net, &p, &env, 5, 0.99, &mut RngStream::new(3, 0)).unwrap();
        let b = collect_trajectories(&net, &p, &env, 5, 0.99, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(a, b);
        for tr in &a {
            assert!(tr.len() <= 200 && !tr.is_empty());
            for t in 0..tr.len() {
                let next = if t + 1 < tr.len() { tr.returns[t + 1] } else { 0.0 };
                assert_eq!(tr.returns[t], tr.rewards[t] + 0.99 * next);
            }
        }
    }

    #[test]
    fn returns_examples() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(discounted_returns(&[2.0, -1.0, 4.0], 0.0), vec![2.0, -1.0, 4.0]);
        assert!(discounted_returns(&[], 0.9).is_empty());
    }

    #[test]
    fn deterministic_policy_limit() {
        let spec = NetworkSpec::new(vec![4, 2], vec![0], Activation::Tanh, Likelihood::Categorical).unwrap();
        let net = Network::new(spec).unwrap();
        let mut p = vec![0.0; net.dim()];
        let bias = net.layout().layers[0].shape.bias_offset();
        p[bias + 1] = 1e6;
        let trs = collect_trajectories(&net, &p, &CartPole::default(), 3, 0.99, &mut RngStream::new(4, 0)).unwrap();
        assert!(trs.iter().flat_map(|t| &t.actions).all(|&a| a == RIGHT));
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let (net, p) = small_policy(5);
        let tr = Trajectory {
            observations: vec![vec![1.0], vec![1.0]],
            actions: vec![0, 1],
            rewards: vec![1.0, 1.0],
            returns: vec![1.9, 1.0],
        };
        let g = estimate_policy_gradient(&net, &p, &[tr.clone(), tr], &Baseline::TimeIndexed).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn baseline_is_zero_padded() {
        let mk = |returns: Vec<f64>| Trajectory {
            observations: vec![vec![0.0]; returns.len()],
            actions: vec![0; returns.len()],
            rewards: vec![1.0; returns.len()],
            returns,
        };
        assert_eq!(time_baseline(&[mk(vec![3.0, 2.0, 1.0]), mk(vec![1.0])]), vec![2.0, 1.0, 0.5]);
    }

    fn exact_one_step_gradient(net: &Network, p: &[f64]) -> Vec<f64> {
        // ∇J = Σ_a π(a) r_a ∇log π(a)
        let probs = policy(net, p, &[1.0]).unwrap();
        let mut g = vec![0.0; net.dim()];
        for (a, r) in [(0usize, 3.0), (1, 1.0)] {
            let batch = Batch::new(vec![vec![1.0]], vec![Target::Class(a)]).unwrap();
            let (_, ga) = net.log_likelihood_grad(p, &batch).unwrap();
            for (x, y) in g.iter_mut().zip(ga) {
                *x += probs[a] * r * y;
            }
        }
        g
    }

    fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        diff / b.iter().map(|y| y * y).sum::<f64>().sqrt()
    }

    #[test]
    fn reinforce_matches_exact_gradient_on_one_step_mdp() {
        let (net, p) = small_policy(6);
        let exact = exact_one_step_gradient(&net, &p);
        let trs = collect_trajectories(&net, &p, &OneStep, 100_000, 0.99, &mut RngStream::new(7, 0)).unwrap();
        let plain = estimate_policy_gradient(&net, &p, &trs, &Baseline::None).unwrap();
        assert!(relative_error(&plain, &exact) < 0.02, "{}", relative_error(&plain, &exact));
        let shifted = estimate_policy_gradient(&net, &p, &trs, &Baseline::Constant(2.0)).unwrap();
        assert!(relative_error(&shifted, &exact) < 0.02, "{}", relative_error(&shifted, &exact));
        let timed = estimate_policy_gradient(&net, &p, &trs, &Baseline::TimeIndexed).unwrap();
        assert!(relative_error(&timed, &exact) < 0.02);
    }

    #[test]
    fn infinite_temperature_leaves_the_prior() {
        let mut s = RngStream::new(8, 0);
        let rand = |s: &mut RngStream| -> Vec<Vec<f64>> { (0..4).map(|_| (0..3).map(|_| s.normal()).collect()).collect() };
        let particles = rand(&mut s);
        let j = rand(&mut s);
        let prior = rand(&mut s);
        let a = svgd_direction(&particles, &tempered_scores(&j, &prior, 1e12), 1.3).unwrap();
        let b = svgd_direction(&particles, &prior, 1.3).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn single_particle_is_preconditioned_ascent() {
        let step = StepConfig {
            epsilon: 0.1,
            ..StepConfig::default()
        };
        let mut e = Ensemble::new(vec![vec![0.5, -1.0]]).unwrap();
        let j = vec![vec![4.0, -2.0]];
        let prior = vec![vec![-0.5, 1.0]];
        stein_policy_update(&mut e, &j, &prior, 2.0, &KernelConfig::default(), &step).unwrap();
        for (t, (x0, g)) in [(0.5, 1.5), (-1.0, 0.0)].iter().enumerate() {
            let expected = x0 + 0.1 * g / ((0.01f64 * g * g).sqrt() + 1e-8);
            assert!((e.particles[0][t] - expected).abs() < 1e-12);
        }
        assert!(stein_policy_update(&mut e, &j, &prior, 0.0, &KernelConfig::default(), &step).is_err());
    }

    #[test]
    fn quadratic_objective_reaches_the_tempered_target() {
        // J(θ) = -θ², flat prior, α = 1: stationary law ∝ exp(-θ²), std 1/√2
        let mut s = RngStream::new(9, 0);
        let mut e = Ensemble::new((0..100).map(|_| vec![2.0 * s.normal()]).collect()).unwrap();
        let step = StepConfig {
            epsilon: 0.05,
            decay_every: 1000,
            decay_factor: 0.5,
            ..StepConfig::default()
        };
        for it in 0..4000 {
            e.epoch = it;
            let j: Vec<Vec<f64>> = e.particles.iter().map(|p| vec![-2.0 * p[0]]).collect();
            let flat = vec![vec![0.0]; 100];
            stein_policy_update(&mut e, &j, &flat, 1.0, &KernelConfig::default(), &step).unwrap();
        }
        let xs: Vec<f64> = e.particles.iter().map(|p| p[0]).collect();
        let target = 0.5f64.sqrt();
        assert!(mean(&xs).abs() < 0.1 * target);
        assert!((std_dev(&xs) - target).abs() < 0.1 * target, "{}", std_dev(&xs));
    }

    #[test]
    fn small_runs_are_reproducible() {
        let cfg = RlConfig {
            particles: 3,
            iterations: 3,
            episodes_per_iter: 2,
            ..RlConfig::default()
        };
        let a = run_rl(&CartPole::default(), &cfg, 11, |_| {}).unwrap();
        let b = run_rl(&CartPole::default(), &cfg, 11, |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 3);
        assert!(a.to_csv().starts_with("iteration,mean_return,std_return,ksd,alpha\n1,"));
    }

    proptest! {
        #[test]
        fn policy_is_a_distribution(seed in any::<u64>(), x in -5.0f64..5.0) {
            let (net, p) = small_policy(seed);
            let probs = policy(&net, &p, &[x]).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn returns_recursion_is_exact(rewards in prop::collection::vec(-10.0f64..10.0, 0..50), g in 0.0f64..1.0) {
            let r = discounted_returns(&rewards, g);
            for t in 0..rewards.len() {
                let next = if t + 1 < rewards.len() { r[t + 1] } else { 0.0 };
                prop_assert_eq!(r[t], rewards[t] + g * next);
            }
        }
    }
}

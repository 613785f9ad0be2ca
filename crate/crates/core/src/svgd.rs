//! Particle transport: RBF kernel, bandwidth heuristic, the Stein direction,
//! an RMSProp-preconditioned step and a driver that ties them together.
//!
//! Per-particle gradient evaluations run on the ambient rayon pool. Results
//! are collected in particle order and every reduction is sequential, so the
//! outcome does not depend on the number of worker threads.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::math::{dot, median_pairwise_distance, squared_distance, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub mode: BandwidthMode,
    pub bandwidth_floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            mode: BandwidthMode::MedianHeuristic,
            bandwidth_floor: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    pub epsilon: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// Epochs between step-size decays; 0 disables decay.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            epsilon: 1e-3,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-8,
            decay_every: 0,
            decay_factor: 0.5,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(Error::Config("rmsprop_decay must lie in (0, 1)".into()));
        }
        if !(self.rmsprop_eps > 0.0) {
            return Err(Error::Config("rmsprop_eps must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Step size in effect during `epoch` under block decay.
    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            self.epsilon
        } else {
            self.epsilon * self.decay_factor.powi((epoch / self.decay_every) as i32)
        }
    }
}

/// Particles plus their optimizer accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Vec<f64>>,
    pub accumulators: Vec<Vec<f64>>,
    pub step_count: usize,
    /// Current epoch, read by [`StepConfig::epsilon_at`].
    pub epoch: usize,
}

impl Ensemble {
    pub fn new(particles: Vec<Vec<f64>>) -> Result<Self> {
        let first = particles
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one particle".into()))?;
        let d = first.len();
        for p in &particles {
            ensure_len(d, p.len(), "particle length")?;
        }
        let accumulators = vec![vec![0.0; d]; particles.len()];
        Ok(Ensemble {
            particles,
            accumulators,
            step_count: 0,
            epoch: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }
}

/// `exp(-‖a-b‖²/h)` and its gradient with respect to `b`.
pub fn rbf_kernel(a: &[f64], b: &[f64], h: f64) -> (f64, Vec<f64>) {
    let k = (-squared_distance(a, b) / h).exp();
    let c = 2.0 / h * k;
    let grad = a.iter().zip(b).map(|(x, y)| c * (x - y)).collect();
    (k, grad)
}

/// `med² / ln M` with the floor and the degenerate fallbacks applied.
pub fn median_bandwidth<P: AsRef<[f64]>>(particles: &[P], config: &KernelConfig) -> Result<f64> {
    if let BandwidthMode::Fixed(h) = config.mode {
        return Ok(h.max(config.bandwidth_floor));
    }
    let m = particles.len();
    if m <= 1 {
        return Ok(1.0);
    }
    let med = median_pairwise_distance(particles)?;
    if med == 0.0 {
        return Ok(1.0);
    }
    Ok((med * med / (m as f64).ln()).max(config.bandwidth_floor))
}

fn kernel_matrix<P: AsRef<[f64]> + Sync>(particles: &[P], h: f64) -> Vec<Vec<f64>> {
    let m = particles.len();
    let upper: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let a = particles[i].as_ref();
            particles[i + 1..]
                .iter()
                .map(|b| (-squared_distance(a, b.as_ref()) / h).exp())
                .collect()
        })
        .collect();
    let mut k = vec![vec![1.0; m]; m];
    for i in 0..m {
        for (off, &v) in upper[i].iter().enumerate() {
            k[i][i + 1 + off] = v;
            k[i + 1 + off][i] = v;
        }
    }
    k
}

/// The kernelized Stein direction for every particle.
pub fn svgd_direction<P, G>(particles: &[P], grads: &[G], h: f64) -> Result<Vec<Vec<f64>>>
where
    P: AsRef<[f64]> + Sync,
    G: AsRef<[f64]> + Sync,
{
    let m = particles.len();
    ensure_len(m, grads.len(), "gradient count")?;
    if m == 0 {
        return Ok(Vec::new());
    }
    let d = particles[0].as_ref().len();
    for (p, g) in particles.iter().zip(grads) {
        ensure_len(d, p.as_ref().len(), "particle length")?;
        ensure_len(d, g.as_ref().len(), "gradient length")?;
    }
    if m == 1 {
        return Ok(vec![grads[0].as_ref().to_vec()]);
    }
    let kmat = kernel_matrix(particles, h);
    let inv_m = 1.0 / m as f64;
    let rep = 2.0 / h;
    // Σ_j k_ij (g_j + rep (θ_i - θ_j)) = Σ_j k_ij a_j + rep θ_i Σ_j k_ij
    let shifted: Vec<Vec<f64>> = particles
        .iter()
        .zip(grads)
        .map(|(p, g)| p.as_ref().iter().zip(g.as_ref()).map(|(t, g)| g - rep * t).collect())
        .collect();
    Ok((0..m)
        .into_par_iter()
        .map(|i| {
            let row = &kmat[i];
            let mut phi = vec![0.0; d];
            for (k, a) in row.iter().zip(&shifted) {
                for (p, x) in phi.iter_mut().zip(a) {
                    *p += k * x;
                }
            }
            let pull = rep * row.iter().sum::<f64>();
            for (p, t) in phi.iter_mut().zip(particles[i].as_ref()) {
                *p = (*p + pull * t) * inv_m;
            }
            phi
        })
        .collect())
}

/// One preconditioned move along `directions`.
pub fn svgd_step(ensemble: &mut Ensemble, directions: &[Vec<f64>], config: &StepConfig) -> Result<()> {
    ensure_len(ensemble.len(), directions.len(), "direction count")?;
    let eps = config.epsilon_at(ensemble.epoch);
    let rho = config.rmsprop_decay;
    let delta = config.rmsprop_eps;
    for ((theta, acc), phi) in ensemble
        .particles
        .iter_mut()
        .zip(ensemble.accumulators.iter_mut())
        .zip(directions)
    {
        ensure_len(theta.len(), phi.len(), "direction length")?;
        for t in 0..theta.len() {
            acc[t] = rho * acc[t] + (1.0 - rho) * phi[t] * phi[t];
            theta[t] += eps * phi[t] / (acc[t].sqrt() + delta);
        }
    }
    ensemble.step_count += 1;
    Ok(())
}

/// Bandwidth, direction and step for precomputed scores. Returns the
/// bandwidth used.
pub fn svgd_update(ensemble: &mut Ensemble, grads: &[Vec<f64>], kernel: &KernelConfig, step: &StepConfig) -> Result<f64> {
    check_finite(grads, "score")?;
    let h = median_bandwidth(&ensemble.particles, kernel)?;
    let dirs = svgd_direction(&ensemble.particles, grads, h)?;
    check_finite(&dirs, "stein direction")?;
    svgd_step(ensemble, &dirs, step)?;
    check_finite(&ensemble.particles, "particle")?;
    Ok(h)
}

fn check_finite(vs: &[Vec<f64>], what: &'static str) -> Result<()> {
    if vs.iter().flatten().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Empirical kernelized Stein discrepancy (V-statistic), clamped at zero.
pub fn ksd_diagnostic<P, G>(particles: &[P], grads: &[G], h: f64) -> Result<f64>
where
    P: AsRef<[f64]> + Sync,
    G: AsRef<[f64]> + Sync,
{
    let m = particles.len();
    ensure_len(m, grads.len(), "gradient count")?;
    if m < 2 {
        return Err(Error::Config("kernelized Stein discrepancy needs two particles".into()));
    }
    let d = particles[0].as_ref().len() as f64;
    let rows: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let x = particles[i].as_ref();
            let sx = grads[i].as_ref();
            let mut acc = 0.0;
            for j in 0..m {
                let y = particles[j].as_ref();
                let sy = grads[j].as_ref();
                let r2 = squared_distance(x, y);
                let k = (-r2 / h).exp();
                // sxᵀ∇_y k + syᵀ∇_x k = (2k/h)(sx - sy)ᵀ(x - y)
                let mut cross = 0.0;
                for t in 0..x.len() {
                    cross += (sx[t] - sy[t]) * (x[t] - y[t]);
                }
                acc += k * dot(sx, sy) + 2.0 * k / h * cross + k * (2.0 * d / h - 4.0 * r2 / (h * h));
            }
            acc
        })
        .collect();
    Ok((rows.iter().sum::<f64>() / (m * m) as f64).max(0.0))
}

/// A differentiable log density with optional minibatching.
pub trait Target: Sync {
    type Batch: Sync;

    fn dim(&self) -> usize;

    fn init_particle(&self, stream: &mut RngStream) -> Vec<f64>;

    /// The data used for one iteration; shared by every particle.
    fn sample_batch(&self, stream: &mut RngStream) -> Self::Batch;

    /// Log density (up to a constant) and its gradient.
    fn log_density_grad(&self, theta: &[f64], batch: &Self::Batch) -> Result<(f64, Vec<f64>)>;

    /// Iterations that make up one pass over the data.
    fn batches_per_epoch(&self) -> usize {
        1
    }

    /// Maps a particle back onto its canonical parameterization after a step.
    fn project(&self, _theta: &mut [f64]) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub particles: usize,
    pub iterations: usize,
    pub kernel: KernelConfig,
    pub step: StepConfig,
    /// Record a trace row every this many iterations (and at the last one).
    pub log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub log_posterior_mean: f64,
    /// `None` when the ensemble has a single particle.
    pub ksd: Option<f64>,
    pub bandwidth: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub const HEADER: &'static str = "iter,log_posterior_mean,ksd,bandwidth,epsilon";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let ksd = r.ksd.map_or(String::new(), |k| k.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iter, r.log_posterior_mean, ksd, r.bandwidth, r.epsilon
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Statistics of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterStats {
    pub log_posterior_mean: f64,
    pub bandwidth: f64,
    pub epsilon: f64,
    pub ksd: Option<f64>,
}

/// Scores of every particle against a shared batch, in particle order.
pub fn evaluate<T: Target>(target: &T, particles: &[Vec<f64>], batch: &T::Batch) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let results: Vec<(f64, Vec<f64>)> = particles
        .par_iter()
        .map(|p| target.log_density_grad(p, batch))
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

/// One full iteration: batch, scores, bandwidth, direction, step.
pub fn svgd_iteration<T: Target>(
    target: &T,
    ensemble: &mut Ensemble,
    kernel: &KernelConfig,
    step: &StepConfig,
    stream: &mut RngStream,
    with_ksd: bool,
) -> Result<IterStats> {
    let batch = target.sample_batch(stream);
    let (values, grads) = evaluate(target, &ensemble.particles, &batch)?;
    let log_posterior_mean = values.iter().sum::<f64>() / values.len() as f64;
    let epsilon = step.epsilon_at(ensemble.epoch);
    check_finite(&grads, "score")?;
    let bandwidth = median_bandwidth(&ensemble.particles, kernel)?;
    let ksd = if with_ksd && ensemble.len() > 1 {
        Some(ksd_diagnostic(&ensemble.particles, &grads, bandwidth)?)
    } else {
        None
    };
    let dirs = svgd_direction(&ensemble.particles, &grads, bandwidth)?;
    check_finite(&dirs, "stein direction")?;
    svgd_step(ensemble, &dirs, step)?;
    for p in &mut ensemble.particles {
        target.project(p);
    }
    check_finite(&ensemble.particles, "particle")?;
    Ok(IterStats {
        log_posterior_mean,
        bandwidth,
        epsilon,
        ksd,
    })
}

/// Particle `i` is drawn from `stream.fork(i)`.
pub fn init_ensemble<T: Target>(target: &T, m: usize, stream: &RngStream) -> Result<Ensemble> {
    Ensemble::new((0..m).map(|i| target.init_particle(&mut stream.fork(i as u64))).collect())
}

/// Runs `config.iterations` iterations from a fresh ensemble. `on_iter` is
/// called after every iteration with the 1-based iteration number.
pub fn run_svgd<T: Target>(
    target: &T,
    config: &RunConfig,
    stream: &mut RngStream,
    mut on_iter: impl FnMut(usize, &Ensemble, &IterStats) -> Result<()>,
) -> Result<(Ensemble, Trace)> {
    config.step.validate()?;
    if config.particles == 0 {
        return Err(Error::Config("M must be at least 1".into()));
    }
    let log_every = config.log_every.max(1);
    let mut ensemble = init_ensemble(target, config.particles, &stream.fork(u64::MAX))?;
    let per_epoch = target.batches_per_epoch().max(1);
    let mut trace = Trace::default();
    for iter in 1..=config.iterations {
        ensemble.epoch = (iter - 1) / per_epoch;
        let logged = iter % log_every == 0 || iter == config.iterations;
        let stats = svgd_iteration(target, &mut ensemble, &config.kernel, &config.step, stream, logged)?;
        if logged {
            trace.rows.push(TraceRow {
                iter,
                log_posterior_mean: stats.log_posterior_mean,
                ksd: stats.ksd,
                bandwidth: stats.bandwidth,
                epsilon: stats.epsilon,
            });
        }
        on_iter(iter, &ensemble, &stats)?;
    }
    Ok((ensemble, trace))
}

/// Independent Gaussian `N(mean, std²)` in every coordinate; the test target
/// of the engine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianTarget {
    pub dim: usize,
    pub mean: f64,
    pub std: f64,
    pub init_mean: f64,
    pub init_std: f64,
}

impl Target for GaussianTarget {
    type Batch = ();

    fn dim(&self) -> usize {
        self.dim
    }

    fn init_particle(&self, stream: &mut RngStream) -> Vec<f64> {
        (0..self.dim).map(|_| self.init_mean + self.init_std * stream.normal()).collect()
    }

    fn sample_batch(&self, _stream: &mut RngStream) {}

    fn log_density_grad(&self, theta: &[f64], _batch: &()) -> Result<(f64, Vec<f64>)> {
        let var = self.std * self.std;
        let value = theta.iter().map(|t| -0.5 * (t - self.mean).powi(2) / var).sum();
        Ok((value, theta.iter().map(|t| -(t - self.mean) / var).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{mean, std_dev};
    use proptest::prelude::*;

    fn naive_direction(ps: &[Vec<f64>], gs: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
        let m = ps.len();
        (0..m)
            .map(|i| {
                let mut phi = vec![0.0; ps[0].len()];
                for j in 0..m {
                    let (k, grad_b) = rbf_kernel(&ps[i], &ps[j], h);
                    // κ is symmetric, so ∇_b κ(θ_i, b) at θ_j is ∇_{θ_j} κ(θ_j, θ_i)
                    for t in 0..phi.len() {
                        phi[t] += (k * gs[j][t] + grad_b[t]) / m as f64;
                    }
                }
                phi
            })
            .collect()
    }

    fn random_set(s: &mut RngStream, m: usize, d: usize) -> Vec<Vec<f64>> {
        (0..m).map(|_| (0..d).map(|_| s.normal()).collect()).collect()
    }

    #[test]
    fn kernel_examples() {
        let a = [0.3, -1.2, 4.0];
        let (k, g) = rbf_kernel(&a, &a, 0.7);
        assert_eq!(k, 1.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let (k, _) = rbf_kernel(&[0.0], &[1.0], 1e12);
        assert!((k - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let mut s = RngStream::new(3, 0);
        for _ in 0..20 {
            let a: Vec<f64> = (0..4).map(|_| s.normal()).collect();
            let b: Vec<f64> = (0..4).map(|_| s.normal()).collect();
            let h = 2.0;
            let (_, g) = rbf_kernel(&a, &b, h);
            for t in 0..4 {
                let e = 1e-6;
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[t] += e;
                bm[t] -= e;
                let fd = (rbf_kernel(&a, &bp, h).0 - rbf_kernel(&a, &bm, h).0) / (2.0 * e);
                assert!((fd - g[t]).abs() / g[t].abs().max(1e-3) < 1e-6);
            }
        }
    }

    #[test]
    fn bandwidth_examples() {
        let cfg = KernelConfig::default();
        let h = median_bandwidth(&[vec![0.0], vec![1.0]], &cfg).unwrap();
        assert!((h - 1.0 / 2f64.ln()).abs() < 1e-12);
        assert_eq!(median_bandwidth(&vec![vec![2.0, 1.0]; 5], &cfg).unwrap(), 1.0);
        assert_eq!(median_bandwidth(&[vec![2.0, 1.0]], &cfg).unwrap(), 1.0);
        let floor = KernelConfig {
            bandwidth_floor: 10.0,
            ..cfg
        };
        assert_eq!(median_bandwidth(&[vec![0.0], vec![1.0]], &floor).unwrap(), 10.0);
        let fixed = KernelConfig {
            mode: BandwidthMode::Fixed(3.0),
            ..cfg
        };
        assert_eq!(median_bandwidth(&[vec![0.0], vec![1.0]], &fixed).unwrap(), 3.0);
    }

    #[test]
    fn direction_examples() {
        let g = vec![vec![0.4, -2.0, 7.5]];
        assert_eq!(svgd_direction(&[vec![1.0, 2.0, 3.0]], &g, 0.3).unwrap(), g);

        let ps = [vec![0.0], vec![1.0]];
        let h = 1.0 / 2f64.ln();
        let dirs = svgd_direction(&ps, &[vec![0.0], vec![0.0]], h).unwrap();
        assert!((dirs[0][0] + 2f64.ln() / 2.0).abs() < 1e-12);
        assert!((dirs[1][0] - 2f64.ln() / 2.0).abs() < 1e-12);

        assert!(svgd_direction(&ps, &[vec![0.0]], h).is_err());
    }

    #[test]
    fn direction_matches_naive_oracle() {
        let mut s = RngStream::new(4, 0);
        let ps = random_set(&mut s, 7, 3);
        let gs = random_set(&mut s, 7, 3);
        let a = svgd_direction(&ps, &gs, 1.7).unwrap();
        let b = naive_direction(&ps, &gs, 1.7);
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn direction_is_permutation_equivariant() {
        let mut s = RngStream::new(5, 0);
        let ps = random_set(&mut s, 6, 2);
        let gs = random_set(&mut s, 6, 2);
        let perm = [3, 0, 5, 1, 4, 2];
        let pp: Vec<_> = perm.iter().map(|&i| ps[i].clone()).collect();
        let pg: Vec<_> = perm.iter().map(|&i| gs[i].clone()).collect();
        let a = svgd_direction(&ps, &gs, 0.9).unwrap();
        let b = svgd_direction(&pp, &pg, 0.9).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for t in 0..2 {
                assert!((a[i][t] - b[k][t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn huge_bandwidth_gives_mean_gradient() {
        let mut s = RngStream::new(6, 0);
        for _ in 0..10 {
            let ps = random_set(&mut s, 5, 4);
            let gs = random_set(&mut s, 5, 4);
            let dirs = svgd_direction(&ps, &gs, 1e12).unwrap();
            for t in 0..4 {
                let mg = gs.iter().map(|g| g[t]).sum::<f64>() / 5.0;
                for d in &dirs {
                    assert!((d[t] - mg).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn step_examples() {
        let cfg = StepConfig {
            epsilon: 0.1,
            ..StepConfig::default()
        };
        let mut e = Ensemble::new(vec![vec![1.0, 2.0]]).unwrap();
        svgd_step(&mut e, &[vec![0.0, 0.0]], &cfg).unwrap();
        assert_eq!(e.particles[0], vec![1.0, 2.0]);
        assert_eq!(e.step_count, 1);

        let g = 0.37;
        let mut e = Ensemble::new(vec![vec![0.0]]).unwrap();
        svgd_step(&mut e, &[vec![g]], &cfg).unwrap();
        let expected = 0.1 * g / (((1.0 - 0.99) * g * g).sqrt() + 1e-8);
        assert!((e.particles[0][0] - expected).abs() < 1e-15);
    }

    #[test]
    fn block_decay_schedule() {
        let cfg = StepConfig {
            epsilon: 0.8,
            decay_every: 10,
            decay_factor: 0.5,
            ..StepConfig::default()
        };
        assert_eq!(cfg.epsilon_at(0), 0.8);
        assert_eq!(cfg.epsilon_at(9), 0.8);
        assert_eq!(cfg.epsilon_at(10), 0.4);
        assert_eq!(cfg.epsilon_at(25), 0.2);
        assert_eq!(StepConfig::default().epsilon_at(1000), 1e-3);
    }

    #[test]
    fn repulsion_spreads_two_particles() {
        let mut e = Ensemble::new(vec![vec![0.2, -0.1], vec![0.5, 0.3]]).unwrap();
        let before = squared_distance(&e.particles[0], &e.particles[1]);
        svgd_update(&mut e, &[vec![0.0; 2], vec![0.0; 2]], &KernelConfig::default(), &StepConfig::default()).unwrap();
        assert!(squared_distance(&e.particles[0], &e.particles[1]) > before);
    }

    #[test]
    fn ksd_matches_naive_double_loop() {
        let mut s = RngStream::new(7, 0);
        let ps = random_set(&mut s, 6, 3);
        let gs = random_set(&mut s, 6, 3);
        let h = 1.3;
        let mut total = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let (x, y) = (&ps[i], &ps[j]);
                let k = rbf_kernel(x, y, h).0;
                let grad_y: Vec<f64> = (0..3).map(|t| 2.0 / h * (x[t] - y[t]) * k).collect();
                let grad_x: Vec<f64> = (0..3).map(|t| -2.0 / h * (x[t] - y[t]) * k).collect();
                let mut trace = 0.0;
                for t in 0..3 {
                    let r = x[t] - y[t];
                    trace += (2.0 / h - 4.0 * r * r / (h * h)) * k;
                }
                let mut u = trace;
                for t in 0..3 {
                    u += gs[i][t] * gs[j][t] * k + gs[i][t] * grad_y[t] + gs[j][t] * grad_x[t];
                }
                total += u;
            }
        }
        let naive = (total / 36.0).max(0.0);
        assert!((ksd_diagnostic(&ps, &gs, h).unwrap() - naive).abs() < 1e-10);
        assert_eq!(ksd_diagnostic(&ps, &gs, h).unwrap(), ksd_diagnostic(&ps, &gs, h).unwrap());
        assert!(ksd_diagnostic(&ps[..1], &gs[..1], h).is_err());
    }

    fn gaussian() -> GaussianTarget {
        GaussianTarget {
            dim: 1,
            mean: 3.0,
            std: 2.0,
            init_mean: 0.0,
            init_std: 1.0,
        }
    }

    fn gaussian_config(m: usize) -> RunConfig {
        RunConfig {
            particles: m,
            iterations: 2000,
            kernel: KernelConfig::default(),
            step: StepConfig {
                epsilon: 0.05,
                decay_every: 500,
                decay_factor: 0.5,
                ..StepConfig::default()
            },
            log_every: 10,
        }
    }

    #[test]
    fn gaussian_run_recovers_moments() {
        let (e, trace) = run_svgd(&gaussian(), &gaussian_config(50), &mut RngStream::new(11, 0), |_, _, _| Ok(())).unwrap();
        let xs: Vec<f64> = e.particles.iter().map(|p| p[0]).collect();
        assert!((mean(&xs) - 3.0).abs() < 0.2, "mean {}", mean(&xs));
        assert!((std_dev(&xs) - 2.0).abs() < 0.3, "std {}", std_dev(&xs));
        let first = trace.rows.first().unwrap();
        let last = trace.rows.last().unwrap();
        assert_eq!((first.iter, last.iter), (10, 2000));
        assert!(last.ksd.unwrap() < first.ksd.unwrap());
    }

    #[test]
    fn single_particle_finds_the_mode() {
        let (e, trace) = run_svgd(&gaussian(), &gaussian_config(1), &mut RngStream::new(12, 0), |_, _, _| Ok(())).unwrap();
        assert!((e.particles[0][0] - 3.0).abs() < 0.05);
        assert!(trace.rows.iter().all(|r| r.ksd.is_none()));
    }

    #[test]
    fn runs_are_reproducible_across_pools() {
        let cfg = RunConfig {
            iterations: 200,
            ..gaussian_config(20)
        };
        let target = GaussianTarget { dim: 3, ..gaussian() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_svgd(&target, &cfg, &mut RngStream::new(13, 0), |_, _, _| Ok(())).unwrap())
        };
        let (e1, t1) = run(1);
        let (e4, t4) = run(4);
        assert_eq!(e1, e4);
        assert_eq!(t1.to_csv(), t4.to_csv());
    }

    #[test]
    fn trace_csv_shape() {
        let t = Trace {
            rows: vec![TraceRow {
                iter: 1,
                log_posterior_mean: -1.5,
                ksd: None,
                bandwidth: 1.0,
                epsilon: 0.01,
            }],
        };
        assert_eq!(t.to_csv(), "iter,log_posterior_mean,ksd,bandwidth,epsilon\n1,-1.5,,1,0.01\n");
    }

    proptest! {
        #[test]
        fn identical_particles_stay_finite(v in prop::collection::vec(-1e3f64..1e3, 1..5), m in 1usize..8, g in -1e3f64..1e3) {
            let mut e = Ensemble::new(vec![v.clone(); m]).unwrap();
            let grads = vec![vec![g; v.len()]; m];
            let h = svgd_update(&mut e, &grads, &KernelConfig::default(), &StepConfig::default()).unwrap();
            prop_assert!(h.is_finite() && h > 0.0);
            prop_assert!(e.particles.iter().flatten().all(|x| x.is_finite()));
            prop_assert!(e.accumulators.iter().flatten().all(|x| x.is_finite()));
        }
    }
}

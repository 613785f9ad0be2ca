//! Built-in verification suites, run by `s2vgd diag` and the acceptance
//! tests. Every check compares library code against a slower independent
//! computation.

use std::f64::consts::PI;
use std::time::Instant;

use crate::bnn::{Activation, Batch, Likelihood, Network, NetworkSpec, Target as Label};
use crate::data::synthetic_regression;
use crate::error::Result;
use crate::householder::{materialize_orthogonal, FlowBank};
use crate::math::{dot, kron, mean, std_dev, vec, Matrix, RngStream};
use crate::mvg::{mvg_log_density_signed, mvg_sample, param_count, LayerShape, StructuredLayer};
use crate::svgd::{run_svgd, GaussianTarget, KernelConfig, RunConfig, StepConfig, Target};
use crate::train::BnnTarget;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {} ({:.2}s): {}", self.name, self.seconds, self.detail)
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Every check in order. `inject_sign_flip` evaluates the matrix-normal
/// density with the wrong sign on its quadratic form, which the Kronecker
/// check must catch.
pub fn suite(seed: u64, inject_sign_flip: bool) -> Vec<Check> {
    vec![
        orthogonality(seed),
        kronecker_density(seed, inject_sign_flip),
        kronecker_covariance(seed),
        reparameterization(seed),
        gradient_check(seed),
        gaussian_svgd(seed),
        map_reduction(seed),
        param_count_grid(),
    ]
}

fn reflection(v: &[f64]) -> Matrix {
    let n = dot(v, v);
    Matrix::from_fn(v.len(), v.len(), |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - 2.0 * v[i] * v[j] / n
    })
}

/// `H_K ⋯ H_1` as a dense product.
fn dense_flow(vectors: &[&[f64]], dim: usize) -> Result<Matrix> {
    let mut p = Matrix::identity(dim);
    for v in vectors {
        p = reflection(v).matmul(&p)?;
    }
    Ok(p)
}

fn diag(d: &[f64]) -> Matrix {
    Matrix::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { 0.0 })
}

fn random_spd(n: usize, stream: &mut RngStream) -> Matrix {
    let a = Matrix::from_fn(n, n, |_, _| stream.normal());
    let mut s = a.matmul(&a.transpose()).expect("square");
    for i in 0..n {
        s.col_mut(i)[i] += 0.5;
    }
    s
}

/// 100 random banks with dim ≤ 32 and K ≤ 8: `PᵀP = I` and `det P = (−1)^K`.
pub fn orthogonality(seed: u64) -> Check {
    timed("orthogonality", || {
        let mut s = RngStream::new(seed, 101);
        let (mut worst_orth, mut worst_det) = (0.0f64, 0.0f64);
        for _ in 0..100 {
            let dim = 1 + s.index(32);
            let k = s.index(dim.min(8) + 1);
            let bank = FlowBank::random(dim, k, &mut s)?;
            let p = materialize_orthogonal(bank.as_ref())?;
            worst_orth = worst_orth.max(p.transpose().matmul(&p)?.max_abs_diff(&Matrix::identity(dim)));
            let det = p.to_nalgebra().determinant();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            worst_det = worst_det.max((det - sign).abs());
        }
        Ok((
            worst_orth < 1e-10 && worst_det < 1e-8,
            format!("max |PᵀP − I| = {worst_orth:.2e}, max |det P − (−1)^K| = {worst_det:.2e}"),
        ))
    })
}

// vec(W) ~ N(vec(M), V ⊗ U), through an explicit inverse and determinant
fn kronecker_log_density(w: &Matrix, m: &Matrix, u: &Matrix, v: &Matrix) -> f64 {
    let cov = kron(v, u).to_nalgebra();
    let d = nalgebra::DVector::from_iterator(w.rows() * w.cols(), vec(w).iter().zip(vec(m)).map(|(a, b)| a - b));
    let inv = cov.clone().try_inverse().expect("positive definite");
    let quad = (d.transpose() * inv * &d)[(0, 0)];
    -0.5 * quad - 0.5 * d.len() as f64 * (2.0 * PI).ln() - 0.5 * cov.determinant().ln()
}

/// 50 random `(M, U, V)` up to 3×3 against the vectorized density.
pub fn kronecker_density(seed: u64, inject_sign_flip: bool) -> Check {
    timed("kronecker density", || {
        let mut s = RngStream::new(seed, 102);
        let sign = if inject_sign_flip { 1.0 } else { -1.0 };
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let (l1, l2) = (1 + s.index(3), 1 + s.index(3));
            let m = Matrix::from_fn(l1, l2, |_, _| s.normal());
            let w = Matrix::from_fn(l1, l2, |_, _| s.normal());
            let u = random_spd(l1, &mut s);
            let v = random_spd(l2, &mut s);
            let got = mvg_log_density_signed(&w, &m, &u, &v, sign)?;
            worst = worst.max((got - kronecker_log_density(&w, &m, &u, &v)).abs());
        }
        Ok((worst < 1e-8, format!("max |Δ log density| = {worst:.2e}")))
    })
}

/// 2×2 sampler: empirical covariance of `vec(W)` against `V ⊗ U` from
/// 2·10⁵ draws, within 5% of the largest entry.
pub fn kronecker_covariance(seed: u64) -> Check {
    timed("kronecker covariance", || {
        let mut s = RngStream::new(seed, 103);
        let m = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 0.0]]);
        let u = Matrix::from_rows(&[&[2.0, 0.6], &[0.6, 1.0]]);
        let v = Matrix::from_rows(&[&[1.5, -0.4], &[-0.4, 0.8]]);
        let n = 200_000;
        let draws = mvg_sample(&m, &u, &v, n, &mut s)?;
        let vm = vec(&m);
        let mut cov = Matrix::zeros(4, 4);
        for w in &draws {
            let d: Vec<f64> = vec(w).iter().zip(&vm).map(|(a, b)| a - b).collect();
            for j in 0..4 {
                for i in 0..4 {
                    cov.col_mut(j)[i] += d[i] * d[j] / n as f64;
                }
            }
        }
        let exact = kron(&v, &u);
        let scale = exact.as_slice().iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let rel = cov.max_abs_diff(&exact) / scale;
        Ok((rel < 0.05, format!("max |Σ̂ − V⊗U| / max |V⊗U| = {rel:.4}")))
    })
}

/// `materialize_weight` against `P Λ₁ C Λ₂ Qᵀ` built from dense reflections
/// on 100 random layers.
pub fn reparameterization(seed: u64) -> Check {
    timed("reparameterization", || {
        let mut s = RngStream::new(seed, 104);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let (l1, l2) = (1 + s.index(6), 1 + s.index(6));
            let k = s.index(l1.min(l2) + 1);
            let shape = LayerShape::new(l1, l2, k)?;
            let data: Vec<f64> = (0..shape.len()).map(|_| s.normal()).collect();
            let layer = StructuredLayer::new(shape, &data)?;
            let pv: Vec<&[f64]> = (0..k).map(|i| layer.p_flow().vector(i)).collect();
            let qv: Vec<&[f64]> = (0..k).map(|i| layer.q_flow().vector(i)).collect();
            let oracle = dense_flow(&pv, l1)?
                .matmul(&diag(layer.d1()))?
                .matmul(&layer.core())?
                .matmul(&diag(layer.d2()))?
                .matmul(&dense_flow(&qv, l2)?.transpose())?;
            worst = worst.max(layer.materialize_weight()?.max_abs_diff(&oracle));
        }
        Ok((worst < 1e-11, format!("max |W − P Λ₁ C Λ₂ Qᵀ| = {worst:.2e}")))
    })
}

/// Central differences (step 1e-5) on a 4-5-3 network with K=2 and a batch
/// of 8, for both likelihoods and both activations. Relative error uses
/// `max(|analytic|, 1e-2)` as denominator.
pub fn gradient_check(seed: u64) -> Check {
    timed("gradient check", || {
        let mut s = RngStream::new(seed, 105);
        let mut worst = 0.0f64;
        let mut count = 0;
        for lik in [Likelihood::GaussianRegression, Likelihood::Categorical] {
            for act in [Activation::Tanh, Activation::Relu] {
                let net = Network::new(NetworkSpec::with_uniform_k(vec![4, 5, 3], 2, act, lik)?)?;
                let mut p = net.init_particle(&mut s);
                for x in p.iter_mut() {
                    *x += 0.5 * s.normal();
                }
                let inputs: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| s.normal()).collect()).collect();
                let targets = (0..8)
                    .map(|_| match lik {
                        Likelihood::GaussianRegression => Label::Real((0..3).map(|_| s.normal()).collect()),
                        Likelihood::Categorical => Label::Class(s.index(3)),
                    })
                    .collect();
                let batch = Batch::new(inputs, targets)?.with_n_total(20);
                let (_, grad) = net.log_posterior_grad(&p, &batch)?;
                let h = 1e-5;
                for i in 0..p.len() {
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    plus[i] += h;
                    minus[i] -= h;
                    let fd = (net.log_posterior_grad(&plus, &batch)?.0 - net.log_posterior_grad(&minus, &batch)?.0) / (2.0 * h);
                    worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1e-2));
                    count += 1;
                }
            }
        }
        Ok((worst < 1e-4, format!("{count} coordinates, max relative error {worst:.2e}")))
    })
}

/// N(3, 2²) with 50 particles for 2000 iterations, then a single particle.
pub fn gaussian_svgd(seed: u64) -> Check {
    timed("1d gaussian svgd", || {
        let target = GaussianTarget {
            dim: 1,
            mean: 3.0,
            std: 2.0,
            init_mean: 0.0,
            init_std: 1.0,
        };
        let config = |m| RunConfig {
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
        };
        let (ens, trace) = run_svgd(&target, &config(50), &mut RngStream::new(seed, 106), |_, _, _| Ok(()))?;
        let xs: Vec<f64> = ens.particles.iter().map(|p| p[0]).collect();
        let (mu, sd) = (mean(&xs), std_dev(&xs));
        let ksd_first = trace.rows.first().and_then(|r| r.ksd).unwrap_or(f64::NAN);
        let ksd_last = trace.rows.last().and_then(|r| r.ksd).unwrap_or(f64::NAN);
        let (single, _) = run_svgd(&target, &config(1), &mut RngStream::new(seed, 107), |_, _, _| Ok(()))?;
        let mode = single.particles[0][0];
        let passed = (mu - 3.0).abs() < 0.2 && (sd - 2.0).abs() < 0.3 && ksd_last < ksd_first && (mode - 3.0).abs() < 0.05;
        Ok((
            passed,
            format!("mean {mu:.3}, std {sd:.3}, KSD {ksd_first:.3e} → {ksd_last:.3e}, M=1 mode {mode:.4}"),
        ))
    })
}

/// One particle through the engine against a hand-written RMSProp ascent on
/// the same minibatches, compared bit for bit after every iteration.
pub fn map_reduction(seed: u64) -> Check {
    timed("map reduction", || {
        let data = synthetic_regression(&mut RngStream::new(seed, 108));
        let spec = NetworkSpec::with_uniform_k(vec![1, 10, 1], 1, Activation::Relu, Likelihood::GaussianRegression)?;
        let net = Network::new(spec)?;
        let target = BnnTarget::new(&net, &data, 5)?;
        let step = StepConfig {
            epsilon: 1e-2,
            decay_every: 10,
            ..StepConfig::default()
        };
        let run = RunConfig {
            particles: 1,
            iterations: 200,
            kernel: KernelConfig::default(),
            step,
            log_every: 50,
        };
        let mut engine = Vec::new();
        run_svgd(&target, &run, &mut RngStream::new(seed, 109), |_, e, _| {
            engine.push(e.particles[0].clone());
            Ok(())
        })?;

        let mut stream = RngStream::new(seed, 109);
        let mut theta = target.init_particle(&mut stream.fork(u64::MAX).fork(0));
        let mut acc = vec![0.0; theta.len()];
        let per_epoch = target.batches_per_epoch();
        let mut first_mismatch = None;
        for (iter, expected) in engine.iter().enumerate() {
            let batch = target.sample_batch(&mut stream);
            let (_, g) = target.log_density_grad(&theta, &batch)?;
            let eps = step.epsilon_at(iter / per_epoch);
            for t in 0..theta.len() {
                acc[t] = step.rmsprop_decay * acc[t] + (1.0 - step.rmsprop_decay) * g[t] * g[t];
                theta[t] += eps * g[t] / (acc[t].sqrt() + step.rmsprop_eps);
            }
            target.project(&mut theta);
            let same = theta.iter().zip(expected).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same && first_mismatch.is_none() {
                first_mismatch = Some(iter + 1);
            }
        }
        Ok(match first_mismatch {
            None => (true, format!("{} iterations bit-identical", engine.len())),
            Some(i) => (false, format!("trajectories diverge at iteration {i}")),
        })
    })
}

/// Structural count `(K+1)(l1+l2) + l1·l2` and layout length over
/// `l1, l2 ∈ 1..=10`, `K ≤ min(l1, l2)`.
pub fn param_count_grid() -> Check {
    timed("parameter count", || {
        let mut bad = Vec::new();
        let mut cases = 0;
        for l1 in 1..=10 {
            for l2 in 1..=10 {
                for k in 0..=l1.min(l2) {
                    cases += 1;
                    let count = param_count(l1, l2, k)?;
                    let shape = LayerShape::new(l1, l2, k)?;
                    if count.structural != (k + 1) * (l1 + l2) + l1 * l2 || shape.len() != count.structural + l2 + 3 {
                        bad.push((l1, l2, k));
                    }
                }
            }
        }
        Ok((bad.is_empty(), format!("{cases} cases, {} mismatches", bad.len())))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in suite(1, false) {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let checks = suite(1, true);
        let density = checks.iter().find(|c| c.name == "kronecker density").unwrap();
        assert!(!density.passed, "{}", density.line());
    }
}

//! The structured matrix-variate Gaussian layer.
//!
//! A weight matrix `W` (`l1 x l2`) is written as `P Λ₁ C Λ₂ Qᵀ` with `P`,
//! `Q` Householder flows, `Λ₁`, `Λ₂` diagonal and `C` a core matrix with an
//! independent Gaussian prior. A layer lives inside a flat parameter slice
//! with the segment order
//!
//! ```text
//! C (l1*l2, column-major) | d1 (l1) | d2 (l2) | P vectors (K*l1) | Q vectors (K*l2)
//!   | bias (l2) | log λ | log φ | log ψ
//! ```
//!
//! The scales `λ` (core), `φ` (Householder vectors and bias) and `ψ`
//! (diagonals) are stored as log-variances and carry inverse-gamma
//! hyperpriors. [`mvg_log_density`] and [`mvg_sample`] are the dense
//! distribution routines used to check the decomposition.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{ensure_len, Error, Result};
use crate::householder::{flow_apply_in_place, flow_backprop, FlowRef};
use crate::math::{dot, Matrix, RngStream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Inverse-gamma hyperprior `InvGamma(a, b)` on each layer scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperPrior {
    pub a: f64,
    pub b: f64,
}

impl HyperPrior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a > 0.0 && b > 0.0 {
            Ok(HyperPrior { a, b })
        } else {
            Err(Error::Config(format!("hyperprior needs a > 0 and b > 0, got a={a}, b={b}")))
        }
    }

    /// Log-density of `s = log σ²` when `σ² ~ InvGamma(a, b)`, including the
    /// `+s` change-of-variables term. Returns `(value, d/ds)`.
    pub fn log_density_of_log_scale(&self, s: f64) -> (f64, f64) {
        let inv = (-s).exp();
        let value = self.a * self.b.ln() - ln_gamma(self.a) - self.a * s - self.b * inv;
        (value, -self.a + self.b * inv)
    }
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior { a: 1.0, b: 0.1 }
    }
}

/// Parameter counts for one structured layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    /// `(K+1)(l1+l2) + l1*l2`: core, diagonals and Householder vectors.
    pub structural: usize,
    /// `structural + l2` bias entries `+ 3` log-scales.
    pub total: usize,
}

pub fn param_count(l1: usize, l2: usize, k: usize) -> Result<ParamCount> {
    let shape = LayerShape::new(l1, l2, k)?;
    let structural = (k + 1) * (l1 + l2) + l1 * l2;
    Ok(ParamCount {
        structural,
        total: shape.len(),
    })
}

/// Dimensions of a structured layer and the offsets of its segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub l1: usize,
    pub l2: usize,
    pub k: usize,
}

impl LayerShape {
    pub fn new(l1: usize, l2: usize, k: usize) -> Result<Self> {
        if l1 == 0 || l2 == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if k > l1.min(l2) {
            return Err(Error::FlowTooLong { k, l1, l2 });
        }
        Ok(LayerShape { l1, l2, k })
    }

    pub fn c_offset(&self) -> usize {
        0
    }
    pub fn d1_offset(&self) -> usize {
        self.l1 * self.l2
    }
    pub fn d2_offset(&self) -> usize {
        self.d1_offset() + self.l1
    }
    pub fn p_offset(&self) -> usize {
        self.d2_offset() + self.l2
    }
    pub fn q_offset(&self) -> usize {
        self.p_offset() + self.k * self.l1
    }
    pub fn bias_offset(&self) -> usize {
        self.q_offset() + self.k * self.l2
    }
    pub fn log_lambda_offset(&self) -> usize {
        self.bias_offset() + self.l2
    }
    pub fn log_phi_offset(&self) -> usize {
        self.log_lambda_offset() + 1
    }
    pub fn log_psi_offset(&self) -> usize {
        self.log_lambda_offset() + 2
    }

    pub fn len(&self) -> usize {
        self.log_lambda_offset() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes a fresh initialization into `out`: core and bias `N(0, 0.05²)`,
    /// unit diagonals, standard-normal Householder vectors and every scale at
    /// `prior_variance`.
    pub fn initialize(&self, prior_variance: f64, init_std: f64, stream: &mut RngStream, out: &mut [f64]) -> Result<()> {
        ensure_len(self.len(), out.len(), "layer initialization")?;
        for x in &mut out[..self.d1_offset()] {
            *x = init_std * stream.normal();
        }
        for x in &mut out[self.d1_offset()..self.p_offset()] {
            *x = 1.0;
        }
        for x in &mut out[self.p_offset()..self.bias_offset()] {
            *x = stream.normal();
        }
        for x in &mut out[self.bias_offset()..self.log_lambda_offset()] {
            *x = init_std * stream.normal();
        }
        let s = prior_variance.ln();
        out[self.log_lambda_offset()..].fill(s);
        Ok(())
    }
}

/// A structured layer viewed inside a parameter slice.
#[derive(Clone, Copy, Debug)]
pub struct StructuredLayer<'a> {
    shape: LayerShape,
    data: &'a [f64],
}

/// Intermediates saved by [`StructuredLayer::forward_batch`].
#[derive(Clone, Debug)]
pub struct LayerCache {
    input: Matrix,
    rotated: Matrix,
    scaled: Matrix,
    core_out: Matrix,
    core_scaled: Matrix,
}

impl<'a> StructuredLayer<'a> {
    pub fn new(shape: LayerShape, data: &'a [f64]) -> Result<Self> {
        ensure_len(shape.len(), data.len(), "layer parameter segment")?;
        Ok(StructuredLayer { shape, data })
    }

    pub fn shape(&self) -> LayerShape {
        self.shape
    }

    pub fn core(&self) -> Matrix {
        let s = &self.shape;
        Matrix::from_col_major(s.l1, s.l2, self.data[..s.d1_offset()].to_vec())
            .expect("segment sized by shape")
    }

    fn core_slice(&self) -> &'a [f64] {
        &self.data[..self.shape.d1_offset()]
    }

    pub fn d1(&self) -> &'a [f64] {
        &self.data[self.shape.d1_offset()..self.shape.d2_offset()]
    }

    pub fn d2(&self) -> &'a [f64] {
        &self.data[self.shape.d2_offset()..self.shape.p_offset()]
    }

    pub fn p_flow(&self) -> FlowRef<'a> {
        FlowRef::new(self.shape.l1, &self.data[self.shape.p_offset()..self.shape.q_offset()])
            .expect("segment sized by shape")
    }

    pub fn q_flow(&self) -> FlowRef<'a> {
        FlowRef::new(self.shape.l2, &self.data[self.shape.q_offset()..self.shape.bias_offset()])
            .expect("segment sized by shape")
    }

    pub fn bias(&self) -> &'a [f64] {
        &self.data[self.shape.bias_offset()..self.shape.log_lambda_offset()]
    }

    pub fn log_lambda(&self) -> f64 {
        self.data[self.shape.log_lambda_offset()]
    }

    pub fn log_phi(&self) -> f64 {
        self.data[self.shape.log_phi_offset()]
    }

    pub fn log_psi(&self) -> f64 {
        self.data[self.shape.log_psi_offset()]
    }

    /// `W = P diag(d1) C diag(d2) Qᵀ`.
    pub fn materialize_weight(&self) -> Result<Matrix> {
        let (d1, d2) = (self.d1(), self.d2());
        let mut w = self.core();
        for j in 0..w.cols() {
            let col = w.col_mut(j);
            for (x, &a) in col.iter_mut().zip(d1) {
                *x *= a * d2[j];
            }
        }
        flow_apply_in_place(self.p_flow(), &mut w, false)?;
        // (·) Qᵀ = (Q (·)ᵀ)ᵀ
        let mut wt = w.transpose();
        flow_apply_in_place(self.q_flow(), &mut wt, false)?;
        Ok(wt.transpose())
    }

    /// `Wᵀ x + bias`, evaluated factor by factor without forming `W`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (out, _) = self.forward_batch(&Matrix::column(x))?;
        Ok(out.into_vec())
    }

    /// Columns of `x` are inputs; returns pre-activations column by column.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, LayerCache)> {
        let LayerShape { l1, l2, .. } = self.shape;
        ensure_len(l1, x.rows(), "layer input width")?;
        let n = x.cols();
        let mut rotated = x.clone();
        flow_apply_in_place(self.p_flow(), &mut rotated, true)?;
        let mut scaled = rotated.clone();
        scale_rows(&mut scaled, self.d1());
        let core = self.core_slice();
        let mut core_out = Matrix::zeros(l2, n);
        for c in 0..n {
            let z = scaled.col(c);
            let dst = core_out.col_mut(c);
            for (j, d) in dst.iter_mut().enumerate() {
                *d = dot(&core[j * l1..(j + 1) * l1], z);
            }
        }
        let mut core_scaled = core_out.clone();
        scale_rows(&mut core_scaled, self.d2());
        let mut out = core_scaled.clone();
        flow_apply_in_place(self.q_flow(), &mut out, false)?;
        let bias = self.bias();
        for c in 0..n {
            for (o, b) in out.col_mut(c).iter_mut().zip(bias) {
                *o += b;
            }
        }
        let cache = LayerCache {
            input: x.clone(),
            rotated,
            scaled,
            core_out,
            core_scaled,
        };
        Ok((out, cache))
    }

    /// Accumulates `∂L/∂θ` for this layer into `grad` (a slice of the same
    /// length as the layer segment) and returns `∂L/∂input`.
    pub fn backward(&self, cache: &LayerCache, upstream: &Matrix, grad: &mut [f64]) -> Result<Matrix> {
        let s = self.shape;
        ensure_len(s.len(), grad.len(), "layer gradient segment")?;
        let n = upstream.cols();
        ensure_len(s.l2, upstream.rows(), "layer upstream rows")?;

        {
            let gb = &mut grad[s.bias_offset()..s.log_lambda_offset()];
            for c in 0..n {
                for (g, u) in gb.iter_mut().zip(upstream.col(c)) {
                    *g += u;
                }
            }
        }

        let q = flow_backprop(self.q_flow(), &cache.core_scaled, upstream, false)?;
        add_into(&mut grad[s.q_offset()..s.bias_offset()], &q.vectors);
        let mut d_core_out = q.input;
        {
            let gd2 = &mut grad[s.d2_offset()..s.p_offset()];
            for c in 0..n {
                for ((g, &dz), &z) in gd2.iter_mut().zip(d_core_out.col(c)).zip(cache.core_out.col(c)) {
                    *g += dz * z;
                }
            }
        }
        scale_rows(&mut d_core_out, self.d2());

        let core = self.core_slice();
        let mut d_scaled = Matrix::zeros(s.l1, n);
        {
            let gc = &mut grad[..s.d1_offset()];
            for c in 0..n {
                let z = cache.scaled.col(c);
                let dz = d_core_out.col(c);
                for j in 0..s.l2 {
                    let w = dz[j];
                    if w == 0.0 {
                        continue;
                    }
                    for (g, &zi) in gc[j * s.l1..(j + 1) * s.l1].iter_mut().zip(z) {
                        *g += w * zi;
                    }
                    for (d, &ci) in d_scaled.col_mut(c).iter_mut().zip(&core[j * s.l1..(j + 1) * s.l1]) {
                        *d += w * ci;
                    }
                }
            }
        }
        {
            let gd1 = &mut grad[s.d1_offset()..s.d2_offset()];
            for c in 0..n {
                for ((g, &dz), &z) in gd1.iter_mut().zip(d_scaled.col(c)).zip(cache.rotated.col(c)) {
                    *g += dz * z;
                }
            }
        }
        scale_rows(&mut d_scaled, self.d1());
        let p = flow_backprop(self.p_flow(), &cache.input, &d_scaled, true)?;
        add_into(&mut grad[s.p_offset()..s.q_offset()], &p.vectors);
        Ok(p.input)
    }

    pub fn log_prior(&self, hyper: &HyperPrior) -> f64 {
        let mut scratch = vec![0.0; self.shape.len()];
        self.log_prior_grad(hyper, &mut scratch)
    }

    /// Log prior of the layer; its gradient is accumulated into `grad`.
    pub fn log_prior_grad(&self, hyper: &HyperPrior, grad: &mut [f64]) -> f64 {
        let s = self.shape;
        let mut total = 0.0;
        let (log_lambda, log_phi, log_psi) = (self.log_lambda(), self.log_phi(), self.log_psi());
        let mut scale_grads = [0.0; 3];

        // (segment, scale index): core -> λ, diagonals -> ψ, vectors and bias -> φ
        let groups: [(std::ops::Range<usize>, usize); 3] = [
            (0..s.d1_offset(), 0),
            (s.d1_offset()..s.p_offset(), 2),
            (s.p_offset()..s.log_lambda_offset(), 1),
        ];
        let logs = [log_lambda, log_phi, log_psi];
        for (range, which) in groups {
            if range.is_empty() {
                continue;
            }
            let (v, gs) = gaussian_group(&self.data[range.clone()], logs[which], &mut grad[range]);
            total += v;
            scale_grads[which] += gs;
        }
        for (i, &ls) in logs.iter().enumerate() {
            let (v, g) = hyper.log_density_of_log_scale(ls);
            total += v;
            grad[s.log_lambda_offset() + i] += scale_grads[i] + g;
        }
        total
    }
}

/// Zero-mean Gaussian with variance `exp(log_var)` over `xs`; accumulates
/// `∂/∂x` into `grad` and returns `(value, ∂/∂log_var)`.
fn gaussian_group(xs: &[f64], log_var: f64, grad: &mut [f64]) -> (f64, f64) {
    let inv = (-log_var).exp();
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    for (g, x) in grad.iter_mut().zip(xs) {
        *g -= x * inv;
    }
    let n = xs.len() as f64;
    let value = -0.5 * n * (LN_2PI + log_var) - 0.5 * sq * inv;
    (value, -0.5 * n + 0.5 * sq * inv)
}

fn scale_rows(m: &mut Matrix, d: &[f64]) {
    for c in 0..m.cols() {
        for (x, &a) in m.col_mut(c).iter_mut().zip(d) {
            *x *= a;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn check_spd(m: &Matrix, what: &'static str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if m.rows() != m.cols() {
        return Err(Error::NotPositiveDefinite(what));
    }
    let scale = m.as_slice().iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    if m.max_abs_diff(&m.transpose()) > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite(what));
    }
    m.to_nalgebra().cholesky().ok_or(Error::NotPositiveDefinite(what))
}

/// Log-density of `W ~ MN(mean, U, V)` with row covariance `U` and column
/// covariance `V`.
pub fn mvg_log_density(w: &Matrix, mean: &Matrix, u: &Matrix, v: &Matrix) -> Result<f64> {
    mvg_log_density_signed(w, mean, u, v, -1.0)
}

/// Same as [`mvg_log_density`] with the sign in front of the quadratic form
/// exposed, so a sign error can be injected into the diagnostics.
pub(crate) fn mvg_log_density_signed(
    w: &Matrix,
    mean: &Matrix,
    u: &Matrix,
    v: &Matrix,
    exponent_sign: f64,
) -> Result<f64> {
    let (l1, l2) = w.shape();
    ensure_len(l1 * l2, mean.rows() * mean.cols(), "mvg mean shape")?;
    ensure_len(l1, u.rows(), "row covariance size")?;
    ensure_len(l2, v.rows(), "column covariance size")?;
    let cu = check_spd(u, "row covariance")?;
    let cv = check_spd(v, "column covariance")?;
    let diff = w.sub(mean)?.to_nalgebra();
    let x = cu.solve(&diff);
    let y = cv.solve(&diff.transpose());
    let quad = (&y * &x).trace();
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
        2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    };
    let (n1, n2) = (l1 as f64, l2 as f64);
    Ok(exponent_sign * 0.5 * quad - 0.5 * n1 * n2 * (2.0 * PI).ln() - 0.5 * n1 * logdet(&cv) - 0.5 * n2 * logdet(&cu))
}

/// Square-root factor `P Λ` of an SPD matrix from its eigendecomposition.
fn eigen_factor(m: &Matrix, what: &'static str) -> Result<Matrix> {
    check_spd(m, what)?;
    let eig = m.to_nalgebra().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&e| e <= 0.0) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let mut factor = Matrix::from_nalgebra(&eig.eigenvectors);
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|e| e.sqrt()).collect();
    for (j, r) in roots.iter().enumerate() {
        for x in factor.col_mut(j) {
            *x *= r;
        }
    }
    Ok(factor)
}

/// Draws `W = P Λ₁ Z Λ₂ Qᵀ + mean` with `Z` standard normal, where
/// `U = P Λ₁² Pᵀ` and `V = Q Λ₂² Qᵀ` are eigendecompositions.
pub fn mvg_sample(mean: &Matrix, u: &Matrix, v: &Matrix, n: usize, stream: &mut RngStream) -> Result<Vec<Matrix>> {
    let (l1, l2) = mean.shape();
    ensure_len(l1, u.rows(), "row covariance size")?;
    ensure_len(l2, v.rows(), "column covariance size")?;
    let left = eigen_factor(u, "row covariance")?;
    let right_t = eigen_factor(v, "column covariance")?.transpose();
    (0..n)
        .map(|_| {
            let z = Matrix::from_fn(l1, l2, |_, _| stream.normal());
            left.matmul(&z)?.matmul(&right_t)?.add(mean)
        })
        .collect()
}

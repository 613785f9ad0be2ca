//! Householder reflections and flows.
//!
//! A reflection `H = I - 2 v vᵀ / ‖v‖²` is never formed explicitly: applying
//! it to `x` costs one dot product and one axpy. A flow of length `K` is the
//! product `H_K ⋯ H_1`, applied right to left (`H_1` touches the input
//! first). Householder vectors are stored unnormalized, and gradients are
//! taken with respect to the raw vectors.

use crate::error::{ensure_len, Error, Result};
use crate::math::{dot, Matrix, RngStream};

/// Smallest admissible squared norm of a Householder vector.
pub const NORM_FLOOR: f64 = 1e-12;

/// An owned bank of `K` Householder vectors of length `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowBank {
    dim: usize,
    data: Vec<f64>,
}

/// A borrowed flow: `K` vectors of length `dim` laid out back to back.
#[derive(Clone, Copy, Debug)]
pub struct FlowRef<'a> {
    dim: usize,
    data: &'a [f64],
}

/// Gradients produced by [`flow_backprop`].
#[derive(Clone, Debug)]
pub struct FlowGrad {
    /// `K * dim` values, one block per Householder vector.
    pub vectors: Vec<f64>,
    pub input: Matrix,
}

impl FlowBank {
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * vectors.len());
        for v in &vectors {
            ensure_len(dim, v.len(), "householder vector")?;
            data.extend_from_slice(v);
        }
        let bank = FlowBank { dim, data };
        bank.validate()?;
        Ok(bank)
    }

    /// Vectors drawn i.i.d. standard normal.
    pub fn random(dim: usize, k: usize, stream: &mut RngStream) -> Result<Self> {
        let data = (0..dim * k).map(|_| stream.normal()).collect();
        let bank = FlowBank { dim, data };
        bank.validate()?;
        Ok(bank)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.as_ref().len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_ref(&self) -> FlowRef<'_> {
        FlowRef {
            dim: self.dim,
            data: &self.data,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.len() > self.dim {
            return Err(Error::Config(format!(
                "flow length {} exceeds dimension {}",
                self.len(),
                self.dim
            )));
        }
        for k in 0..self.len() {
            check_norm(self.vector(k))?;
        }
        Ok(())
    }
}

impl<'a> FlowRef<'a> {
    /// Views `data` as consecutive vectors of length `dim`.
    pub fn new(dim: usize, data: &'a [f64]) -> Result<Self> {
        if dim == 0 {
            if data.is_empty() {
                return Ok(FlowRef { dim, data });
            }
            return Err(Error::dims(0, data.len(), "flow buffer"));
        }
        if data.len() % dim != 0 {
            return Err(Error::dims(dim * (data.len() / dim + 1), data.len(), "flow buffer"));
        }
        Ok(FlowRef { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, k: usize) -> &'a [f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    /// Reflection indices in application order.
    fn order(&self, transpose: bool) -> Vec<usize> {
        if transpose {
            (0..self.len()).rev().collect()
        } else {
            (0..self.len()).collect()
        }
    }
}

fn check_norm(v: &[f64]) -> Result<f64> {
    let norm_sq = dot(v, v);
    // NaN fails this comparison too
    if !(norm_sq >= NORM_FLOOR) {
        return Err(Error::DegenerateHouseholder { norm_sq });
    }
    Ok(norm_sq)
}

/// Reflects `x` in place. Returns `vᵀx / ‖v‖²`.
fn reflect_in_place(v: &[f64], norm_sq: f64, x: &mut [f64]) -> f64 {
    let alpha = dot(v, x) / norm_sq;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= 2.0 * alpha * vi;
    }
    alpha
}

/// `H x` for the reflection defined by `v`, in `O(len)`.
pub fn householder_apply(v: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    ensure_len(v.len(), x.len(), "householder apply")?;
    let norm_sq = check_norm(v)?;
    let mut out = x.to_vec();
    reflect_in_place(v, norm_sq, &mut out);
    Ok(out)
}

/// `(H_K ⋯ H_1) X`, or `(H_1 ⋯ H_K) X = Pᵀ X` when `transpose` is set.
pub fn flow_apply(flow: FlowRef<'_>, x: &Matrix, transpose: bool) -> Result<Matrix> {
    let mut out = x.clone();
    flow_apply_in_place(flow, &mut out, transpose)?;
    Ok(out)
}

pub(crate) fn flow_apply_in_place(flow: FlowRef<'_>, x: &mut Matrix, transpose: bool) -> Result<()> {
    ensure_len(flow.dim(), x.rows(), "flow input rows")?;
    for k in flow.order(transpose) {
        let v = flow.vector(k);
        let norm_sq = check_norm(v)?;
        for j in 0..x.cols() {
            reflect_in_place(v, norm_sq, x.col_mut(j));
        }
    }
    Ok(())
}

/// Reverse-mode derivative of [`flow_apply`].
///
/// `upstream` is `∂L/∂Y` for `Y = flow_apply(flow, x, transpose)`. Returns
/// `∂L/∂v_k` for every vector (unnormalized, through the `‖v‖²` division)
/// and `∂L/∂X`.
pub fn flow_backprop(
    flow: FlowRef<'_>,
    x: &Matrix,
    upstream: &Matrix,
    transpose: bool,
) -> Result<FlowGrad> {
    ensure_len(flow.dim(), x.rows(), "flow input rows")?;
    if x.shape() != upstream.shape() {
        return Err(Error::dims(
            x.rows() * x.cols(),
            upstream.rows() * upstream.cols(),
            "flow upstream shape",
        ));
    }
    let order = flow.order(transpose);
    let mut norms = Vec::with_capacity(order.len());
    // outputs[s] is the matrix after the s-th reflection in application order
    let mut outputs = Vec::with_capacity(order.len());
    let mut current = x.clone();
    for &k in &order {
        let v = flow.vector(k);
        let norm_sq = check_norm(v)?;
        for j in 0..current.cols() {
            reflect_in_place(v, norm_sq, current.col_mut(j));
        }
        norms.push(norm_sq);
        outputs.push(current.clone());
    }

    let dim = flow.dim();
    let mut grad_vectors = vec![0.0; flow.len() * dim];
    let mut g = upstream.clone();
    for (s, &k) in order.iter().enumerate().rev() {
        let v = flow.vector(k);
        let norm_sq = norms[s];
        let y = &outputs[s];
        let gv = &mut grad_vectors[k * dim..(k + 1) * dim];
        for j in 0..g.cols() {
            let gj = g.col(j);
            let yj = y.col(j);
            // H is an involution, so x = H y and alpha = vᵀx/‖v‖² = -vᵀy/‖v‖²
            let alpha = -dot(v, yj) / norm_sq;
            let beta = dot(gj, v) / norm_sq;
            for ((acc, &yi), &gi) in gv.iter_mut().zip(yj).zip(gj) {
                *acc -= 2.0 * (beta * yi + alpha * gi);
            }
        }
        for j in 0..g.cols() {
            reflect_in_place(v, norm_sq, g.col_mut(j));
        }
    }
    Ok(FlowGrad {
        vectors: grad_vectors,
        input: g,
    })
}

/// The dense orthogonal matrix `H_K ⋯ H_1`.
pub fn materialize_orthogonal(flow: FlowRef<'_>) -> Result<Matrix> {
    flow_apply(flow, &Matrix::identity(flow.dim()), false)
}

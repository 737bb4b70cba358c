//! Dense real tensors and the handful of differentiable operations the
//! tagger needs. Every forward op has a hand-derived backward counterpart;
//! backward functions *accumulate* into the gradient slices they are given.

mod gradcheck;
mod store;

pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR};
pub use store::{Container, Param, ParamStore, CONTAINER_MAGIC, CONTAINER_VERSION};

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Matrix from a list of equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Tensor::from_vec(&[rows.len(), cols], rows.concat())
    }

    /// Uniform samples in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut t = Tensor::zeros(shape);
        for x in &mut t.data {
            *x = if bound > 0.0 {
                rng.gen_range(-bound..=bound)
            } else {
                0.0
            };
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Product of all extents after the first.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// Trips a numeric fault when any value is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        check_finite(&self.data, what)
    }
}

pub fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!(
            "{what}: non-finite value {} at index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x` for a row-major `rows x cols` matrix stored in `w`.
pub fn matvec(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `out += Wᵀ dy`.
pub fn matvec_t_acc(w: &[f64], cols: usize, dy: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), cols);
    for (&d, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if d != 0.0 {
            for (o, &wv) in out.iter_mut().zip(row) {
                *o += d * wv;
            }
        }
    }
}

/// `dw += dy xᵀ`.
pub fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&d, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if d != 0.0 {
            for (o, &xv) in row.iter_mut().zip(x) {
                *o += d * xv;
            }
        }
    }
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

pub fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

/// `y = W x + b` where `W` is a `[m, k]` tensor.
pub fn affine(w: &Tensor, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let (m, k) = matrix_dims(w)?;
    if x.len() != k || b.len() != m {
        return Err(Error::Shape(format!(
            "affine: W is {:?}, x is [{}], b is [{}]",
            w.shape(),
            x.len(),
            b.len()
        )));
    }
    let mut y = b.to_vec();
    for (o, row) in y.iter_mut().zip(w.data().chunks_exact(k)) {
        *o += dot(row, x);
    }
    Ok(y)
}

/// Accumulates `∂L/∂W += dy xᵀ`, `∂L/∂b += dy`, `∂L/∂x += Wᵀ dy`.
pub fn affine_backward(
    w: &Tensor,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let k = w.cols();
    outer_acc(dw, dy, x);
    add_assign(db, dy);
    matvec_t_acc(w.data(), k, dy, dx);
}

fn matrix_dims(w: &Tensor) -> Result<(usize, usize)> {
    match w.shape() {
        [m, k] => Ok((*m, *k)),
        s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    check_finite(v, "softmax input")?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = p.iter().sum();
    for x in &mut p {
        *x /= z;
    }
    Ok(p)
}

/// Given `p = softmax(v)` and `∂L/∂p`, returns `∂L/∂v`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter()
        .zip(dp)
        .map(|(&pi, &di)| pi * (di - inner))
        .collect()
}

/// Log of the sum of exponentials, max-shifted.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_vec(v: &[f64]) -> Vec<f64> {
    v.iter().copied().map(sigmoid).collect()
}

/// Backward of sigmoid expressed through its output `s`.
pub fn sigmoid_backward(s: &[f64], ds: &[f64]) -> Vec<f64> {
    s.iter().zip(ds).map(|(&y, &d)| d * y * (1.0 - y)).collect()
}

pub fn tanh_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

/// Backward of tanh expressed through its output `t`.
pub fn tanh_backward(t: &[f64], dt: &[f64]) -> Vec<f64> {
    t.iter().zip(dt).map(|(&y, &d)| d * (1.0 - y * y)).collect()
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Inverse of [`concat`]; also the backward pass of it.
pub fn split_at(v: &[f64], first: usize) -> Result<(&[f64], &[f64])> {
    if first > v.len() {
        return Err(Error::Shape(format!(
            "cannot split [{}] at {first}",
            v.len()
        )));
    }
    Ok(v.split_at(first))
}

/// Inverted dropout mask: survivors are scaled by `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn identity() -> Self {
        DropoutMask(None)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.0 {
            None => x.to_vec(),
            Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn backward(&self, dy: &[f64]) -> Vec<f64> {
        self.apply(dy)
    }
}

pub fn dropout_mask<R: Rng + ?Sized>(
    len: usize,
    p: f64,
    train: bool,
    rng: &mut R,
) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Argument(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if !train || p == 0.0 {
        return Ok(DropoutMask::identity());
    }
    let scale = 1.0 / (1.0 - p);
    let mask = (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
        .collect();
    Ok(DropoutMask(Some(mask)))
}

/// Applies inverted dropout and returns the output with the mask used.
pub fn dropout<R: Rng + ?Sized>(
    x: &[f64],
    p: f64,
    train: bool,
    rng: &mut R,
) -> Result<(Vec<f64>, DropoutMask)> {
    let mask = dropout_mask(x.len(), p, train, rng)?;
    Ok((mask.apply(x), mask))
}

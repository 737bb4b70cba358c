//! Linear-chain CRF over emission scores `O` (n × K) and a transition
//! matrix `T` of size (K+2) × (K+2). Index `K` is the synthetic START state
//! and `K+1` is STOP, so a path `y_1..y_n` scores
//!
//! ```text
//! T[START, y_1] + Σ_i O[i, y_i] + Σ_{i>1} T[y_{i-1}, y_i] + T[y_n, STOP]
//! ```
//!
//! All computations run in log space.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{affine, affine_backward, check_finite, log_sum_exp, Tensor};

/// Score used for transitions that can never be taken.
pub const FORBIDDEN: f64 = -1e4;

/// How the sentence boundaries enter the transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryMode {
    /// Trainable START → y and y → STOP scores.
    #[serde(rename = "start-stop")]
    StartStop,
    /// Boundary scores pinned at zero.
    #[serde(rename = "zero")]
    Zero,
}

impl std::str::FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start-stop" => Ok(BoundaryMode::StartStop),
            "zero" => Ok(BoundaryMode::Zero),
            _ => Err(Error::Config(format!(
                "unknown boundary mode {s:?} (start-stop|zero)"
            ))),
        }
    }
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryMode::StartStop => "start-stop",
            BoundaryMode::Zero => "zero",
        })
    }
}

/// Transition matrix for `k` real tags with the fixed entries in place.
pub fn init_transitions(k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[k + 2, k + 2]);
    pin_fixed(&mut t, k);
    t
}

/// Re-applies the entries that are not trainable: into START and out of STOP.
pub fn pin_fixed(t: &mut Tensor, k: usize) {
    let d = k + 2;
    let data = t.data_mut();
    for j in 0..d {
        data[j * d + k] = FORBIDDEN;
        data[(k + 1) * d + j] = FORBIDDEN;
    }
}

/// Zeroes gradient entries that must not be trained under `mode`.
pub fn mask_transition_grad(grad: &mut [f64], k: usize, mode: BoundaryMode) {
    let d = k + 2;
    for j in 0..d {
        grad[j * d + k] = 0.0;
        grad[(k + 1) * d + j] = 0.0;
        if mode == BoundaryMode::Zero {
            grad[k * d + j] = 0.0;
            grad[j * d + k + 1] = 0.0;
        }
    }
}

/// Emission scores plus the transition matrix they are decoded against.
#[derive(Debug, Clone, Copy)]
pub struct Lattice<'a> {
    /// Row-major `n × k`.
    pub o: &'a [f64],
    pub n: usize,
    pub k: usize,
    /// Row-major `(k+2) × (k+2)`.
    pub t: &'a [f64],
}

impl<'a> Lattice<'a> {
    pub fn new(o: &'a [f64], n: usize, k: usize, t: &'a [f64]) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::Argument(
                "lattice needs n ≥ 1 and at least one tag".into(),
            ));
        }
        if o.len() != n * k || t.len() != (k + 2) * (k + 2) {
            return Err(Error::Shape(format!(
                "lattice: O has {} values for n={n}, k={k}; T has {}",
                o.len(),
                t.len()
            )));
        }
        check_finite(o, "emission scores")?;
        Ok(Lattice { o, n, k, t })
    }

    #[inline]
    fn emit(&self, i: usize, y: usize) -> f64 {
        self.o[i * self.k + y]
    }

    #[inline]
    fn trans(&self, from: usize, to: usize) -> f64 {
        self.t[from * (self.k + 2) + to]
    }

    fn start(&self) -> usize {
        self.k
    }

    fn stop(&self) -> usize {
        self.k + 1
    }

    fn check_tags(&self, y: &[usize]) -> Result<()> {
        if y.len() != self.n {
            return Err(Error::Argument(format!(
                "tag sequence has length {}, lattice has {}",
                y.len(),
                self.n
            )));
        }
        if let Some(&bad) = y.iter().find(|&&t| t >= self.k) {
            return Err(Error::Argument(format!(
                "tag index {bad} out of range (k={})",
                self.k
            )));
        }
        Ok(())
    }
}

/// Unnormalised score of one tag path.
pub fn score_sequence(lat: &Lattice, y: &[usize]) -> Result<f64> {
    lat.check_tags(y)?;
    // same accumulation order as viterbi so the two agree bit for bit
    let mut s = lat.trans(lat.start(), y[0]) + lat.emit(0, y[0]);
    for i in 1..lat.n {
        s = s + lat.trans(y[i - 1], y[i]) + lat.emit(i, y[i]);
    }
    Ok(s + lat.trans(y[lat.n - 1], lat.stop()))
}

/// Forward log-potentials `alpha[i][y]`: log-sum over prefixes ending in `y` at `i`.
fn forward(lat: &Lattice) -> Vec<Vec<f64>> {
    let k = lat.k;
    let mut alpha = vec![vec![0.0; k]; lat.n];
    for y in 0..k {
        alpha[0][y] = lat.trans(lat.start(), y) + lat.emit(0, y);
    }
    let mut buf = vec![0.0; k];
    for i in 1..lat.n {
        for y in 0..k {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = alpha[i - 1][p] + lat.trans(p, y);
            }
            alpha[i][y] = log_sum_exp(&buf) + lat.emit(i, y);
        }
    }
    alpha
}

/// Backward log-potentials `beta[i][y]`: log-sum over suffixes after `y` at `i`.
fn backward(lat: &Lattice) -> Vec<Vec<f64>> {
    let k = lat.k;
    let n = lat.n;
    let mut beta = vec![vec![0.0; k]; n];
    for y in 0..k {
        beta[n - 1][y] = lat.trans(y, lat.stop());
    }
    let mut buf = vec![0.0; k];
    for i in (0..n - 1).rev() {
        for y in 0..k {
            for (nx, b) in buf.iter_mut().enumerate() {
                *b = lat.trans(y, nx) + lat.emit(i + 1, nx) + beta[i + 1][nx];
            }
            beta[i][y] = log_sum_exp(&buf);
        }
    }
    beta
}

/// `log Σ_y exp(score(y))` by the forward algorithm.
pub fn log_partition(lat: &Lattice) -> f64 {
    let alpha = forward(lat);
    let last: Vec<f64> = (0..lat.k)
        .map(|y| alpha[lat.n - 1][y] + lat.trans(y, lat.stop()))
        .collect();
    log_sum_exp(&last)
}

/// Node and edge posteriors from forward-backward.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub log_z: f64,
    /// `node[i][y] = p(y_i = y)`.
    pub node: Vec<Vec<f64>>,
    /// Expected transition counts over the full `(k+2)²` matrix.
    pub edge: Vec<f64>,
}

pub fn posteriors(lat: &Lattice) -> Posteriors {
    let (n, k) = (lat.n, lat.k);
    let d = k + 2;
    let alpha = forward(lat);
    let beta = backward(lat);
    let last: Vec<f64> = (0..k)
        .map(|y| alpha[n - 1][y] + lat.trans(y, lat.stop()))
        .collect();
    let log_z = log_sum_exp(&last);

    let node: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..k)
                .map(|y| (alpha[i][y] + beta[i][y] - log_z).exp())
                .collect()
        })
        .collect();
    let mut edge = vec![0.0; d * d];
    for y in 0..k {
        edge[lat.start() * d + y] += node[0][y];
        edge[y * d + lat.stop()] += node[n - 1][y];
    }
    for i in 1..n {
        for p in 0..k {
            for y in 0..k {
                let lp = alpha[i - 1][p] + lat.trans(p, y) + lat.emit(i, y) + beta[i][y] - log_z;
                edge[p * d + y] += lp.exp();
            }
        }
    }
    Posteriors { log_z, node, edge }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllOutput {
    pub nll: f64,
    /// `∂nll/∂O`, row-major `n × k`.
    pub d_o: Vec<f64>,
    /// `∂nll/∂T`, row-major `(k+2)²`.
    pub d_t: Vec<f64>,
}

/// Negative log-likelihood of the gold path and its gradients:
/// `∂/∂O[i,y] = p(y_i = y) − 1[y_i = y]`, likewise for transitions with edge marginals.
pub fn nll(lat: &Lattice, gold: &[usize]) -> Result<NllOutput> {
    let gold_score = score_sequence(lat, gold)?;
    let post = posteriors(lat);
    let value = post.log_z - gold_score;
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "CRF negative log-likelihood is {value}"
        )));
    }
    let (n, k) = (lat.n, lat.k);
    let d = k + 2;
    let mut d_o: Vec<f64> = post.node.concat();
    for (i, &y) in gold.iter().enumerate() {
        d_o[i * k + y] -= 1.0;
    }
    let mut d_t = post.edge;
    d_t[lat.start() * d + gold[0]] -= 1.0;
    for i in 1..n {
        d_t[gold[i - 1] * d + gold[i]] -= 1.0;
    }
    d_t[gold[n - 1] * d + lat.stop()] -= 1.0;
    Ok(NllOutput {
        nll: value.max(0.0),
        d_o,
        d_t,
    })
}

/// Highest-scoring path. Ties go to the lowest tag index at every backtrack step.
pub fn viterbi(lat: &Lattice) -> (Vec<usize>, f64) {
    let (n, k) = (lat.n, lat.k);
    let mut delta = vec![0.0; k];
    for (y, d) in delta.iter_mut().enumerate() {
        *d = lat.trans(lat.start(), y) + lat.emit(0, y);
    }
    let mut back = vec![vec![0usize; k]; n];
    for i in 1..n {
        let mut next = vec![0.0; k];
        for y in 0..k {
            let mut best = 0;
            let mut best_score = delta[0] + lat.trans(0, y);
            for p in 1..k {
                let s = delta[p] + lat.trans(p, y);
                if s > best_score {
                    best = p;
                    best_score = s;
                }
            }
            back[i][y] = best;
            next[y] = best_score + lat.emit(i, y);
        }
        delta = next;
    }
    let mut last = 0;
    let mut best_score = delta[0] + lat.trans(0, lat.stop());
    for y in 1..k {
        let s = delta[y] + lat.trans(y, lat.stop());
        if s > best_score {
            last = y;
            best_score = s;
        }
    }
    let mut path = vec![last; n];
    for i in (1..n).rev() {
        path[i - 1] = back[i][path[i]];
    }
    (path, best_score)
}

/// Transition matrix with scheme-illegal moves (per `allowed`) set to [`FORBIDDEN`].
pub fn masked_transitions<F>(t: &[f64], k: usize, allowed: F) -> Vec<f64>
where
    F: Fn(Option<usize>, Option<usize>) -> bool,
{
    let d = k + 2;
    let mut out = t.to_vec();
    for to in 0..k {
        if !allowed(None, Some(to)) {
            out[k * d + to] = FORBIDDEN;
        }
        if !allowed(Some(to), None) {
            out[to * d + k + 1] = FORBIDDEN;
        }
        for from in 0..k {
            if !allowed(Some(from), Some(to)) {
                out[from * d + to] = FORBIDDEN;
            }
        }
    }
    out
}

/// `O_i = W_o r_i + b_o` for every position; returns row-major `n × k`.
pub fn emissions(r: &[Vec<f64>], w_o: &Tensor, b_o: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(r.len() * b_o.len());
    for row in r {
        out.extend(affine(w_o, row, b_o)?);
    }
    Ok(out)
}

/// Backward of [`emissions`]; returns `∂L/∂r_i` per position.
pub fn emissions_backward(
    r: &[Vec<f64>],
    w_o: &Tensor,
    d_o: &[f64],
    dw_o: &mut [f64],
    db_o: &mut [f64],
) -> Vec<Vec<f64>> {
    let k = w_o.rows();
    r.iter()
        .enumerate()
        .map(|(i, row)| {
            let mut dr = vec![0.0; row.len()];
            affine_backward(w_o, row, &d_o[i * k..(i + 1) * k], dw_o, db_o, &mut dr);
            dr
        })
        .collect()
}

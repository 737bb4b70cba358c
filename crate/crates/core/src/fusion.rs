//! Fusing a character's lexicon words into one vector.
//!
//! Under global attention each candidate word embedding `x_j` is projected to
//! `u_j = W_u x_j + b_u`, scored against the sentence feature `g`, and the
//! softmax weights mix the *raw* embeddings: `h = Σ_j α_j x_j`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    add_assign, affine, axpy, concat, dot, matvec_t_acc, outer_acc, softmax, softmax_backward,
    Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionStrategy {
    #[serde(rename = "global-attention")]
    GlobalAttention,
    #[serde(rename = "self-attention")]
    SelfAttention,
    #[serde(rename = "shortest-first")]
    ShortestFirst,
    #[serde(rename = "longest-first")]
    LongestFirst,
    #[serde(rename = "average")]
    Average,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 5] = [
        FusionStrategy::GlobalAttention,
        FusionStrategy::SelfAttention,
        FusionStrategy::ShortestFirst,
        FusionStrategy::LongestFirst,
        FusionStrategy::Average,
    ];

    fn name(self) -> &'static str {
        match self {
            FusionStrategy::GlobalAttention => "global-attention",
            FusionStrategy::SelfAttention => "self-attention",
            FusionStrategy::ShortestFirst => "shortest-first",
            FusionStrategy::LongestFirst => "longest-first",
            FusionStrategy::Average => "average",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionStrategy::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion strategy {s:?}")))
    }
}

/// Projection used by the attention strategies: `W_u` is `dim(g) × d_w`.
#[derive(Debug, Clone, Copy)]
pub struct FusionParams<'a> {
    pub w_u: &'a Tensor,
    pub b_u: &'a [f64],
}

/// One candidate word. `key` orders words lexicographically among equal
/// lengths and breaks shortest/longest ties (smallest key wins).
#[derive(Debug, Clone, Copy)]
pub struct FusionWord<'a> {
    pub key: u32,
    pub len: usize,
    pub emb: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionCache {
    /// Mixing weight of every word; one-hot for the selection strategies.
    pub alphas: Vec<f64>,
    u: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub d_words: Vec<Vec<f64>>,
    pub dg: Vec<f64>,
}

fn select(words: &[FusionWord], longest: bool) -> usize {
    let mut best = 0;
    for (j, w) in words.iter().enumerate().skip(1) {
        let b = &words[best];
        let better = if longest {
            w.len > b.len
        } else {
            w.len < b.len
        };
        if better || (w.len == b.len && w.key < b.key) {
            best = j;
        }
    }
    best
}

/// Fuses the word set of one position into a `d_w` vector.
pub fn fuse_position(
    words: &[FusionWord],
    g: &[f64],
    params: &FusionParams,
    strategy: FusionStrategy,
    d_w: usize,
) -> Result<(Vec<f64>, FusionCache)> {
    if let Some(w) = words.iter().find(|w| w.emb.len() != d_w) {
        return Err(Error::Shape(format!(
            "word embedding has {} values, expected {d_w}",
            w.emb.len()
        )));
    }
    let mut cache = FusionCache {
        alphas: Vec::new(),
        u: Vec::new(),
        pooled: Vec::new(),
    };
    if words.is_empty() {
        return Ok((vec![0.0; d_w], cache));
    }
    let m = words.len();
    cache.alphas = match strategy {
        FusionStrategy::GlobalAttention | FusionStrategy::SelfAttention => {
            if params.w_u.rows() != g.len() {
                return Err(Error::Shape(format!(
                    "W_u is {:?} but g has {} values",
                    params.w_u.shape(),
                    g.len()
                )));
            }
            cache.u = words
                .iter()
                .map(|w| affine(params.w_u, w.emb, params.b_u))
                .collect::<Result<_>>()?;
            let scores: Vec<f64> = if strategy == FusionStrategy::GlobalAttention {
                cache.u.iter().map(|u| dot(u, g)).collect()
            } else {
                let mut pooled = vec![0.0; g.len()];
                for u in &cache.u {
                    add_assign(&mut pooled, u);
                }
                let s = cache.u.iter().map(|u| dot(u, &pooled)).collect();
                cache.pooled = pooled;
                s
            };
            softmax(&scores)?
        }
        FusionStrategy::ShortestFirst | FusionStrategy::LongestFirst => {
            let pick = select(words, strategy == FusionStrategy::LongestFirst);
            (0..m).map(|j| if j == pick { 1.0 } else { 0.0 }).collect()
        }
        FusionStrategy::Average => vec![1.0 / m as f64; m],
    };
    let mut h = vec![0.0; d_w];
    for (w, &a) in words.iter().zip(&cache.alphas) {
        if a != 0.0 {
            axpy(&mut h, a, w.emb);
        }
    }
    Ok((h, cache))
}

/// Backward of [`fuse_position`]. Projection gradients are accumulated into
/// `dw_u` / `db_u`.
pub fn fuse_backward(
    words: &[FusionWord],
    g: &[f64],
    params: &FusionParams,
    strategy: FusionStrategy,
    cache: &FusionCache,
    dh: &[f64],
    dw_u: &mut [f64],
    db_u: &mut [f64],
) -> FusionGrads {
    let m = words.len();
    let mut out = FusionGrads {
        d_words: words
            .iter()
            .zip(&cache.alphas)
            .map(|(_, &a)| dh.iter().map(|d| a * d).collect())
            .collect(),
        dg: vec![0.0; g.len()],
    };
    if m == 0 {
        return out;
    }
    if !matches!(
        strategy,
        FusionStrategy::GlobalAttention | FusionStrategy::SelfAttention
    ) {
        return out;
    }
    let d_alpha: Vec<f64> = words.iter().map(|w| dot(w.emb, dh)).collect();
    let ds = softmax_backward(&cache.alphas, &d_alpha);
    let dim = g.len();
    let mut du: Vec<Vec<f64>> = vec![vec![0.0; dim]; m];
    if strategy == FusionStrategy::GlobalAttention {
        for j in 0..m {
            axpy(&mut du[j], ds[j], g);
            axpy(&mut out.dg, ds[j], &cache.u[j]);
        }
    } else {
        // s_j = u_j · P with P = Σ_k u_k
        let mut d_pooled = vec![0.0; dim];
        for j in 0..m {
            axpy(&mut du[j], ds[j], &cache.pooled);
            axpy(&mut d_pooled, ds[j], &cache.u[j]);
        }
        for d in &mut du {
            add_assign(d, &d_pooled);
        }
    }
    let d_w = params.w_u.cols();
    for j in 0..m {
        outer_acc(dw_u, &du[j], words[j].emb);
        add_assign(db_u, &du[j]);
        matvec_t_acc(params.w_u.data(), d_w, &du[j], &mut out.d_words[j]);
    }
    out
}

/// `r_i = [h^sw_i ; h^c_i]`.
pub fn final_repr(h_sw: &[f64], h_c: &[f64]) -> Vec<f64> {
    concat(h_sw, h_c)
}

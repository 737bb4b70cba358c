//! Character encoding: embedding lookup followed by a single-layer
//! bidirectional GRU. Row `i` of the output is `[fwd_i ; bwd_i]`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    add_assign, matvec, matvec_t_acc, outer_acc, sigmoid_backward, sigmoid_vec, tanh_backward,
    tanh_vec, Container, ParamStore, Tensor,
};

/// Character inventory; row 0 is the shared unknown-character row when enabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
    unk: bool,
}

impl CharVocab {
    pub const UNK_ROW: usize = 0;

    /// Vocabulary over the given characters (first occurrence order), with an UNK row.
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = CharVocab {
            chars: Vec::new(),
            index: HashMap::new(),
            unk: true,
        };
        for c in chars {
            if !v.index.contains_key(&c) {
                v.index.insert(c, v.chars.len() + 1);
                v.chars.push(c);
            }
        }
        v
    }

    /// Same as [`CharVocab::new`] but unknown characters are an error.
    pub fn without_unk(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = CharVocab::new(chars);
        v.unk = false;
        v
    }

    /// Number of embedding rows, including the UNK row.
    pub fn rows(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn has_unk(&self) -> bool {
        self.unk
    }

    pub fn lookup(&self, c: char) -> Result<usize> {
        match self.index.get(&c) {
            Some(&i) => Ok(i),
            None if self.unk => Ok(Self::UNK_ROW),
            None => Err(Error::Vocab(format!("character {c:?} not in vocabulary"))),
        }
    }
}

/// Externally computed per-character vectors, keyed by sentence id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedChars {
    vectors: HashMap<String, Tensor>,
    dim: usize,
}

impl PrecomputedChars {
    pub fn from_container(c: &Container) -> Result<Self> {
        let mut out = PrecomputedChars::default();
        for (id, t) in &c.tensors {
            if t.shape().len() != 2 {
                return Err(Error::Format(format!(
                    "char vectors for {id:?} must be a matrix, got {:?}",
                    t.shape()
                )));
            }
            if out.dim != 0 && t.cols() != out.dim {
                return Err(Error::Format(format!(
                    "char vectors for {id:?} have dim {}, expected {}",
                    t.cols(),
                    out.dim
                )));
            }
            out.dim = t.cols();
            out.vectors.insert(id.clone(), t.clone());
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: &str, n: usize) -> Result<&Tensor> {
        let t = self
            .vectors
            .get(id)
            .ok_or_else(|| Error::Vocab(format!("no precomputed vectors for sentence {id:?}")))?;
        if t.rows() != n {
            return Err(Error::Shape(format!(
                "sentence {id:?} has {n} characters but {} precomputed rows",
                t.rows()
            )));
        }
        Ok(t)
    }
}

/// Which state serves as the sentence-level feature `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlobalFeature {
    /// `g = h_n = [fwd_n ; bwd_n]`.
    #[serde(rename = "last")]
    LastState,
    /// `g = [fwd_n ; bwd_1]`, the final state of each direction.
    #[serde(rename = "ends")]
    BothEnds,
}

impl std::str::FromStr for GlobalFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(GlobalFeature::LastState),
            "ends" => Ok(GlobalFeature::BothEnds),
            _ => Err(Error::Config(format!(
                "unknown global feature {s:?} (last|ends)"
            ))),
        }
    }
}

impl fmt::Display for GlobalFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GlobalFeature::LastState => "last",
            GlobalFeature::BothEnds => "ends",
        })
    }
}

pub const GATE_NAMES: [&str; 9] = [
    "w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h",
];

/// Borrowed GRU gate weights. `w_*` are `d_h × d_in`, `u_*` are `d_h × d_h`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams<'a> {
    pub d_in: usize,
    pub d_h: usize,
    pub w_z: &'a [f64],
    pub u_z: &'a [f64],
    pub b_z: &'a [f64],
    pub w_r: &'a [f64],
    pub u_r: &'a [f64],
    pub b_r: &'a [f64],
    pub w_h: &'a [f64],
    pub u_h: &'a [f64],
    pub b_h: &'a [f64],
}

impl<'a> GruParams<'a> {
    /// Reads `{prefix}.w_z` .. `{prefix}.b_h` from the store.
    pub fn from_store(store: &'a ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| store.value(&format!("{prefix}.{n}"));
        let w_z = get("w_z")?;
        let (d_h, d_in) = match w_z.shape() {
            [h, i] => (*h, *i),
            s => return Err(Error::Shape(format!("{prefix}.w_z has shape {s:?}"))),
        };
        let p = GruParams {
            d_in,
            d_h,
            w_z: w_z.data(),
            u_z: get("u_z")?.data(),
            b_z: get("b_z")?.data(),
            w_r: get("w_r")?.data(),
            u_r: get("u_r")?.data(),
            b_r: get("b_r")?.data(),
            w_h: get("w_h")?.data(),
            u_h: get("u_h")?.data(),
            b_h: get("b_h")?.data(),
        };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let (i, h) = (self.d_in, self.d_h);
        let expect = [h * i, h * h, h, h * i, h * h, h, h * i, h * h, h];
        let got = [
            self.w_z.len(),
            self.u_z.len(),
            self.b_z.len(),
            self.w_r.len(),
            self.u_r.len(),
            self.b_r.len(),
            self.w_h.len(),
            self.u_h.len(),
            self.b_h.len(),
        ];
        if expect != got {
            return Err(Error::Shape(format!(
                "GRU gate sizes {got:?} do not match d_in={i}, d_h={h}"
            )));
        }
        Ok(())
    }
}

/// Owned gate weights, mostly for tests and initialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub d_in: usize,
    pub d_h: usize,
    /// In [`GATE_NAMES`] order.
    pub gates: [Vec<f64>; 9],
}

impl GruWeights {
    pub fn shapes(d_in: usize, d_h: usize) -> [Vec<usize>; 9] {
        let w = vec![d_h, d_in];
        let u = vec![d_h, d_h];
        let b = vec![d_h];
        [
            w.clone(),
            u.clone(),
            b.clone(),
            w.clone(),
            u.clone(),
            b.clone(),
            w,
            u,
            b,
        ]
    }

    pub fn view(&self) -> GruParams<'_> {
        let g = &self.gates;
        GruParams {
            d_in: self.d_in,
            d_h: self.d_h,
            w_z: &g[0],
            u_z: &g[1],
            b_z: &g[2],
            w_r: &g[3],
            u_r: &g[4],
            b_r: &g[5],
            w_h: &g[6],
            u_h: &g[7],
            b_h: &g[8],
        }
    }
}

/// Gradient accumulators for one GRU, in [`GATE_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GruGrads(pub [Vec<f64>; 9]);

impl GruGrads {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        GruGrads(GruWeights::shapes(d_in, d_h).map(|s| vec![0.0; s.iter().product()]))
    }

    pub fn add(&mut self, other: &GruGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            add_assign(a, b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    h_tilde: Vec<f64>,
    rh: Vec<f64>,
}

fn gate_pre(w: &[f64], u: &[f64], b: &[f64], x: &[f64], h: &[f64], d_h: usize) -> Vec<f64> {
    let mut a = vec![0.0; d_h];
    let mut tmp = vec![0.0; d_h];
    matvec(w, x.len(), x, &mut a);
    matvec(u, h.len(), h, &mut tmp);
    for ((a, t), b) in a.iter_mut().zip(&tmp).zip(b) {
        *a += t + b;
    }
    a
}

/// One GRU step:
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_step(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<(Vec<f64>, GruStepCache)> {
    if x.len() != p.d_in || h_prev.len() != p.d_h {
        return Err(Error::Shape(format!(
            "gru_step: x is [{}], h is [{}], gates expect [{}] and [{}]",
            x.len(),
            h_prev.len(),
            p.d_in,
            p.d_h
        )));
    }
    let d_h = p.d_h;
    let z = sigmoid_vec(&gate_pre(p.w_z, p.u_z, p.b_z, x, h_prev, d_h));
    let r = sigmoid_vec(&gate_pre(p.w_r, p.u_r, p.b_r, x, h_prev, d_h));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let h_tilde = tanh_vec(&gate_pre(p.w_h, p.u_h, p.b_h, x, &rh, d_h));
    let h: Vec<f64> = (0..d_h)
        .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * h_tilde[k])
        .collect();
    let cache = GruStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        h_tilde,
        rh,
    };
    Ok((h, cache))
}

/// Backward of [`gru_step`]. Accumulates weight gradients and `∂L/∂x` into
/// `dx`; returns `∂L/∂h_prev`.
pub fn gru_step_backward(
    cache: &GruStepCache,
    p: &GruParams,
    dh: &[f64],
    grads: &mut GruGrads,
    dx: &mut [f64],
) -> Vec<f64> {
    let d_h = p.d_h;
    let d_in = p.d_in;
    let GruStepCache {
        x,
        h_prev,
        z,
        r,
        h_tilde,
        rh,
    } = cache;
    let [gw_z, gu_z, gb_z, gw_r, gu_r, gb_r, gw_h, gu_h, gb_h] = &mut grads.0;

    let mut dh_prev: Vec<f64> = (0..d_h).map(|k| dh[k] * (1.0 - z[k])).collect();
    let dz: Vec<f64> = (0..d_h).map(|k| dh[k] * (h_tilde[k] - h_prev[k])).collect();
    let dht: Vec<f64> = (0..d_h).map(|k| dh[k] * z[k]).collect();

    // candidate
    let da_h = tanh_backward(h_tilde, &dht);
    outer_acc(gw_h, &da_h, x);
    outer_acc(gu_h, &da_h, rh);
    add_assign(gb_h, &da_h);
    matvec_t_acc(p.w_h, d_in, &da_h, dx);
    let mut drh = vec![0.0; d_h];
    matvec_t_acc(p.u_h, d_h, &da_h, &mut drh);
    let dr: Vec<f64> = (0..d_h).map(|k| drh[k] * h_prev[k]).collect();
    for k in 0..d_h {
        dh_prev[k] += drh[k] * r[k];
    }

    // update and reset gates
    for (da, gw, gu, gb, w, u) in [
        (
            sigmoid_backward(z, &dz),
            &mut *gw_z,
            &mut *gu_z,
            &mut *gb_z,
            p.w_z,
            p.u_z,
        ),
        (
            sigmoid_backward(r, &dr),
            &mut *gw_r,
            &mut *gu_r,
            &mut *gb_r,
            p.w_r,
            p.u_r,
        ),
    ] {
        outer_acc(gw, &da, x);
        outer_acc(gu, &da, h_prev);
        add_assign(gb, &da);
        matvec_t_acc(w, d_in, &da, dx);
        matvec_t_acc(u, d_h, &da, &mut dh_prev);
    }
    dh_prev
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `n` rows of size `2 d_h`.
    pub h: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    global: GlobalFeature,
    fwd: Vec<GruStepCache>,
    /// Indexed by position, not by processing order.
    bwd: Vec<GruStepCache>,
}

/// Runs the forward GRU over positions `1..n` and the backward GRU over
/// `n..1`, both from zero states.
pub fn encode_chars(
    xs: &[Vec<f64>],
    fwd: &GruParams,
    bwd: &GruParams,
    global: GlobalFeature,
) -> Result<EncoderOutput> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::Argument("cannot encode an empty sentence".into()));
    }
    if fwd.d_h != bwd.d_h {
        return Err(Error::Shape(format!(
            "forward GRU has d_h={}, backward has d_h={}",
            fwd.d_h, bwd.d_h
        )));
    }
    let d_h = fwd.d_h;
    let mut fwd_states = Vec::with_capacity(n);
    let mut fwd_caches = Vec::with_capacity(n);
    let mut h = vec![0.0; d_h];
    for x in xs {
        let (next, cache) = gru_step(x, &h, fwd)?;
        fwd_caches.push(cache);
        fwd_states.push(next.clone());
        h = next;
    }
    let mut bwd_states = vec![Vec::new(); n];
    let mut bwd_caches: Vec<Option<GruStepCache>> = vec![None; n];
    let mut h = vec![0.0; d_h];
    for i in (0..n).rev() {
        let (next, cache) = gru_step(&xs[i], &h, bwd)?;
        bwd_caches[i] = Some(cache);
        bwd_states[i] = next.clone();
        h = next;
    }
    let rows: Vec<Vec<f64>> = fwd_states
        .iter()
        .zip(&bwd_states)
        .map(|(f, b)| crate::numerics::concat(f, b))
        .collect();
    let g = match global {
        GlobalFeature::LastState => rows[n - 1].clone(),
        GlobalFeature::BothEnds => crate::numerics::concat(&fwd_states[n - 1], &bwd_states[0]),
    };
    crate::numerics::check_finite(&g, "encoder output")?;
    Ok(EncoderOutput {
        h: rows,
        g,
        global,
        fwd: fwd_caches,
        bwd: bwd_caches.into_iter().map(Option::unwrap).collect(),
    })
}

/// Backpropagates `∂L/∂H` and `∂L/∂g` through both directions. Returns `∂L/∂x`
/// per position.
pub fn encode_backward(
    out: &EncoderOutput,
    fwd: &GruParams,
    bwd: &GruParams,
    dh_rows: &[Vec<f64>],
    dg: &[f64],
    grads_fwd: &mut GruGrads,
    grads_bwd: &mut GruGrads,
) -> Vec<Vec<f64>> {
    let n = out.h.len();
    let d_h = fwd.d_h;
    let mut d_fwd: Vec<Vec<f64>> = dh_rows.iter().map(|r| r[..d_h].to_vec()).collect();
    let mut d_bwd: Vec<Vec<f64>> = dh_rows.iter().map(|r| r[d_h..].to_vec()).collect();
    match out.global {
        GlobalFeature::LastState => {
            add_assign(&mut d_fwd[n - 1], &dg[..d_h]);
            add_assign(&mut d_bwd[n - 1], &dg[d_h..]);
        }
        GlobalFeature::BothEnds => {
            add_assign(&mut d_fwd[n - 1], &dg[..d_h]);
            add_assign(&mut d_bwd[0], &dg[d_h..]);
        }
    }

    let mut dxs = vec![vec![0.0; fwd.d_in]; n];
    let mut carry = vec![0.0; d_h];
    for i in (0..n).rev() {
        add_assign(&mut d_fwd[i], &carry);
        carry = gru_step_backward(&out.fwd[i], fwd, &d_fwd[i], grads_fwd, &mut dxs[i]);
    }
    let mut carry = vec![0.0; d_h];
    for i in 0..n {
        add_assign(&mut d_bwd[i], &carry);
        carry = gru_step_backward(&out.bwd[i], bwd, &d_bwd[i], grads_bwd, &mut dxs[i]);
    }
    dxs
}

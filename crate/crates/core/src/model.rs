//! The full tagger: character encoder, lexicon fusion and CRF, with the
//! per-sentence loss, its gradients and decoding.
//!
//! Parameter names in the store:
//!
//! | name            | shape              |
//! |-----------------|--------------------|
//! | `char_emb`      | `V_c × d_c`        |
//! | `gru_fwd.*`     | GRU gates          |
//! | `gru_bwd.*`     | GRU gates          |
//! | `word_emb`      | `W × d_w`          |
//! | `fusion.w_u`    | `2d_h × d_w`       |
//! | `fusion.b_u`    | `2d_h`             |
//! | `crf.w_o`       | `K × (d_w + 2d_h)` |
//! | `crf.b_o`       | `K`                |
//! | `crf.trans`     | `(K+2) × (K+2)`    |
//!
//! Row `j` of `word_emb` belongs to lexicon word id `j`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{init_bound, EmbeddingTable, Sentence, TagScheme};
use crate::crf::{self, BoundaryMode, Lattice};
use crate::encoder::{
    encode_backward, encode_chars, CharVocab, EncoderOutput, GlobalFeature, GruGrads, GruParams,
    GruWeights, PrecomputedChars, GATE_NAMES,
};
use crate::error::{Error, Result};
use crate::fusion::{
    final_repr, fuse_backward, fuse_position, FusionCache, FusionParams, FusionStrategy, FusionWord,
};
use crate::lexicon::{knowledge_select, KnowledgeMode, Lexicon, WordId};
use crate::numerics::{add_assign, dropout_mask, DropoutMask, ParamStore, Tensor};

pub const CHAR_EMB: &str = "char_emb";
pub const GRU_FWD: &str = "gru_fwd";
pub const GRU_BWD: &str = "gru_bwd";
pub const WORD_EMB: &str = "word_emb";
pub const FUSION_W_U: &str = "fusion.w_u";
pub const FUSION_B_U: &str = "fusion.b_u";
pub const CRF_W_O: &str = "crf.w_o";
pub const CRF_B_O: &str = "crf.b_o";
pub const CRF_TRANS: &str = "crf.trans";

/// Architecture and the switches that change the forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Rows of `char_emb`; 0 when characters come from precomputed vectors.
    pub char_rows: usize,
    pub d_c: usize,
    /// Hidden size per direction.
    pub d_h: usize,
    pub d_w: usize,
    pub n_words: usize,
    pub n_tags: usize,
    pub fusion: FusionStrategy,
    pub global: GlobalFeature,
    pub boundary: BoundaryMode,
    pub dropout: f64,
}

impl ModelSpec {
    pub fn repr_dim(&self) -> usize {
        self.d_w + 2 * self.d_h
    }

    pub fn precomputed(&self) -> bool {
        self.char_rows == 0
    }
}

/// Fresh parameters. `word_emb` must be `n_words × d_w`; other tensors are
/// initialised uniformly with bound `√(3 / fan_in)` and zero biases.
pub fn init_params<R: Rng + ?Sized>(
    spec: &ModelSpec,
    word_emb: Tensor,
    rng: &mut R,
) -> Result<ParamStore> {
    if word_emb.shape() != [spec.n_words, spec.d_w] {
        return Err(Error::Shape(format!(
            "word embeddings are {:?}, expected [{}, {}]",
            word_emb.shape(),
            spec.n_words,
            spec.d_w
        )));
    }
    if spec.d_h == 0 || spec.d_c == 0 || spec.d_w == 0 || spec.n_tags == 0 {
        return Err(Error::Config("model dimensions must be positive".into()));
    }
    let mut store = ParamStore::new();
    if !spec.precomputed() {
        store.insert(
            CHAR_EMB,
            Tensor::uniform(&[spec.char_rows, spec.d_c], init_bound(spec.d_c), rng),
        )?;
    }
    for prefix in [GRU_FWD, GRU_BWD] {
        for (name, shape) in GATE_NAMES
            .iter()
            .zip(GruWeights::shapes(spec.d_c, spec.d_h))
        {
            let t = if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                Tensor::uniform(&shape, init_bound(shape[1]), rng)
            };
            store.insert(&format!("{prefix}.{name}"), t)?;
        }
    }
    store.insert(WORD_EMB, word_emb)?;
    store.insert(
        FUSION_W_U,
        Tensor::uniform(&[2 * spec.d_h, spec.d_w], init_bound(spec.d_w), rng),
    )?;
    store.insert(FUSION_B_U, Tensor::zeros(&[2 * spec.d_h]))?;
    store.insert(
        CRF_W_O,
        Tensor::uniform(
            &[spec.n_tags, spec.repr_dim()],
            init_bound(spec.repr_dim()),
            rng,
        ),
    )?;
    store.insert(CRF_B_O, Tensor::zeros(&[spec.n_tags]))?;
    store.insert(CRF_TRANS, crf::init_transitions(spec.n_tags))?;
    Ok(store)
}

/// `n_words × d_w` matrix with row `j` taken from the embedding row of word `j`.
pub fn word_matrix(lexicon: &Lexicon, table: &EmbeddingTable) -> Result<Tensor> {
    let d = table.dim();
    let mut data = Vec::with_capacity(lexicon.len() * d);
    for w in lexicon.words() {
        let row = w.emb_row.ok_or_else(|| {
            Error::Build(format!("lexicon word {:?} has no embedding row", w.text))
        })?;
        data.extend_from_slice(table.row(row));
    }
    Tensor::from_vec(&[lexicon.len(), d], data)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CharInput {
    Ids(Vec<usize>),
    Vectors(Tensor),
}

/// Where character inputs come from when building instances.
#[derive(Debug, Clone, Copy)]
pub enum CharSource<'a> {
    Vocab(&'a CharVocab),
    Precomputed(&'a PrecomputedChars),
}

/// A sentence prepared for the model: character inputs plus the selected
/// lexicon words `(id, length)` at every position.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub chars: CharInput,
    pub words: Vec<Vec<(WordId, usize)>>,
    pub tags: Option<Vec<usize>>,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn make_instance(
    sentence: &Sentence,
    lexicon: &Lexicon,
    mode: KnowledgeMode,
    source: CharSource,
) -> Result<Instance> {
    if sentence.chars.is_empty() {
        return Err(Error::Argument(format!(
            "sentence {} is empty",
            sentence.id
        )));
    }
    let chars = match source {
        CharSource::Vocab(v) => CharInput::Ids(
            sentence
                .chars
                .iter()
                .map(|&c| v.lookup(c))
                .collect::<Result<_>>()?,
        ),
        CharSource::Precomputed(p) => {
            CharInput::Vectors(p.get(&sentence.id, sentence.len())?.clone())
        }
    };
    let sets = knowledge_select(&lexicon.match_sentence(&sentence.chars), mode);
    let words = sets
        .into_iter()
        .map(|s| s.into_iter().map(|id| (id, lexicon.word(id).len)).collect())
        .collect();
    Ok(Instance {
        id: sentence.id.clone(),
        chars,
        words,
        tags: sentence.tags.clone(),
    })
}

struct View<'a> {
    char_emb: Option<&'a Tensor>,
    fwd: GruParams<'a>,
    bwd: GruParams<'a>,
    word_emb: &'a Tensor,
    fusion: FusionParams<'a>,
    w_o: &'a Tensor,
    b_o: &'a [f64],
    trans: &'a [f64],
}

impl<'a> View<'a> {
    fn new(spec: &ModelSpec, store: &'a ParamStore) -> Result<Self> {
        let v = View {
            char_emb: if spec.precomputed() {
                None
            } else {
                Some(store.value(CHAR_EMB)?)
            },
            fwd: GruParams::from_store(store, GRU_FWD)?,
            bwd: GruParams::from_store(store, GRU_BWD)?,
            word_emb: store.value(WORD_EMB)?,
            fusion: FusionParams {
                w_u: store.value(FUSION_W_U)?,
                b_u: store.value(FUSION_B_U)?.data(),
            },
            w_o: store.value(CRF_W_O)?,
            b_o: store.value(CRF_B_O)?.data(),
            trans: store.value(CRF_TRANS)?.data(),
        };
        if v.trans.len() != (spec.n_tags + 2) * (spec.n_tags + 2) || v.b_o.len() != spec.n_tags {
            return Err(Error::Shape(format!(
                "CRF parameters do not match {} tags",
                spec.n_tags
            )));
        }
        Ok(v)
    }
}

struct Pass {
    xs: Vec<Vec<f64>>,
    enc: EncoderOutput,
    c_masks: Vec<DropoutMask>,
    sw_masks: Vec<DropoutMask>,
    fusion: Vec<FusionCache>,
    r: Vec<Vec<f64>>,
    o: Vec<f64>,
}

fn fusion_words<'a>(view: &View<'a>, set: &[(WordId, usize)]) -> Vec<FusionWord<'a>> {
    set.iter()
        .map(|&(id, len)| FusionWord {
            key: id,
            len,
            emb: view.word_emb.row(id as usize),
        })
        .collect()
}

fn forward<R: Rng + ?Sized>(
    spec: &ModelSpec,
    view: &View,
    inst: &Instance,
    train: bool,
    rng: &mut R,
) -> Result<Pass> {
    let n = inst.len();
    if n == 0 {
        return Err(Error::Argument(format!("instance {} is empty", inst.id)));
    }
    let xs: Vec<Vec<f64>> = match (&inst.chars, view.char_emb) {
        (CharInput::Ids(ids), Some(table)) => {
            if ids.len() != n {
                return Err(Error::Shape(format!(
                    "instance {}: {} char ids for {n} positions",
                    inst.id,
                    ids.len()
                )));
            }
            ids.iter()
                .map(|&i| {
                    if i >= table.rows() {
                        Err(Error::Vocab(format!("character row {i} out of range")))
                    } else {
                        Ok(table.row(i).to_vec())
                    }
                })
                .collect::<Result<_>>()?
        }
        (CharInput::Vectors(t), None) => {
            if t.rows() != n || t.cols() != spec.d_c {
                return Err(Error::Shape(format!(
                    "instance {}: precomputed vectors {:?}, expected [{n}, {}]",
                    inst.id,
                    t.shape(),
                    spec.d_c
                )));
            }
            (0..n).map(|i| t.row(i).to_vec()).collect()
        }
        _ => {
            return Err(Error::Config(
                "character input kind does not match the model (table vs precomputed)".into(),
            ))
        }
    };
    let enc = encode_chars(&xs, &view.fwd, &view.bwd, spec.global)?;
    let mut c_masks = Vec::with_capacity(n);
    let mut sw_masks = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        let words = fusion_words(view, &inst.words[i]);
        for w in &words {
            if w.key as usize >= view.word_emb.rows() {
                return Err(Error::Vocab(format!("word id {} out of range", w.key)));
            }
        }
        let (h_sw, cache) = fuse_position(&words, &enc.g, &view.fusion, spec.fusion, spec.d_w)?;
        let m_c = dropout_mask(2 * spec.d_h, spec.dropout, train, rng)?;
        let m_sw = dropout_mask(spec.d_w, spec.dropout, train, rng)?;
        r.push(final_repr(&m_sw.apply(&h_sw), &m_c.apply(&enc.h[i])));
        c_masks.push(m_c);
        sw_masks.push(m_sw);
        caches.push(cache);
    }
    let o = crf::emissions(&r, view.w_o, view.b_o)?;
    crate::numerics::check_finite(&o, "emission scores")?;
    Ok(Pass {
        xs,
        enc,
        c_masks,
        sw_masks,
        fusion: caches,
        r,
        o,
    })
}

/// Gradients of one or more sentences. Embedding gradients are kept sparse
/// by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub char_emb: BTreeMap<usize, Vec<f64>>,
    pub gru_fwd: GruGrads,
    pub gru_bwd: GruGrads,
    pub word_emb: BTreeMap<usize, Vec<f64>>,
    pub w_u: Vec<f64>,
    pub b_u: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
    pub trans: Vec<f64>,
}

fn add_row(map: &mut BTreeMap<usize, Vec<f64>>, row: usize, g: &[f64]) {
    match map.get_mut(&row) {
        Some(acc) => add_assign(acc, g),
        None => {
            map.insert(row, g.to_vec());
        }
    }
}

impl Grads {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let k = spec.n_tags;
        Grads {
            char_emb: BTreeMap::new(),
            gru_fwd: GruGrads::zeros(spec.d_c, spec.d_h),
            gru_bwd: GruGrads::zeros(spec.d_c, spec.d_h),
            word_emb: BTreeMap::new(),
            w_u: vec![0.0; 2 * spec.d_h * spec.d_w],
            b_u: vec![0.0; 2 * spec.d_h],
            w_o: vec![0.0; k * spec.repr_dim()],
            b_o: vec![0.0; k],
            trans: vec![0.0; (k + 2) * (k + 2)],
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (&r, g) in &other.char_emb {
            add_row(&mut self.char_emb, r, g);
        }
        for (&r, g) in &other.word_emb {
            add_row(&mut self.word_emb, r, g);
        }
        self.gru_fwd.add(&other.gru_fwd);
        self.gru_bwd.add(&other.gru_bwd);
        add_assign(&mut self.w_u, &other.w_u);
        add_assign(&mut self.b_u, &other.b_u);
        add_assign(&mut self.w_o, &other.w_o);
        add_assign(&mut self.b_o, &other.b_o);
        add_assign(&mut self.trans, &other.trans);
    }

    /// Adds these gradients into the `grad` buffers of `store`.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        let rows =
            |store: &mut ParamStore, name: &str, map: &BTreeMap<usize, Vec<f64>>| -> Result<()> {
                if map.is_empty() {
                    return Ok(());
                }
                let p = store.get_mut(name)?;
                for (&r, g) in map {
                    add_assign(p.grad.row_mut(r), g);
                }
                Ok(())
            };
        rows(store, CHAR_EMB, &self.char_emb)?;
        rows(store, WORD_EMB, &self.word_emb)?;
        for (prefix, gg) in [(GRU_FWD, &self.gru_fwd), (GRU_BWD, &self.gru_bwd)] {
            for (name, g) in GATE_NAMES.iter().zip(&gg.0) {
                add_assign(
                    store.get_mut(&format!("{prefix}.{name}"))?.grad.data_mut(),
                    g,
                );
            }
        }
        for (name, g) in [
            (FUSION_W_U, &self.w_u),
            (FUSION_B_U, &self.b_u),
            (CRF_W_O, &self.w_o),
            (CRF_B_O, &self.b_o),
            (CRF_TRANS, &self.trans),
        ] {
            add_assign(store.get_mut(name)?.grad.data_mut(), g);
        }
        Ok(())
    }
}

fn gold(inst: &Instance, k: usize) -> Result<&[usize]> {
    let tags = inst
        .tags
        .as_deref()
        .ok_or_else(|| Error::Argument(format!("instance {} has no gold tags", inst.id)))?;
    if tags.len() != inst.len() {
        return Err(Error::Shape(format!(
            "instance {}: {} tags for {} positions",
            inst.id,
            tags.len(),
            inst.len()
        )));
    }
    if let Some(&t) = tags.iter().find(|&&t| t >= k) {
        return Err(Error::Argument(format!(
            "instance {}: tag index {t} out of range",
            inst.id
        )));
    }
    Ok(tags)
}

/// Negative log-likelihood of the gold tags with dropout disabled.
pub fn sentence_nll(spec: &ModelSpec, store: &ParamStore, inst: &Instance) -> Result<f64> {
    let view = View::new(spec, store)?;
    let tags = gold(inst, spec.n_tags)?;
    let pass = forward(
        spec,
        &view,
        inst,
        false,
        &mut rand::rngs::mock::StepRng::new(0, 0),
    )?;
    let lat = Lattice::new(&pass.o, inst.len(), spec.n_tags, view.trans)?;
    Ok(crf::nll(&lat, tags)?.nll)
}

/// Loss of one sentence and its gradients. Dropout is active when `rng` is given.
pub fn loss_and_grads<R: Rng + ?Sized>(
    spec: &ModelSpec,
    store: &ParamStore,
    inst: &Instance,
    rng: Option<&mut R>,
) -> Result<(f64, Grads)> {
    let view = View::new(spec, store)?;
    let tags = gold(inst, spec.n_tags)?;
    let mut null = rand::rngs::mock::StepRng::new(0, 0);
    let pass = match rng {
        Some(r) => forward(spec, &view, inst, true, r)?,
        None => forward(spec, &view, inst, false, &mut null)?,
    };
    let n = inst.len();
    let k = spec.n_tags;
    let lat = Lattice::new(&pass.o, n, k, view.trans)?;
    let out = crf::nll(&lat, tags)?;

    let mut g = Grads::zeros(spec);
    g.trans = out.d_t;
    crf::mask_transition_grad(&mut g.trans, k, spec.boundary);
    let dr = crf::emissions_backward(&pass.r, view.w_o, &out.d_o, &mut g.w_o, &mut g.b_o);

    let mut dh_rows = Vec::with_capacity(n);
    let mut dg = vec![0.0; pass.enc.g.len()];
    for i in 0..n {
        let dh_sw = pass.sw_masks[i].backward(&dr[i][..spec.d_w]);
        dh_rows.push(pass.c_masks[i].backward(&dr[i][spec.d_w..]));
        if inst.words[i].is_empty() {
            continue;
        }
        let words = fusion_words(&view, &inst.words[i]);
        let fg = fuse_backward(
            &words,
            &pass.enc.g,
            &view.fusion,
            spec.fusion,
            &pass.fusion[i],
            &dh_sw,
            &mut g.w_u,
            &mut g.b_u,
        );
        add_assign(&mut dg, &fg.dg);
        for (&(id, _), dw) in inst.words[i].iter().zip(&fg.d_words) {
            add_row(&mut g.word_emb, id as usize, dw);
        }
    }
    let dxs = encode_backward(
        &pass.enc,
        &view.fwd,
        &view.bwd,
        &dh_rows,
        &dg,
        &mut g.gru_fwd,
        &mut g.gru_bwd,
    );
    if let CharInput::Ids(ids) = &inst.chars {
        for (&id, dx) in ids.iter().zip(&dxs) {
            add_row(&mut g.char_emb, id, dx);
        }
    }
    debug_assert_eq!(pass.xs.len(), n);
    Ok((out.nll, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tags: Vec<usize>,
    pub score: f64,
    /// Attention weights per position, aligned with the instance's word sets.
    pub alphas: Vec<Vec<f64>>,
}

/// Viterbi decoding. With `mask`, transitions the scheme forbids are excluded.
pub fn decode(
    spec: &ModelSpec,
    store: &ParamStore,
    inst: &Instance,
    mask: Option<&TagScheme>,
) -> Result<Decoded> {
    let view = View::new(spec, store)?;
    let pass = forward(
        spec,
        &view,
        inst,
        false,
        &mut rand::rngs::mock::StepRng::new(0, 0),
    )?;
    let k = spec.n_tags;
    let masked;
    let trans = match mask {
        Some(scheme) => {
            if scheme.len() != k {
                return Err(Error::Scheme(format!(
                    "scheme has {} tags, model has {k}",
                    scheme.len()
                )));
            }
            masked = crf::masked_transitions(view.trans, k, |a, b| scheme.allowed(a, b));
            &masked[..]
        }
        None => view.trans,
    };
    let lat = Lattice::new(&pass.o, inst.len(), k, trans)?;
    let (tags, score) = crf::viterbi(&lat);
    Ok(Decoded {
        tags,
        score,
        alphas: pass.fusion.into_iter().map(|c| c.alphas).collect(),
    })
}

/// A random small model (`d_c = d_h = 4`, `d_w = 3`, five tags) and an
/// `n`-character sentence with random word sets, for gradient checking.
/// Biases and transitions are perturbed away from their zero initialisation.
pub fn tiny_problem<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    fusion: FusionStrategy,
    global: GlobalFeature,
    boundary: BoundaryMode,
) -> Result<(ModelSpec, ParamStore, Instance)> {
    if n == 0 {
        return Err(Error::Argument(
            "tiny problem needs at least one character".into(),
        ));
    }
    let spec = ModelSpec {
        char_rows: 6,
        d_c: 4,
        d_h: 4,
        d_w: 3,
        n_words: 5,
        n_tags: 5,
        fusion,
        global,
        boundary,
        dropout: 0.1,
    };
    let mut store = init_params(&spec, Tensor::uniform(&[5, 3], 1.0, rng), rng)?;
    for (name, p) in store.iter_mut() {
        if name.contains(".b_") || name == CRF_TRANS {
            for v in p.value.data_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
    }
    crf::pin_fixed(&mut store.get_mut(CRF_TRANS)?.value, spec.n_tags);
    if boundary == BoundaryMode::Zero {
        let t = &mut store.get_mut(CRF_TRANS)?.value;
        let (k, d) = (spec.n_tags, spec.n_tags + 2);
        for y in 0..k {
            t.data_mut()[k * d + y] = 0.0;
            t.data_mut()[y * d + k + 1] = 0.0;
        }
    }
    let word_lens = [2, 2, 3, 3, 4];
    let words = (0..n)
        .map(|_| {
            let m = rng.gen_range(0..=3);
            let mut ids: Vec<WordId> = rand::seq::index::sample(rng, 5, m)
                .into_iter()
                .map(|i| i as WordId)
                .collect();
            ids.sort_unstable();
            ids.into_iter()
                .map(|id| (id, word_lens[id as usize]))
                .collect()
        })
        .collect();
    let inst = Instance {
        id: "tiny".into(),
        chars: CharInput::Ids((0..n).map(|_| rng.gen_range(0..6)).collect()),
        words,
        tags: Some((0..n).map(|_| rng.gen_range(0..spec.n_tags)).collect()),
    };
    Ok((spec, store, inst))
}

/// Analytic NLL gradients (dropout off) against central differences over
/// every parameter component.
pub fn check_gradients<R: Rng + ?Sized>(
    spec: &ModelSpec,
    store: &mut ParamStore,
    inst: &Instance,
    eps: f64,
    rng: &mut R,
) -> Result<crate::numerics::GradCheckReport> {
    let (_, g) = loss_and_grads::<R>(spec, store, inst, None)?;
    store.zero_grads();
    g.apply_to(store)?;
    crate::numerics::grad_check(store, eps, None, rng, |s| sentence_nll(spec, s, inst))
}

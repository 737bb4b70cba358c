//! Mini-batch training with Adam, dev-F1 model selection and checkpoints.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, EmbeddingTable, SchemeKind, Sentence, TagScheme, DEFAULT_MAX_LEN};
use crate::crf::BoundaryMode;
use crate::encoder::{CharVocab, GlobalFeature, PrecomputedChars};
use crate::error::{Error, Result};
use crate::eval::{self, Scores, SentenceSpans};
use crate::fusion::FusionStrategy;
use crate::lexicon::{
    build_lexicon, KnowledgeMode, Lexicon, LexiconConfig, DEFAULT_MAX_WORD_LEN,
    DEFAULT_MIN_WORD_LEN,
};
use crate::model::{self, CharSource, Grads, Instance, ModelSpec, WORD_EMB};
use crate::numerics::{Container, ParamStore, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub d_w: usize,
    /// Character embedding size (ignored with precomputed vectors).
    pub d_c: usize,
    /// BiGRU size over both directions.
    pub bigru_total: usize,
    pub layers: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub knowledge_mode: KnowledgeMode,
    pub fusion: FusionStrategy,
    pub freeze_word_emb: bool,
    pub clip_norm: Option<f64>,
    pub workers: usize,
    pub scheme: SchemeKind,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub global_feature: GlobalFeature,
    pub boundary: BoundaryMode,
    pub mask_illegal: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            batch_size: 32,
            dropout: 0.1,
            max_len: DEFAULT_MAX_LEN,
            d_w: 50,
            d_c: 64,
            bigru_total: 512,
            layers: 1,
            epochs: 100,
            patience: 10,
            seed: 42,
            knowledge_mode: KnowledgeMode::Slk,
            fusion: FusionStrategy::GlobalAttention,
            freeze_word_emb: false,
            clip_norm: None,
            workers: 1,
            scheme: SchemeKind::Bioes,
            min_word_len: DEFAULT_MIN_WORD_LEN,
            max_word_len: DEFAULT_MAX_WORD_LEN,
            global_feature: GlobalFeature::LastState,
            boundary: BoundaryMode::StartStop,
            mask_illegal: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 22] = [
        "lr",
        "batch_size",
        "dropout",
        "max_len",
        "d_w",
        "d_c",
        "bigru_total",
        "layers",
        "epochs",
        "patience",
        "seed",
        "knowledge_mode",
        "fusion",
        "freeze_word_emb",
        "clip_norm",
        "workers",
        "scheme",
        "min_word_len",
        "max_word_len",
        "global_feature",
        "boundary",
        "mask_illegal",
    ];

    /// Sets one field from its textual form. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "d_w" => self.d_w = parse(key, v)?,
            "d_c" => self.d_c = parse(key, v)?,
            "bigru_total" => self.bigru_total = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "knowledge_mode" => self.knowledge_mode = v.parse()?,
            "fusion" => self.fusion = v.parse()?,
            "freeze_word_emb" => self.freeze_word_emb = parse(key, v)?,
            "clip_norm" => {
                self.clip_norm = if v.eq_ignore_ascii_case("none") || v.is_empty() {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "workers" => self.workers = parse(key, v)?,
            "scheme" => self.scheme = v.parse()?,
            "min_word_len" => self.min_word_len = parse(key, v)?,
            "max_word_len" => self.max_word_len = parse(key, v)?,
            "global_feature" => self.global_feature = v.parse()?,
            "boundary" => self.boundary = v.parse()?,
            "mask_illegal" => self.mask_illegal = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every field as `(key, value)` in [`TrainConfig::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let vals = [
            self.lr.to_string(),
            self.batch_size.to_string(),
            self.dropout.to_string(),
            self.max_len.to_string(),
            self.d_w.to_string(),
            self.d_c.to_string(),
            self.bigru_total.to_string(),
            self.layers.to_string(),
            self.epochs.to_string(),
            self.patience.to_string(),
            self.seed.to_string(),
            self.knowledge_mode.to_string(),
            self.fusion.to_string(),
            self.freeze_word_emb.to_string(),
            self.clip_norm.map_or("none".to_string(), |c| c.to_string()),
            self.workers.to_string(),
            self.scheme.to_string(),
            self.min_word_len.to_string(),
            self.max_word_len.to_string(),
            self.global_feature.to_string(),
            self.boundary.to_string(),
            self.mask_illegal.to_string(),
        ];
        Self::KEYS.into_iter().zip(vals).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("d_w", self.d_w),
            ("d_c", self.d_c),
            ("bigru_total", self.bigru_total),
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("workers", self.workers),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !self.bigru_total.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "bigru_total must be even, got {}",
                self.bigru_total
            )));
        }
        if self.layers != 1 {
            return Err(Error::Config(format!(
                "only one recurrent layer is supported, got {}",
                self.layers
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        if self.min_word_len == 0 || self.min_word_len > self.max_word_len {
            return Err(Error::Config(format!(
                "invalid word length range [{}, {}]",
                self.min_word_len, self.max_word_len
            )));
        }
        Ok(())
    }

    pub fn lexicon_config(&self) -> LexiconConfig {
        LexiconConfig {
            min_word_len: self.min_word_len,
            max_word_len: self.max_word_len,
        }
    }
}

/// One bias-corrected Adam update of every non-frozen parameter at step `t`
/// (1-based), followed by zeroing all gradients.
pub fn adam_step(store: &mut ParamStore, lr: f64, t: u64, clip_norm: Option<f64>) -> Result<()> {
    if t == 0 {
        return Err(Error::Argument("Adam step counter starts at 1".into()));
    }
    for (name, p) in store.iter() {
        if p.grad.data().iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter {name}"
            )));
        }
    }
    let scale = match clip_norm {
        Some(c) => {
            let norm = store.grad_norm();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let bc1 = 1.0 - ADAM_BETA1.powf(t as f64);
    let bc2 = 1.0 - ADAM_BETA2.powf(t as f64);
    for (_, p) in store.iter_mut() {
        if !p.frozen {
            let n = p.value.len();
            let (value, grad, m, v) = (
                p.value.data_mut(),
                p.grad.data(),
                p.m.data_mut(),
                p.v.data_mut(),
            );
            for i in 0..n {
                let g = grad[i] * scale;
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

/// Everything a model needs besides its parameters.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scheme: TagScheme,
    pub lexicon: Lexicon,
    pub vocab: Option<CharVocab>,
    pub word_emb: Tensor,
    /// Input size of the GRU: `d_c`, or the precomputed vector size.
    pub d_in: usize,
}

/// Builds the lexicon, character vocabulary and initial word matrix.
/// `words` may be empty, which yields an empty lexicon.
pub fn prepare(
    config: &TrainConfig,
    train: &Dataset,
    words: &[String],
    mut table: EmbeddingTable,
    precomputed: Option<&PrecomputedChars>,
) -> Result<Setup> {
    config.validate()?;
    if table.dim() != config.d_w {
        return Err(Error::Config(format!(
            "embedding file has dim {}, but d_w = {}",
            table.dim(),
            config.d_w
        )));
    }
    let mut rng = init_rng(config.seed);
    let lexicon = if words.is_empty() {
        log::warn!("no lexicon words given; every word set will be empty");
        Lexicon::empty(config.lexicon_config())
    } else {
        build_lexicon(words, &mut table, config.lexicon_config(), &mut rng)?
    };
    let word_emb = if lexicon.is_empty() {
        Tensor::zeros(&[0, config.d_w])
    } else {
        model::word_matrix(&lexicon, &table)?
    };
    let (vocab, d_in) = match precomputed {
        Some(p) => (None, p.dim()),
        None => (
            Some(CharVocab::new(
                train.sentences.iter().flat_map(|s| s.chars.iter().copied()),
            )),
            config.d_c,
        ),
    };
    Ok(Setup {
        scheme: train.scheme.clone(),
        lexicon,
        vocab,
        word_emb,
        d_in,
    })
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(2);
    r
}

/// Dropout stream for sentence `index` of optimizer step `step`. Each
/// sentence gets its own window of the stream, so results do not depend on
/// how sentences are split between workers.
fn dropout_rng(seed: u64, step: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    r.set_stream(step);
    r.set_word_pos((index as u128) << 40);
    r
}

/// Position of a ChaCha stream, stored as text since JSON has no u128.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad RNG position {:?}", self.word_pos)))?;
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(pos);
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_dev_f1: f64,
    pub best_epoch: usize,
    pub since_best: usize,
    pub shuffle_rng: RngState,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
    pub seconds: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub spec: ModelSpec,
    pub store: ParamStore,
    /// Parameters of the best epoch so far.
    pub best: ParamStore,
    pub scheme: TagScheme,
    pub lexicon: Lexicon,
    pub vocab: Option<CharVocab>,
    pub state: TrainState,
    shuffle: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, setup: Setup) -> Result<Self> {
        config.validate()?;
        let spec = ModelSpec {
            char_rows: setup.vocab.as_ref().map_or(0, CharVocab::rows),
            d_c: setup.d_in,
            d_h: config.bigru_total / 2,
            d_w: config.d_w,
            n_words: setup.lexicon.len(),
            n_tags: setup.scheme.len(),
            fusion: config.fusion,
            global: config.global_feature,
            boundary: config.boundary,
            dropout: config.dropout,
        };
        let mut rng = init_rng(config.seed);
        // skip past the draws used for unseen lexicon words in `prepare`
        rng.set_stream(3);
        let mut store = model::init_params(&spec, setup.word_emb, &mut rng)?;
        store.get_mut(WORD_EMB)?.frozen = config.freeze_word_emb;
        let shuffle = shuffle_rng(config.seed);
        Ok(Trainer {
            state: TrainState {
                epoch: 0,
                step: 0,
                best_dev_f1: f64::NEG_INFINITY,
                best_epoch: 0,
                since_best: 0,
                shuffle_rng: RngState::capture(config.seed, &shuffle),
            },
            best: values_only(&store)?,
            config,
            spec,
            store,
            scheme: setup.scheme,
            lexicon: setup.lexicon,
            vocab: setup.vocab,
            shuffle,
        })
    }

    pub fn char_source<'a>(
        &'a self,
        precomputed: Option<&'a PrecomputedChars>,
    ) -> Result<CharSource<'a>> {
        match (&self.vocab, precomputed) {
            (Some(v), _) => Ok(CharSource::Vocab(v)),
            (None, Some(p)) => Ok(CharSource::Precomputed(p)),
            (None, None) => Err(Error::Config(
                "model was trained on precomputed character vectors; supply char_vectors".into(),
            )),
        }
    }

    pub fn instances(
        &self,
        sentences: &[Sentence],
        precomputed: Option<&PrecomputedChars>,
    ) -> Result<Vec<Instance>> {
        let source = self.char_source(precomputed)?;
        sentences
            .iter()
            .map(|s| model::make_instance(s, &self.lexicon, self.config.knowledge_mode, source))
            .collect()
    }

    fn batch_grads(&self, batch: &[&Instance]) -> Result<(f64, Grads)> {
        let step = self.state.step;
        let seed = self.config.seed;
        let work = |chunk: &[&Instance], offset: usize| -> Result<(f64, Grads)> {
            let mut loss = 0.0;
            let mut acc = Grads::zeros(&self.spec);
            for (j, inst) in chunk.iter().enumerate() {
                let mut rng = dropout_rng(seed, step, offset + j);
                let (l, g) = model::loss_and_grads(&self.spec, &self.store, inst, Some(&mut rng))?;
                loss += l;
                acc.add(&g);
            }
            Ok((loss, acc))
        };
        let workers = self.config.workers.min(batch.len()).max(1);
        if workers == 1 {
            return work(batch, 0);
        }
        let size = batch.len().div_ceil(workers);
        let parts: Vec<Result<(f64, Grads)>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(size)
                .enumerate()
                .map(|(w, chunk)| s.spawn(move || work(chunk, w * size)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Numeric("worker panicked".into())))
                })
                .collect()
        });
        // ordered reduction
        let mut loss = 0.0;
        let mut acc = Grads::zeros(&self.spec);
        for p in parts {
            let (l, g) = p?;
            loss += l;
            acc.add(&g);
        }
        Ok((loss, acc))
    }

    /// One pass over `train` in a seeded shuffled order. Returns the mean
    /// sentence NLL observed during the epoch.
    pub fn run_epoch(&mut self, train: &[Instance]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = self.batch_grads(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "batch loss is {loss} at step {}",
                    self.state.step + 1
                )));
            }
            total += loss;
            self.store.zero_grads();
            grads.apply_to(&mut self.store)?;
            self.state.step += 1;
            adam_step(
                &mut self.store,
                self.config.lr,
                self.state.step,
                self.config.clip_norm,
            )?;
        }
        self.state.epoch += 1;
        self.state.shuffle_rng = RngState::capture(self.config.seed, &self.shuffle);
        Ok(total / train.len() as f64)
    }

    /// Decodes `instances` with `store` and pairs predictions with gold spans.
    pub fn spans(
        &self,
        store: &ParamStore,
        instances: &[Instance],
    ) -> Result<(Vec<SentenceSpans>, usize)> {
        spans_for(
            &self.spec,
            store,
            &self.scheme,
            instances,
            self.config.mask_illegal,
        )
    }

    pub fn evaluate(&self, store: &ParamStore, instances: &[Instance]) -> Result<Scores> {
        Ok(eval::prf1(&self.spans(store, instances)?.0))
    }

    /// Trains until `epochs` or early stop, calling `log` after every epoch.
    /// `checkpoint`, when given, is rewritten atomically after every epoch.
    pub fn train(
        &mut self,
        train: &[Instance],
        dev: &[Instance],
        checkpoint: Option<&Path>,
        mut log: impl FnMut(&EpochLog),
    ) -> Result<()> {
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        while self.state.epoch < self.config.epochs && self.state.since_best < self.config.patience
        {
            let start = Instant::now();
            let nll = self.run_epoch(train)?;
            let dev_scores = self.evaluate(&self.store, dev)?;
            if dev_scores.f1 > self.state.best_dev_f1 {
                self.state.best_dev_f1 = dev_scores.f1;
                self.state.best_epoch = self.state.epoch;
                self.state.since_best = 0;
                self.best = values_only(&self.store)?;
            } else {
                self.state.since_best += 1;
            }
            if let Some(path) = checkpoint {
                self.checkpoint().save(path)?;
            }
            log(&EpochLog {
                epoch: self.state.epoch,
                train_nll: nll,
                dev_p: dev_scores.p,
                dev_r: dev_scores.r,
                dev_f1: dev_scores.f1,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                format: CHECKPOINT_FORMAT.to_string(),
                config: self.config.clone(),
                spec: self.spec.clone(),
                state: self.state.clone(),
                scheme_kind: self.scheme.kind(),
                labels: self.scheme.labels().to_vec(),
                lexicon: self
                    .lexicon
                    .words()
                    .iter()
                    .map(|w| w.text.clone())
                    .collect(),
                chars: self.vocab.as_ref().map(|v| v.chars().iter().collect()),
            },
            store: self.store.clone(),
            best: self.best.clone(),
        }
    }

    /// Continues training from a checkpoint.
    pub fn resume(ck: Checkpoint) -> Result<Self> {
        let parts = ck.parts()?;
        let shuffle = ck.meta.state.shuffle_rng.restore()?;
        let mut store = ck.store;
        store.get_mut(WORD_EMB)?.frozen = ck.meta.config.freeze_word_emb;
        Ok(Trainer {
            config: ck.meta.config,
            spec: ck.meta.spec,
            store,
            best: ck.best,
            scheme: parts.scheme,
            lexicon: parts.lexicon,
            vocab: parts.vocab,
            state: ck.meta.state,
            shuffle,
        })
    }
}

/// Copy of the parameter values without optimizer state.
fn values_only(store: &ParamStore) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for (name, p) in store.iter() {
        out.insert(name, p.value.clone())?;
    }
    Ok(out)
}

/// Decodes and extracts predicted spans; returns the spans and the number of
/// malformed predicted runs.
pub fn spans_for(
    spec: &ModelSpec,
    store: &ParamStore,
    scheme: &TagScheme,
    instances: &[Instance],
    mask_illegal: bool,
) -> Result<(Vec<SentenceSpans>, usize)> {
    let mut out = Vec::with_capacity(instances.len());
    let mut malformed = 0;
    for inst in instances {
        let decoded = model::decode(spec, store, inst, mask_illegal.then_some(scheme))?;
        let pred = eval::extract_entities(&decoded.tags, scheme);
        malformed += pred.malformed;
        let gold = inst
            .tags
            .as_ref()
            .map(|t| eval::extract_entities(t, scheme).spans)
            .unwrap_or_default();
        out.push(SentenceSpans {
            id: inst.id.clone(),
            len: inst.len(),
            gold,
            pred: pred.spans,
        });
    }
    Ok((out, malformed))
}

pub const CHECKPOINT_FORMAT: &str = "slkner-checkpoint-1";
const BEST_PREFIX: &str = "best/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub config: TrainConfig,
    pub spec: ModelSpec,
    pub state: TrainState,
    pub scheme_kind: SchemeKind,
    pub labels: Vec<String>,
    /// Lexicon words in id order.
    pub lexicon: Vec<String>,
    /// Character vocabulary in row order (after the UNK row); absent with
    /// precomputed vectors.
    pub chars: Option<String>,
}

/// Training state plus the current and best parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub store: ParamStore,
    pub best: ParamStore,
}

/// Non-parameter pieces rebuilt from a checkpoint.
pub struct ModelParts {
    pub scheme: TagScheme,
    pub lexicon: Lexicon,
    pub vocab: Option<CharVocab>,
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let meta = serde_json::to_string(&self.meta)
            .map_err(|e| Error::Format(format!("cannot encode checkpoint metadata: {e}")))?;
        let mut c = self.store.to_container(meta);
        for (name, p) in self.best.iter() {
            c.tensors
                .push((format!("{BEST_PREFIX}{name}"), p.value.clone()));
        }
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&c.meta)
            .map_err(|e| Error::Format(format!("bad checkpoint metadata: {e}")))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported checkpoint format {:?}",
                meta.format
            )));
        }
        let (best, current): (Vec<_>, Vec<_>) = c
            .tensors
            .into_iter()
            .partition(|(n, _)| n.starts_with(BEST_PREFIX));
        let store = ParamStore::from_container(&Container {
            meta: String::new(),
            tensors: current,
        })?;
        let mut best_store = ParamStore::new();
        for (name, t) in best {
            best_store.insert(&name[BEST_PREFIX.len()..], t)?;
        }
        if best_store.names().ne(store.names()) {
            return Err(Error::Format(
                "best parameters do not match the current set".into(),
            ));
        }
        Ok(Checkpoint {
            meta,
            store,
            best: best_store,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write_atomic(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::read(path)?)
    }

    pub fn parts(&self) -> Result<ModelParts> {
        let m = &self.meta;
        let scheme = TagScheme::new(m.scheme_kind, m.labels.clone())?;
        let lexicon = if m.lexicon.is_empty() {
            Lexicon::empty(m.config.lexicon_config())
        } else {
            Lexicon::from_words(&m.lexicon, m.config.lexicon_config())?
        };
        if lexicon.len() != m.spec.n_words {
            return Err(Error::Format(format!(
                "checkpoint lexicon has {} words, model expects {}",
                lexicon.len(),
                m.spec.n_words
            )));
        }
        let vocab = m.chars.as_ref().map(|s| CharVocab::new(s.chars()));
        Ok(ModelParts {
            scheme,
            lexicon,
            vocab,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_conll, Split};

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(
            (
                c.max_len,
                c.d_w,
                c.bigru_total,
                c.layers,
                c.dropout,
                c.batch_size,
                c.lr
            ),
            (250, 50, 512, 1, 0.1, 32, 5e-5)
        );
        assert_eq!((c.epochs, c.patience, c.workers), (100, 10, 1));
        assert!(!c.freeze_word_emb);
        assert!(c.clip_norm.is_none());
        c.validate().unwrap();
    }

    #[test]
    fn set_and_entries_round_trip() {
        let mut c = TrainConfig::default();
        for (k, v) in [
            ("lr", "0.01"),
            ("fusion", "average"),
            ("clip_norm", "5"),
            ("knowledge_mode", "BOTH"),
        ] {
            assert!(c.set(k, v).unwrap());
        }
        assert!(!c.set("nope", "1").unwrap());
        assert!(c.set("epochs", "x").is_err());
        let mut d = TrainConfig::default();
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
        c.layers = 2;
        assert!(c.validate().is_err());
    }

    fn store_with(values: &[f64], grads: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "w",
            Tensor::from_vec(&[values.len()], values.to_vec()).unwrap(),
        )
        .unwrap();
        s.get_mut("w")
            .unwrap()
            .grad
            .data_mut()
            .copy_from_slice(grads);
        s
    }

    #[test]
    fn adam_first_step_closed_form() {
        let lr = 0.01;
        let g = [0.5, -2.0, 1e-3];
        let mut s = store_with(&[1.0, 1.0, 1.0], &g);
        adam_step(&mut s, lr, 1, None).unwrap();
        let p = s.get("w").unwrap();
        for i in 0..3 {
            let expect = 1.0 - lr * g[i] / (g[i].abs() + ADAM_EPS);
            assert!((p.value.data()[i] - expect).abs() < 1e-12);
            assert_eq!(p.grad.data()[i], 0.0);
        }
    }

    #[test]
    fn adam_zero_gradient_decays_moments() {
        let mut s = store_with(&[1.0], &[1.0]);
        adam_step(&mut s, 0.1, 1, None).unwrap();
        let before = s.get("w").unwrap().clone();
        adam_step(&mut s, 0.1, 2, None).unwrap();
        let after = s.get("w").unwrap();
        assert_eq!(after.m.data()[0], before.m.data()[0] * ADAM_BETA1);
        assert_eq!(after.v.data()[0], before.v.data()[0] * ADAM_BETA2);
        // the decayed first moment still moves the value
        assert!(after.value.data()[0] < before.value.data()[0]);

        let mut fresh = store_with(&[1.0], &[0.0]);
        adam_step(&mut fresh, 0.1, 1, None).unwrap();
        assert_eq!(fresh.get("w").unwrap().value.data()[0], 1.0);
    }

    #[test]
    fn adam_faults_and_frozen() {
        let mut s = store_with(&[1.0], &[f64::NAN]);
        let e = adam_step(&mut s, 0.1, 1, None).unwrap_err();
        assert!(matches!(e, Error::Numeric(ref m) if m.contains("w")));
        let mut s = store_with(&[1.0], &[1.0]);
        s.get_mut("w").unwrap().frozen = true;
        adam_step(&mut s, 0.1, 1, None).unwrap();
        assert_eq!(s.get("w").unwrap().value.data()[0], 1.0);
        assert_eq!(s.get("w").unwrap().grad.data()[0], 0.0);
    }

    #[test]
    fn clipping_bounds_the_update_input() {
        let mut a = store_with(&[0.0, 0.0], &[30.0, 40.0]);
        adam_step(&mut a, 0.1, 1, Some(5.0)).unwrap();
        // Adam at t=1 is scale invariant, so clipped and unclipped first steps agree
        let mut b = store_with(&[0.0, 0.0], &[30.0, 40.0]);
        adam_step(&mut b, 0.1, 1, None).unwrap();
        for (x, y) in a
            .get("w")
            .unwrap()
            .value
            .data()
            .iter()
            .zip(b.get("w").unwrap().value.data())
        {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((a.get("w").unwrap().m.data()[0] - 0.1 * 3.0).abs() < 1e-12);
    }

    fn toy() -> (TrainConfig, Dataset) {
        let text = "南 B-LOC\n京 E-LOC\n市 O\n\n长 B-LOC\n江 E-LOC\n\n";
        let scheme = TagScheme::new(SchemeKind::Bioes, vec!["LOC".into()]).unwrap();
        let ds = parse_conll(text.as_bytes(), "toy", "toy", &scheme, Split::Train, 250).unwrap();
        let mut c = TrainConfig::default();
        for (k, v) in [
            ("d_w", "3"),
            ("d_c", "4"),
            ("bigru_total", "8"),
            ("lr", "0.01"),
            ("epochs", "3"),
            ("batch_size", "1"),
        ] {
            c.set(k, v).unwrap();
        }
        (c, ds)
    }

    fn trained(workers: usize) -> Trainer {
        let (mut c, ds) = toy();
        c.workers = workers;
        c.batch_size = 2;
        let words = vec!["南京".to_string(), "长江".to_string()];
        let setup = prepare(&c, &ds, &words, EmbeddingTable::new(3).unwrap(), None).unwrap();
        let mut t = Trainer::new(c, setup).unwrap();
        let inst = t.instances(&ds.sentences, None).unwrap();
        t.train(&inst, &inst, None, |_| {}).unwrap();
        t
    }

    #[test]
    fn replay_is_bit_identical() {
        let a = trained(1);
        let b = trained(1);
        assert_eq!(a.store, b.store);
        assert_eq!(a.state, b.state);
        // two sentences per batch on two workers: same per-sentence streams
        let c = trained(2);
        for ((_, x), (_, y)) in a.store.iter().zip(c.store.iter()) {
            for (u, v) in x.value.data().iter().zip(y.value.data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let (c, ds) = toy();
        let words = vec!["南京".to_string()];
        let setup = prepare(&c, &ds, &words, EmbeddingTable::new(3).unwrap(), None).unwrap();
        let mut full = Trainer::new(c.clone(), setup.clone()).unwrap();
        let inst = full.instances(&ds.sentences, None).unwrap();
        full.train(&inst, &inst, None, |_| {}).unwrap();

        let mut half = Trainer::new(TrainConfig { epochs: 1, ..c }, setup).unwrap();
        half.train(&inst, &inst, None, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        half.checkpoint().save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, half.checkpoint());
        let mut resumed = Trainer::resume(loaded).unwrap();
        resumed.config.epochs = 3;
        resumed.train(&inst, &inst, None, |_| {}).unwrap();
        assert_eq!(resumed.store, full.store);
        assert_eq!(resumed.state.best_dev_f1, full.state.best_dev_f1);
    }

    #[test]
    fn empty_training_set_is_a_config_error() {
        let (c, ds) = toy();
        let setup = prepare(&c, &ds, &[], EmbeddingTable::new(3).unwrap(), None).unwrap();
        let mut t = Trainer::new(c, setup).unwrap();
        assert!(matches!(
            t.train(&[], &[], None, |_| {}),
            Err(Error::Config(_))
        ));
    }
}

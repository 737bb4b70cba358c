//! Command-line front end.
//!
//! Settings come from built-in defaults, then a `key = value` file
//! (`--config`), then `SLKNER_<KEY>` environment variables, then
//! `--set key=value` flags; later sources win. Unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::corpus::{
    self, load_embeddings, read_conll, scan_tag_names, EmbeddingTable, Sentence, Split, TagScheme,
};
use crate::encoder::PrecomputedChars;
use crate::error::{Error, Result};
use crate::eval::{self, SentenceSpans};
use crate::fusion::FusionStrategy;
use crate::lexicon::{read_word_list, Lexicon};
use crate::model::{self, CharSource};
use crate::trainer::{self, Checkpoint, EpochLog, TrainConfig, Trainer};

pub const ENV_PREFIX: &str = "SLKNER_";

pub const PATH_KEYS: [&str; 8] = [
    "train",
    "dev",
    "test",
    "lexicon",
    "embeddings",
    "char_vectors",
    "checkpoint",
    "log",
];

/// Gradient-check pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "slkner",
    version,
    about = "Chinese NER with second-order lexicon knowledge"
)]
pub struct Cli {
    /// key = value settings file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one setting (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write the checkpoint
    Train {
        /// Continue from an existing checkpoint
        #[arg(long)]
        resume: bool,
    },
    /// Tag raw text, one sentence per line
    Tag {
        /// Input file (default: stdin)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Emit per-position attention weights as JSON lines
        #[arg(long)]
        dump_attention: bool,
    },
    /// Score the test corpus
    Eval {
        /// Compare this predicted CoNLL file to the test corpus instead of decoding
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Number of sentence-length buckets
        #[arg(long, default_value_t = 6)]
        buckets: usize,
        /// Plain-text table instead of JSON
        #[arg(long)]
        table: bool,
    },
    /// Print lexicon match sets for each character of the input
    LexiconInspect {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Finite-difference check of the model gradients on small random models
    Gradcheck {
        /// Models per fusion strategy
        #[arg(long, default_value_t = 4)]
        models: usize,
        /// Sentence length
        #[arg(long, default_value_t = 4)]
        len: usize,
    },
    /// Print the merged settings
    EchoConfig {
        #[arg(long)]
        json: bool,
    },
}

/// Training settings plus file paths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub paths: BTreeMap<String, PathBuf>,
    /// Keys set by any source other than the defaults.
    pub explicit: BTreeSet<String>,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        let key = key.trim();
        if PATH_KEYS.contains(&key) {
            let v = value.trim();
            if v.is_empty() {
                self.paths.remove(key);
            } else {
                self.paths.insert(key.to_string(), PathBuf::from(v));
            }
        } else if !self.train.set(key, value).map_err(|e| {
            Error::Config(format!(
                "{origin}: {}",
                e.to_string().trim_start_matches("config error: ")
            ))
        })? {
            return Err(Error::Config(format!("{origin}: unknown key {key:?}")));
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let origin = format!("{}:{}", path.display(), i + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}: expected key = value")))?;
            self.set(k, v, &origin)?;
        }
        Ok(())
    }

    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (k, v) in vars {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase();
            self.set(&key, &v, &format!("environment variable {k}"))?;
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, flags: &[String]) -> Result<()> {
        for f in flags {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set {f:?}: expected KEY=VALUE")))?;
            self.set(k, v, &format!("--set {k}"))?;
        }
        Ok(())
    }

    /// Defaults, then file, then environment, then flags.
    pub fn load<I>(file: Option<&Path>, env: I, flags: &[String]) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut c = RunConfig::default();
        if let Some(f) = file {
            c.apply_file(f)?;
        }
        c.apply_env(env)?;
        c.apply_flags(flags)?;
        Ok(c)
    }

    /// A path that must be configured (it may not exist yet).
    pub fn path(&self, key: &str) -> Result<&Path> {
        self.paths
            .get(key)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config(format!("missing required setting `{key}`")))
    }

    /// A configured path that must exist.
    pub fn existing(&self, key: &str) -> Result<&Path> {
        let p = self.path(key)?;
        if !p.exists() {
            return Err(Error::Config(format!(
                "`{key}` points to missing file {}",
                p.display()
            )));
        }
        Ok(p)
    }

    fn optional_existing(&self, key: &str) -> Result<Option<&Path>> {
        if self.paths.contains_key(key) {
            self.existing(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .train
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        for k in PATH_KEYS {
            let v = self
                .paths
                .get(k)
                .map(|p| p.display().to_string())
                .unwrap_or_default();
            out.push((k.to_string(), v));
        }
        out
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("slkner: {e}");
            e.category().exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), std::env::vars(), &cli.set)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match cli.command {
        Command::Train { resume } => cmd_train(&cfg, resume, &mut out)?,
        Command::Tag {
            input,
            dump_attention,
        } => cmd_tag(&cfg, input.as_deref(), dump_attention, &mut out)?,
        Command::Eval {
            pred,
            buckets,
            table,
        } => cmd_eval(&cfg, pred.as_deref(), buckets, table, &mut out)?,
        Command::LexiconInspect { input } => cmd_lexicon_inspect(&cfg, input.as_deref(), &mut out)?,
        Command::Gradcheck { models, len } => cmd_gradcheck(&cfg, models, len, &mut out)?,
        Command::EchoConfig { json } => cmd_echo_config(&cfg, json, &mut out)?,
    }
    out.flush().map_err(|e| Error::io("<stdout>", e))
}

fn io_out(e: io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn write_json<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out).map_err(io_out)
}

fn read_input(input: Option<&Path>) -> Result<String> {
    let mut text = String::new();
    match input {
        Some(p) => {
            text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        }
        None => {
            io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| Error::io("<stdin>", e))?;
        }
    }
    Ok(text)
}

/// Non-empty input lines as sentences with ids `input#k`.
fn input_sentences(text: &str) -> Vec<Sentence> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(k, l)| Sentence::new(format!("input#{k}"), l))
        .collect()
}

/// Fails early with an IO error if nothing can be written next to `path`.
fn probe_writable(path: &Path) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let probe = dir.join(format!(
        ".{}.probe",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    ));
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn scheme_for(cfg: &RunConfig, files: &[&Path]) -> Result<TagScheme> {
    let mut names = BTreeSet::new();
    for f in files {
        names.extend(scan_tag_names(f)?);
    }
    TagScheme::from_tag_names(cfg.train.scheme, names.iter().map(String::as_str))
}

fn cmd_train<W: Write>(cfg: &RunConfig, resume: bool, out: &mut W) -> Result<()> {
    cfg.train.validate()?;
    let train_path = cfg.existing("train")?;
    let dev_path = cfg.existing("dev")?;
    let ck_path = cfg.path("checkpoint")?;
    let lexicon_path = cfg.optional_existing("lexicon")?;
    let emb_path = cfg.optional_existing("embeddings")?;
    let vec_path = cfg.optional_existing("char_vectors")?;
    probe_writable(ck_path)?;

    let precomputed = vec_path.map(PrecomputedChars::read).transpose()?;
    let (mut trainer, scheme) = if resume && ck_path.exists() {
        let mut t = Trainer::resume(Checkpoint::load(ck_path)?)?;
        t.config.epochs = cfg.train.epochs;
        t.config.patience = cfg.train.patience;
        let scheme = t.scheme.clone();
        (t, scheme)
    } else {
        let scheme = scheme_for(cfg, &[train_path, dev_path])?;
        let train = read_conll(train_path, &scheme, Split::Train, cfg.train.max_len)?;
        let words = match lexicon_path {
            Some(p) => read_word_list(p)?,
            None => Vec::new(),
        };
        let table = match emb_path {
            Some(p) => load_embeddings(p)?,
            None => EmbeddingTable::new(cfg.train.d_w)?,
        };
        let setup = trainer::prepare(&cfg.train, &train, &words, table, precomputed.as_ref())?;
        (Trainer::new(cfg.train.clone(), setup)?, scheme)
    };
    let train = read_conll(train_path, &scheme, Split::Train, trainer.config.max_len)?;
    let dev = read_conll(dev_path, &scheme, Split::Valid, trainer.config.max_len)?;
    for ds in [&train, &dev] {
        eprintln!("{}", serde_json::to_string(&ds.stats()).unwrap_or_default());
    }
    if train.is_empty() {
        return Err(Error::Config(format!(
            "training corpus {} is empty",
            train_path.display()
        )));
    }
    let train_inst = trainer.instances(&train.sentences, precomputed.as_ref())?;
    let dev_inst = trainer.instances(&dev.sentences, precomputed.as_ref())?;

    let mut log_file = match cfg.paths.get("log") {
        Some(p) => Some(BufWriter::new(
            fs::File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };
    let mut log_err = None;
    trainer.train(&train_inst, &dev_inst, Some(ck_path), |entry: &EpochLog| {
        let line = serde_json::to_string(entry).unwrap_or_default();
        let r = match log_file.as_mut() {
            Some(f) => writeln!(f, "{line}").and_then(|_| f.flush()),
            None => writeln!(out, "{line}").and_then(|_| out.flush()),
        };
        if let Err(e) = r {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(
            cfg.paths
                .get("log")
                .cloned()
                .unwrap_or_else(|| "<stdout>".into()),
            e,
        ));
    }
    // also covers a resumed run that had no epochs left
    trainer.checkpoint().save(ck_path)?;
    eprintln!(
        "{}",
        json!({
            "checkpoint": ck_path.display().to_string(),
            "epochs": trainer.state.epoch,
            "best_epoch": trainer.state.best_epoch,
            "best_dev_f1": trainer.state.best_dev_f1,
        })
    );
    Ok(())
}

struct Loaded {
    ck: Checkpoint,
    parts: trainer::ModelParts,
    precomputed: Option<PrecomputedChars>,
}

fn load_model(cfg: &RunConfig) -> Result<Loaded> {
    let ck = Checkpoint::load(cfg.existing("checkpoint")?)?;
    let parts = ck.parts()?;
    let precomputed = cfg
        .optional_existing("char_vectors")?
        .map(PrecomputedChars::read)
        .transpose()?;
    if parts.vocab.is_none() && precomputed.is_none() {
        return Err(Error::Config(
            "checkpoint uses precomputed character vectors; set `char_vectors`".into(),
        ));
    }
    Ok(Loaded {
        ck,
        parts,
        precomputed,
    })
}

impl Loaded {
    fn source(&self) -> CharSource<'_> {
        match (&self.parts.vocab, &self.precomputed) {
            (Some(v), _) => CharSource::Vocab(v),
            (None, Some(p)) => CharSource::Precomputed(p),
            (None, None) => unreachable!("checked in load_model"),
        }
    }

    fn mask(&self, cfg: &RunConfig) -> bool {
        if cfg.explicit.contains("mask_illegal") {
            cfg.train.mask_illegal
        } else {
            self.ck.meta.config.mask_illegal
        }
    }
}

fn cmd_tag<W: Write>(cfg: &RunConfig, input: Option<&Path>, dump: bool, out: &mut W) -> Result<()> {
    let m = load_model(cfg)?;
    let spec = &m.ck.meta.spec;
    let scheme = &m.parts.scheme;
    let mask = m.mask(cfg).then_some(scheme);
    let text = read_input(input)?;
    for s in input_sentences(&text) {
        let inst = model::make_instance(
            &s,
            &m.parts.lexicon,
            m.ck.meta.config.knowledge_mode,
            m.source(),
        )?;
        let d = model::decode(spec, &m.ck.best, &inst, mask)?;
        if dump {
            for (i, c) in s.chars.iter().enumerate() {
                let words: Vec<&str> = inst.words[i]
                    .iter()
                    .map(|&(id, _)| m.parts.lexicon.word(id).text.as_str())
                    .collect();
                write_json(
                    out,
                    &json!({
                        "sentence": s.id,
                        "pos": i + 1,
                        "char": c.to_string(),
                        "tag": scheme.tag_name(d.tags[i]),
                        "words": words,
                        "alphas": d.alphas[i],
                    }),
                )?;
            }
        } else {
            let tagged = Sentence {
                tags: Some(d.tags),
                ..s
            };
            corpus::write_conll(&mut *out, std::slice::from_ref(&tagged), scheme)?;
        }
    }
    Ok(())
}

fn spans_of(sentences: &[Sentence], scheme: &TagScheme) -> Vec<(Vec<eval::EntitySpan>, usize)> {
    sentences
        .iter()
        .map(|s| {
            let e = eval::extract_entities(s.tags.as_deref().unwrap_or(&[]), scheme);
            (e.spans, e.malformed)
        })
        .collect()
}

fn cmd_eval<W: Write>(
    cfg: &RunConfig,
    pred: Option<&Path>,
    buckets: usize,
    table: bool,
    out: &mut W,
) -> Result<()> {
    let test_path = cfg.existing("test")?;
    if buckets == 0 {
        return Err(Error::Config("--buckets must be at least 1".into()));
    }
    let (sentences, malformed) = match pred {
        Some(pred_path) => {
            if !pred_path.exists() {
                return Err(Error::Config(format!(
                    "--pred points to missing file {}",
                    pred_path.display()
                )));
            }
            let scheme = scheme_for(cfg, &[test_path, pred_path])?;
            let gold = read_conll(test_path, &scheme, Split::Test, cfg.train.max_len)?;
            let predicted = read_conll(pred_path, &scheme, Split::Test, cfg.train.max_len)?;
            if gold.len() != predicted.len() {
                return Err(Error::Format(format!(
                    "{} has {} sentences but {} has {}",
                    test_path.display(),
                    gold.len(),
                    pred_path.display(),
                    predicted.len()
                )));
            }
            let mut malformed = 0;
            let mut out = Vec::with_capacity(gold.len());
            for ((g, p), (ps, pm)) in gold
                .sentences
                .iter()
                .zip(&predicted.sentences)
                .zip(spans_of(&predicted.sentences, &scheme))
            {
                if g.chars != p.chars {
                    return Err(Error::Format(format!(
                        "sentence {} differs between gold and prediction",
                        g.id
                    )));
                }
                malformed += pm;
                out.push(SentenceSpans {
                    id: g.id.clone(),
                    len: g.len(),
                    gold: eval::extract_entities(g.tags.as_deref().unwrap_or(&[]), &scheme).spans,
                    pred: ps,
                });
            }
            (out, malformed)
        }
        None => {
            let m = load_model(cfg)?;
            let scheme = &m.parts.scheme;
            let test = read_conll(test_path, scheme, Split::Test, m.ck.meta.config.max_len)?;
            let inst: Vec<model::Instance> = test
                .sentences
                .iter()
                .map(|s| {
                    model::make_instance(
                        s,
                        &m.parts.lexicon,
                        m.ck.meta.config.knowledge_mode,
                        m.source(),
                    )
                })
                .collect::<Result<_>>()?;
            trainer::spans_for(&m.ck.meta.spec, &m.ck.best, scheme, &inst, m.mask(cfg))?
        }
    };
    let report = eval::report(&sentences, buckets, malformed);
    if table {
        write!(out, "{}", report.to_table()).map_err(io_out)
    } else {
        write_json(out, &report)
    }
}

fn cmd_lexicon_inspect<W: Write>(cfg: &RunConfig, input: Option<&Path>, out: &mut W) -> Result<()> {
    let words = read_word_list(cfg.existing("lexicon")?)?;
    let lexicon = Lexicon::from_words(&words, cfg.train.lexicon_config())?;
    let text = read_input(input)?;
    let name = |set: &[u32]| -> Vec<&str> {
        set.iter()
            .map(|&id| lexicon.word(id).text.as_str())
            .collect()
    };
    for s in input_sentences(&text) {
        let sets = lexicon.match_sentence(&s.chars);
        for (i, c) in s.chars.iter().enumerate() {
            write_json(
                out,
                &json!({
                    "sentence": s.id,
                    "pos": i + 1,
                    "char": c.to_string(),
                    "fwd": name(&sets.fwd[i]),
                    "bwd": name(&sets.bwd[i]),
                    "flk": name(&sets.flk[i]),
                    "slk": name(&sets.slk[i]),
                }),
            )?;
        }
    }
    Ok(())
}

fn cmd_gradcheck<W: Write>(cfg: &RunConfig, models: usize, len: usize, out: &mut W) -> Result<()> {
    if models == 0 || len == 0 {
        return Err(Error::Config("--models and --len must be positive".into()));
    }
    let mut worst = 0.0f64;
    let mut worst_at = None;
    let mut checked = 0;
    let mut per_strategy = BTreeMap::new();
    for fusion in FusionStrategy::ALL {
        let mut strategy_max = 0.0f64;
        for m in 0..models {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(m as u64));
            let (spec, mut store, inst) = model::tiny_problem(
                &mut rng,
                len,
                fusion,
                cfg.train.global_feature,
                cfg.train.boundary,
            )?;
            let report = model::check_gradients(&spec, &mut store, &inst, 1e-5, &mut rng)?;
            checked += report.checked;
            strategy_max = strategy_max.max(report.max_rel_error);
            if report.max_rel_error >= worst {
                worst = report.max_rel_error;
                worst_at = report.worst.map(|(p, i, a, n)| {
                    json!({"fusion": fusion.to_string(), "model": m, "param": p, "index": i, "analytic": a, "numeric": n})
                });
            }
        }
        per_strategy.insert(fusion.to_string(), strategy_max);
    }
    let passed = worst < GRADCHECK_TOLERANCE;
    write_json(
        out,
        &json!({
            "max_rel_error": worst,
            "tolerance": GRADCHECK_TOLERANCE,
            "checked": checked,
            "per_strategy": per_strategy,
            "worst": worst_at,
            "passed": passed,
        }),
    )?;
    if passed {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: max relative error {worst:e} ≥ {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

fn cmd_echo_config<W: Write>(cfg: &RunConfig, json: bool, out: &mut W) -> Result<()> {
    let entries = cfg.entries();
    if json {
        let map: serde_json::Map<String, serde_json::Value> = entries
            .into_iter()
            .map(|(k, v)| (k, serde_json::Value::String(v)))
            .collect();
        write_json(out, &map)
    } else {
        for (k, v) in entries {
            writeln!(out, "{k}={v}").map_err(io_out)?;
        }
        Ok(())
    }
}

/// Reads lines from any reader; used by tests to feed text without files.
pub fn sentences_from_reader<R: Read>(r: R) -> Result<Vec<Sentence>> {
    let mut text = String::new();
    BufReader::new(r)
        .lines()
        .try_for_each(|l| -> io::Result<()> {
            text.push_str(&l?);
            text.push('\n');
            Ok(())
        })
        .map_err(|e| Error::io("<input>", e))?;
    Ok(input_sentences(&text))
}

//! Tagged corpora, tag schemes and word-embedding files.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;

pub const DEFAULT_MAX_LEN: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "BIO")]
    Bio,
    #[serde(rename = "BIOES")]
    Bioes,
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BIO" => Ok(SchemeKind::Bio),
            "BIOES" => Ok(SchemeKind::Bioes),
            _ => Err(Error::Config(format!("unknown tag scheme {s:?}"))),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Bio => "BIO",
            SchemeKind::Bioes => "BIOES",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prefix {
    B,
    I,
    E,
    S,
}

impl Prefix {
    fn as_char(self) -> char {
        match self {
            Prefix::B => 'B',
            Prefix::I => 'I',
            Prefix::E => 'E',
            Prefix::S => 'S',
        }
    }
}

/// A decoded tag: `O` or a (prefix, entity-type index) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Entity { prefix: Prefix, label: usize },
}

/// Bijection between tag strings and dense indices. `O` is always index 0,
/// followed by each entity type's prefixes in `B, I[, E, S]` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagScheme {
    kind: SchemeKind,
    labels: Vec<String>,
    tags: Vec<Tag>,
    index: HashMap<String, usize>,
}

impl TagScheme {
    pub fn new(kind: SchemeKind, labels: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for l in &labels {
            if l.is_empty() || l.chars().any(char::is_whitespace) || !seen.insert(l.as_str()) {
                return Err(Error::Scheme(format!(
                    "invalid or duplicate entity type {l:?}"
                )));
            }
        }
        let prefixes: &[Prefix] = match kind {
            SchemeKind::Bio => &[Prefix::B, Prefix::I],
            SchemeKind::Bioes => &[Prefix::B, Prefix::I, Prefix::E, Prefix::S],
        };
        let mut tags = vec![Tag::Outside];
        for label in 0..labels.len() {
            for &prefix in prefixes {
                tags.push(Tag::Entity { prefix, label });
            }
        }
        let mut scheme = TagScheme {
            kind,
            labels,
            tags,
            index: HashMap::new(),
        };
        scheme.index = (0..scheme.tags.len())
            .map(|i| (scheme.tag_name(i), i))
            .collect();
        Ok(scheme)
    }

    /// Builds a scheme whose entity types are the (sorted) types found in
    /// `names`. Prefixes not belonging to `kind` are rejected.
    pub fn from_tag_names<'a>(
        kind: SchemeKind,
        names: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut labels = BTreeSet::new();
        for name in names {
            if name == "O" {
                continue;
            }
            let (p, label) = split_tag(name)?;
            if kind == SchemeKind::Bio && matches!(p, Prefix::E | Prefix::S) {
                return Err(Error::Scheme(format!("tag {name:?} is not a BIO tag")));
            }
            labels.insert(label.to_string());
        }
        TagScheme::new(kind, labels.into_iter().collect())
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tag(&self, index: usize) -> Tag {
        self.tags[index]
    }

    pub fn tag_name(&self, index: usize) -> String {
        match self.tags[index] {
            Tag::Outside => "O".to_string(),
            Tag::Entity { prefix, label } => format!("{}-{}", prefix.as_char(), self.labels[label]),
        }
    }

    pub fn tag_names(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.tag_name(i)).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Scheme(format!("unknown tag {name:?} for {} scheme", self.kind)))
    }

    pub fn encode(&self, tag: Tag) -> usize {
        self.tags
            .iter()
            .position(|&t| t == tag)
            .expect("tag belongs to this scheme")
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Whether `next` may follow `prev`; `None` stands for the sentence
    /// boundary (START on the left, STOP on the right).
    pub fn allowed(&self, prev: Option<usize>, next: Option<usize>) -> bool {
        let prev = prev.map(|i| self.tags[i]);
        let next = next.map(|i| self.tags[i]);
        // the tag an open entity of type `l` expects next
        let open = |t: Option<Tag>| match t {
            Some(Tag::Entity {
                prefix: Prefix::B | Prefix::I,
                label,
            }) => match self.kind {
                SchemeKind::Bioes => Some(label),
                SchemeKind::Bio => None,
            },
            _ => None,
        };
        match self.kind {
            SchemeKind::Bioes => match (open(prev), next) {
                (
                    Some(l),
                    Some(Tag::Entity {
                        prefix: Prefix::I | Prefix::E,
                        label,
                    }),
                ) => l == label,
                (Some(_), _) => false,
                (
                    None,
                    Some(Tag::Entity {
                        prefix: Prefix::I | Prefix::E,
                        ..
                    }),
                ) => false,
                (None, _) => true,
            },
            SchemeKind::Bio => match next {
                Some(Tag::Entity {
                    prefix: Prefix::I,
                    label,
                }) => matches!(
                    prev,
                    Some(Tag::Entity { prefix: Prefix::B | Prefix::I, label: l }) if l == label
                ),
                _ => true,
            },
        }
    }

    /// Position (0-based, `len` meaning the final STOP edge) of the first illegal transition.
    pub fn first_illegal(&self, tags: &[usize]) -> Option<usize> {
        let mut prev = None;
        for (i, &t) in tags.iter().enumerate() {
            if !self.allowed(prev, Some(t)) {
                return Some(i);
            }
            prev = Some(t);
        }
        if !tags.is_empty() && !self.allowed(prev, None) {
            return Some(tags.len());
        }
        None
    }
}

fn split_tag(name: &str) -> Result<(Prefix, &str)> {
    let (p, label) = name
        .split_once('-')
        .ok_or_else(|| Error::Scheme(format!("malformed tag {name:?}")))?;
    let prefix = match p {
        "B" => Prefix::B,
        "I" => Prefix::I,
        "E" => Prefix::E,
        "S" => Prefix::S,
        _ => return Err(Error::Scheme(format!("malformed tag {name:?}"))),
    };
    if label.is_empty() {
        return Err(Error::Scheme(format!("malformed tag {name:?}")));
    }
    Ok((prefix, label))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub chars: Vec<char>,
    pub tags: Option<Vec<usize>>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, text: &str) -> Self {
        Sentence {
            id: id.into(),
            chars: text.chars().collect(),
            tags: None,
        }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
    pub split: Split,
    pub scheme: TagScheme,
    /// Number of input sentences that exceeded `max_len` and were split.
    pub truncated: usize,
}

/// Summary emitted when a corpus is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub split: Split,
    pub sentences: usize,
    pub characters: usize,
    pub entities: usize,
    pub entity_types: std::collections::BTreeMap<String, usize>,
    pub truncated: usize,
    pub max_sentence_len: usize,
}

impl Dataset {
    pub fn empty(split: Split, scheme: TagScheme) -> Self {
        Dataset {
            sentences: Vec::new(),
            split,
            scheme,
            truncated: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn stats(&self) -> DatasetStats {
        let mut entity_types = std::collections::BTreeMap::new();
        let mut entities = 0;
        for s in &self.sentences {
            if let Some(tags) = &s.tags {
                for span in eval::extract_entities(tags, &self.scheme).spans {
                    entities += 1;
                    *entity_types.entry(span.label).or_insert(0) += 1;
                }
            }
        }
        DatasetStats {
            split: self.split,
            sentences: self.sentences.len(),
            characters: self.sentences.iter().map(Sentence::len).sum(),
            entities,
            entity_types,
            truncated: self.truncated,
            max_sentence_len: self.sentences.iter().map(Sentence::len).max().unwrap_or(0),
        }
    }
}

/// Reads a two-column CoNLL file (character, tag; blank line between sentences).
pub fn read_conll(
    path: &Path,
    scheme: &TagScheme,
    split: Split,
    max_len: usize,
) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_conll(
        BufReader::new(file),
        &path.display().to_string(),
        &stem,
        scheme,
        split,
        max_len,
    )
}

/// Reader-based variant of [`read_conll`]; `source` names the input in errors
/// and `id_prefix` prefixes sentence ids.
pub fn parse_conll<R: BufRead>(
    reader: R,
    source: &str,
    id_prefix: &str,
    scheme: &TagScheme,
    split: Split,
    max_len: usize,
) -> Result<Dataset> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    let mut dataset = Dataset::empty(split, scheme.clone());
    let mut chars = Vec::new();
    let mut tags = Vec::new();
    let mut first_line = 0;
    let mut seen = 0usize;

    let mut flush =
        |chars: &mut Vec<char>, tags: &mut Vec<usize>, first_line: usize| -> Result<()> {
            if chars.is_empty() {
                return Ok(());
            }
            if let Some(i) = scheme.first_illegal(tags) {
                let what = if i == tags.len() {
                    format!("sentence ends with {}", scheme.tag_name(tags[i - 1]))
                } else if i == 0 {
                    format!("sentence starts with {}", scheme.tag_name(tags[0]))
                } else {
                    format!(
                        "{} may not follow {}",
                        scheme.tag_name(tags[i]),
                        scheme.tag_name(tags[i - 1])
                    )
                };
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: first_line + i.min(tags.len() - 1),
                    msg: format!("illegal tag transition: {what}"),
                });
            }
            let id = format!("{id_prefix}#{seen}");
            seen += 1;
            let sentence = Sentence {
                id,
                chars: std::mem::take(chars),
                tags: Some(std::mem::take(tags)),
            };
            if sentence.len() > max_len {
                log::warn!(
                    "{source}:{first_line}: sentence of length {} split at max_len {max_len}",
                    sentence.len()
                );
                dataset.truncated += 1;
                dataset
                    .sentences
                    .extend(split_sentence(&sentence, scheme, max_len));
            } else {
                dataset.sentences.push(sentence);
            }
            Ok(())
        };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            path: source.to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut chars, &mut tags, first_line)?;
            continue;
        }
        if cols.len() != 2 {
            return Err(Error::Parse {
                path: source.to_string(),
                line: lineno,
                msg: format!("expected 2 columns, found {}", cols.len()),
            });
        }
        let mut cs = cols[0].chars();
        let c = match (cs.next(), cs.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: lineno,
                    msg: format!("first column {:?} is not a single character", cols[0]),
                })
            }
        };
        let tag = scheme.index_of(cols[1]).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if chars.is_empty() {
            first_line = lineno;
        }
        chars.push(c);
        tags.push(tag);
    }
    flush(&mut chars, &mut tags, first_line)?;
    Ok(dataset)
}

/// Splits an over-long sentence into `max_len` pieces and repairs prefixes
/// cut at the piece boundaries.
pub fn split_sentence(sentence: &Sentence, scheme: &TagScheme, max_len: usize) -> Vec<Sentence> {
    let n_pieces = sentence.len().div_ceil(max_len);
    (0..n_pieces)
        .map(|k| {
            let range = k * max_len..((k + 1) * max_len).min(sentence.len());
            let tags = sentence.tags.as_ref().map(|t| {
                let mut piece = t[range.clone()].to_vec();
                renormalize_piece(&mut piece, scheme);
                piece
            });
            Sentence {
                id: format!("{}/{k}", sentence.id),
                chars: sentence.chars[range].to_vec(),
                tags,
            }
        })
        .collect()
}

fn renormalize_piece(tags: &mut [usize], scheme: &TagScheme) {
    let retag = |t: usize, p: Prefix| match scheme.tag(t) {
        Tag::Entity { label, .. } => scheme.encode(Tag::Entity { prefix: p, label }),
        Tag::Outside => t,
    };
    let n = tags.len();
    if n == 0 {
        return;
    }
    match (scheme.kind(), scheme.tag(tags[0])) {
        (
            SchemeKind::Bioes,
            Tag::Entity {
                prefix: Prefix::I, ..
            },
        ) => {
            let single = n == 1
                || !matches!(
                    scheme.tag(tags[1]),
                    Tag::Entity {
                        prefix: Prefix::I | Prefix::E,
                        ..
                    }
                );
            tags[0] = retag(tags[0], if single { Prefix::S } else { Prefix::B });
        }
        (
            SchemeKind::Bioes,
            Tag::Entity {
                prefix: Prefix::E, ..
            },
        ) => tags[0] = retag(tags[0], Prefix::S),
        (
            SchemeKind::Bio,
            Tag::Entity {
                prefix: Prefix::I, ..
            },
        ) => tags[0] = retag(tags[0], Prefix::B),
        _ => {}
    }
    if scheme.kind() == SchemeKind::Bioes {
        match scheme.tag(tags[n - 1]) {
            Tag::Entity {
                prefix: Prefix::B, ..
            } => tags[n - 1] = retag(tags[n - 1], Prefix::S),
            Tag::Entity {
                prefix: Prefix::I, ..
            } => tags[n - 1] = retag(tags[n - 1], Prefix::E),
            _ => {}
        }
    }
}

/// Writes sentences in the two-column format read by [`read_conll`].
pub fn write_conll<W: Write>(mut out: W, sentences: &[Sentence], scheme: &TagScheme) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    for s in sentences {
        for (i, c) in s.chars.iter().enumerate() {
            let tag = s
                .tags
                .as_ref()
                .map_or_else(|| "O".to_string(), |t| scheme.tag_name(t[i]));
            writeln!(out, "{c} {tag}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    Ok(())
}

/// Collects the tag strings used in a CoNLL file (second column).
pub fn scan_tag_names(path: &Path) -> Result<BTreeSet<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut names = BTreeSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(tag) = line.split_whitespace().nth(1) {
            names.insert(tag.to_string());
        }
    }
    Ok(names)
}

/// Half-width of the uniform initialisation range for a `dim`-sized embedding.
pub fn init_bound(dim: usize) -> f64 {
    (3.0 / dim as f64).sqrt()
}

/// A vector drawn uniformly from `[-√(3/dim), +√(3/dim)]`.
pub fn random_init_row<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::Argument(
            "embedding dimension must be at least 1".into(),
        ));
    }
    let b = init_bound(dim);
    Ok((0..dim).map(|_| rng.gen_range(-b..=b)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    words: Vec<String>,
    matrix: Vec<f64>,
    dim: usize,
    duplicates: Vec<(String, usize)>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument(
                "embedding dimension must be at least 1".into(),
            ));
        }
        Ok(EmbeddingTable {
            vocab: HashMap::new(),
            words: Vec::new(),
            matrix: Vec::new(),
            dim,
            duplicates: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.vocab.get(word).copied()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index(word).map(|i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    /// Duplicate entries skipped on load, as (word, line number).
    pub fn duplicates(&self) -> &[(String, usize)] {
        &self.duplicates
    }

    /// Appends a row; an existing word keeps its first row.
    pub fn push(&mut self, word: &str, row: &[f64]) -> Result<usize> {
        if row.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding row for {word:?} has {} values, table dim is {}",
                row.len(),
                self.dim
            )));
        }
        if let Some(&i) = self.vocab.get(word) {
            return Ok(i);
        }
        let i = self.words.len();
        self.vocab.insert(word.to_string(), i);
        self.words.push(word.to_string());
        self.matrix.extend_from_slice(row);
        Ok(i)
    }

    /// Row for `word`, inserting a uniformly initialised one when absent.
    pub fn get_or_init<R: Rng + ?Sized>(&mut self, word: &str, rng: &mut R) -> Result<usize> {
        match self.index(word) {
            Some(i) => Ok(i),
            None => {
                let row = random_init_row(self.dim, rng)?;
                self.push(word, &row)
            }
        }
    }
}

/// Loads a word2vec-style text file: an optional `ROWS DIM` header, then
/// one `word v1 .. vDIM` line per entry.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), &path.display().to_string())
}

pub fn parse_embeddings<R: BufRead>(reader: R, source: &str) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    let mut header: Option<(usize, usize)> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Format(format!("{source}:{lineno}: {e}")))?;
        let mut cols = line.split_whitespace();
        let Some(word) = cols.next() else { continue };
        let rest: Vec<&str> = cols.collect();
        if lineno == 1 && rest.len() == 1 {
            if let (Ok(rows), Ok(dim)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                header = Some((rows, dim));
                table = Some(EmbeddingTable::new(dim).map_err(|_| {
                    Error::Format(format!("{source}:1: header declares dimension 0"))
                })?);
                continue;
            }
        }
        let values = rest
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{source}: row at line {lineno}: {e}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "{source}: row at line {lineno} contains a non-finite value"
            )));
        }
        let t = match &mut table {
            Some(t) => t,
            None => table.insert(EmbeddingTable::new(values.len()).map_err(|_| {
                Error::Format(format!("{source}: row at line {lineno} has no values"))
            })?),
        };
        if values.len() != t.dim {
            return Err(Error::Format(format!(
                "{source}: row at line {lineno} has {} values, expected {}",
                values.len(),
                t.dim
            )));
        }
        if t.index(word).is_some() {
            log::warn!("{source}:{lineno}: duplicate embedding for {word:?}, keeping the first");
            t.duplicates.push((word.to_string(), lineno));
            continue;
        }
        t.push(word, &values)?;
    }
    let table = table.ok_or_else(|| Error::Format(format!("{source}: no embedding rows")))?;
    if let Some((rows, _)) = header {
        let listed = table.len() + table.duplicates.len();
        if rows != listed {
            log::warn!("{source}: header declares {rows} rows, file lists {listed}");
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    fn bioes(labels: &[&str]) -> TagScheme {
        TagScheme::new(
            SchemeKind::Bioes,
            labels.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    fn parse(text: &str, scheme: &TagScheme, max_len: usize) -> Result<Dataset> {
        parse_conll(
            Cursor::new(text),
            "mem",
            "mem",
            scheme,
            Split::Train,
            max_len,
        )
    }

    #[test]
    fn scheme_is_a_bijection() {
        for kind in [SchemeKind::Bio, SchemeKind::Bioes] {
            let s = TagScheme::new(kind, vec!["LOC".into(), "PER".into()]).unwrap();
            for i in 0..s.len() {
                assert_eq!(s.index_of(&s.tag_name(i)).unwrap(), i);
                assert_eq!(s.encode(s.tag(i)), i);
            }
        }
        assert_eq!(bioes(&["LOC"]).len(), 5);
    }

    #[test]
    fn transition_legality() {
        let s = bioes(&["LOC", "PER"]);
        let id = |n: &str| s.index_of(n).unwrap();
        assert!(s.allowed(None, Some(id("B-LOC"))));
        assert!(!s.allowed(None, Some(id("I-LOC"))));
        assert!(s.allowed(Some(id("B-LOC")), Some(id("E-LOC"))));
        assert!(!s.allowed(Some(id("B-LOC")), Some(id("E-PER"))));
        assert!(!s.allowed(Some(id("B-LOC")), Some(id("O"))));
        assert!(!s.allowed(Some(id("I-LOC")), None));
        assert!(s.allowed(Some(id("S-PER")), None));

        let b = TagScheme::new(SchemeKind::Bio, vec!["LOC".into()]).unwrap();
        assert!(!b.allowed(Some(0), Some(b.index_of("I-LOC").unwrap())));
        assert!(b.allowed(
            Some(b.index_of("B-LOC").unwrap()),
            Some(b.index_of("I-LOC").unwrap())
        ));
        assert!(b.allowed(Some(b.index_of("B-LOC").unwrap()), None));
    }

    #[test]
    fn reads_a_single_sentence() {
        let s = bioes(&["LOC"]);
        let d = parse("南 B-LOC\n京 E-LOC\n\n", &s, 250).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.sentences[0].chars, vec!['南', '京']);
        let tags: Vec<String> = d.sentences[0]
            .tags
            .as_ref()
            .unwrap()
            .iter()
            .map(|&t| s.tag_name(t))
            .collect();
        assert_eq!(tags, ["B-LOC", "E-LOC"]);
    }

    #[test]
    fn empty_file_and_trailing_blank_lines() {
        let s = bioes(&["LOC"]);
        assert_eq!(parse("", &s, 250).unwrap().len(), 0);
        assert_eq!(parse("a O\n\n\n\nb O\n\n\n", &s, 250).unwrap().len(), 2);
    }

    #[test]
    fn one_column_line_names_line_number() {
        let s = bioes(&["LOC"]);
        match parse("南\n", &s, 250) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_tag_and_illegal_transition_are_rejected() {
        let s = bioes(&["LOC"]);
        let err = parse("a O\nb B-PER\n", &s, 250).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("a O\nb I-LOC\nc E-LOC\n", &s, 250).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse("a B-LOC\n", &s, 250).is_err());
    }

    #[test]
    fn long_sentences_are_split_and_repaired() {
        let s = bioes(&["LOC"]);
        let d = parse("a O\nb B-LOC\nc I-LOC\nd I-LOC\ne E-LOC\nf O\n", &s, 3).unwrap();
        assert_eq!(d.truncated, 1);
        assert_eq!(d.len(), 2);
        let names = |i: usize| -> Vec<String> {
            d.sentences[i]
                .tags
                .as_ref()
                .unwrap()
                .iter()
                .map(|&t| s.tag_name(t))
                .collect()
        };
        assert_eq!(names(0), ["O", "B-LOC", "E-LOC"]);
        assert_eq!(names(1), ["B-LOC", "E-LOC", "O"]);
        for sent in &d.sentences {
            assert!(s.first_illegal(sent.tags.as_ref().unwrap()).is_none());
        }
        assert_eq!(d.stats().truncated, 1);
    }

    #[test]
    fn write_then_read_round_trips() {
        let s = bioes(&["LOC", "PER"]);
        let text = "南 B-LOC\n京 E-LOC\n市 O\n\n张 S-PER\n\n";
        let d = parse(text, &s, 250).unwrap();
        let mut out = Vec::new();
        write_conll(&mut out, &d.sentences, &s).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn stats_count_entities() {
        let s = bioes(&["LOC", "PER"]);
        let d = parse("南 B-LOC\n京 E-LOC\n市 O\n\n张 S-PER\n\n", &s, 250).unwrap();
        let st = d.stats();
        assert_eq!((st.sentences, st.characters, st.entities), (2, 4, 2));
        assert_eq!(st.entity_types["LOC"], 1);
        let json = serde_json::to_string(&st).unwrap();
        assert!(json.contains("\"split\":\"train\""));
    }

    #[test]
    fn loads_embeddings_with_and_without_header() {
        let row = |w: &str| format!("{w} {}\n", vec!["0.5"; 50].join(" "));
        let text = format!("2 50\n{}{}", row("南京"), row("长江"));
        let t = parse_embeddings(Cursor::new(text), "mem").unwrap();
        assert_eq!((t.len(), t.dim()), (2, 50));

        let t = parse_embeddings(Cursor::new("a 1 2 3\nb 4 5 6\n"), "mem").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.get("b").unwrap(), [4.0, 5.0, 6.0]);
    }

    #[test]
    fn embedding_dimension_mismatch_names_the_row() {
        let text = format!(
            "a {}\nb {}\n",
            vec!["1"; 50].join(" "),
            vec!["1"; 49].join(" ")
        );
        let err = parse_embeddings(Cursor::new(text), "mem")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_embeddings(Cursor::new("a 1 NaN\n"), "mem").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn duplicate_embedding_keeps_first() {
        let text = "x 0 0\ny 1 1\n南京 3 3\nz 2 2\nw 5 5\nv 6 6\n南京 7 7\n";
        let t = parse_embeddings(Cursor::new(text), "mem").unwrap();
        assert_eq!(t.get("南京").unwrap(), [3.0, 3.0]);
        assert_eq!(t.duplicates(), [("南京".to_string(), 7)]);
    }

    #[test]
    fn random_init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b50 = init_bound(50);
        assert!((b50 - 0.244_948_974_278_317_8).abs() < 1e-12);
        assert!(random_init_row(50, &mut rng)
            .unwrap()
            .iter()
            .all(|v| v.abs() <= b50));
        assert_eq!(init_bound(3), 1.0);
        assert!(random_init_row(3, &mut rng)
            .unwrap()
            .iter()
            .all(|v| v.abs() <= 1.0));
        assert!(matches!(
            random_init_row(0, &mut rng),
            Err(Error::Argument(_))
        ));
    }

    /// Mean of U(-b, b) is 0 with variance b²/3 per sample.
    #[test]
    fn random_init_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dim = 50;
        let b = init_bound(dim);
        let n = 100_000 / dim;
        let vals: Vec<f64> = (0..n)
            .flat_map(|_| random_init_row(dim, &mut rng).unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sigma = (b * b / 3.0 / vals.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "{mean}");
        let (lo, hi) = vals
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(lo >= -b && hi <= b);
    }
}

//! Dictionary trie and per-character lexicon knowledge.
//!
//! For a sentence `c_1..c_n`, `fwd[i]` holds the dictionary words that start
//! at `c_i` and `bwd[i]` the words that end at `c_i`. First-order knowledge is
//! their union; second-order knowledge of `c_i` is what its neighbours see:
//! `slk[i] = fwd[i-1] ∪ bwd[i+1]`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_WORD_LEN: usize = 2;
pub const DEFAULT_MAX_WORD_LEN: usize = 10;

/// Dense word id; ids are assigned in (length, lexicographic) order.
pub type WordId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconConfig {
    pub min_word_len: usize,
    pub max_word_len: usize,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        LexiconConfig {
            min_word_len: DEFAULT_MIN_WORD_LEN,
            max_word_len: DEFAULT_MAX_WORD_LEN,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TrieNode {
    // sorted by char
    children: Vec<(char, u32)>,
    word: Option<WordId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexWord {
    pub text: String,
    pub len: usize,
    /// Row in the embedding table the lexicon was built against.
    pub emb_row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    nodes: Vec<TrieNode>,
    words: Vec<LexWord>,
    config: LexiconConfig,
    skipped: usize,
}

impl Lexicon {
    pub fn empty(config: LexiconConfig) -> Self {
        Lexicon {
            nodes: vec![TrieNode::default()],
            words: Vec::new(),
            config,
            skipped: 0,
        }
    }

    /// Trie over `words` without embedding rows. Words outside
    /// `[min_word_len, max_word_len]` are skipped and counted.
    pub fn from_words<S: AsRef<str>>(words: &[S], config: LexiconConfig) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Build("empty word list".into()));
        }
        if config.min_word_len == 0 || config.min_word_len > config.max_word_len {
            return Err(Error::Config(format!(
                "invalid word length range [{}, {}]",
                config.min_word_len, config.max_word_len
            )));
        }
        let mut unique = BTreeSet::new();
        let mut skipped = 0;
        for w in words {
            let w = w.as_ref().trim();
            let len = w.chars().count();
            if len < config.min_word_len || len > config.max_word_len {
                if len > config.max_word_len {
                    log::warn!(
                        "dictionary entry {w:?} longer than {} characters skipped",
                        config.max_word_len
                    );
                }
                skipped += 1;
                continue;
            }
            unique.insert((len, w.to_string()));
        }
        let mut lex = Lexicon::empty(config);
        lex.skipped = skipped;
        for (len, text) in unique {
            let id = lex.words.len() as WordId;
            lex.insert(&text, id);
            lex.words.push(LexWord {
                text,
                len,
                emb_row: None,
            });
        }
        Ok(lex)
    }

    fn insert(&mut self, word: &str, id: WordId) {
        let mut node = 0usize;
        for c in word.chars() {
            node = match self.nodes[node]
                .children
                .binary_search_by_key(&c, |&(k, _)| k)
            {
                Ok(pos) => self.nodes[node].children[pos].1 as usize,
                Err(pos) => {
                    let next = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(pos, (c, next as u32));
                    next
                }
            };
        }
        self.nodes[node].word = Some(id);
    }

    fn child(&self, node: usize, c: char) -> Option<usize> {
        let ch = &self.nodes[node].children;
        ch.binary_search_by_key(&c, |&(k, _)| k)
            .ok()
            .map(|pos| ch[pos].1 as usize)
    }

    /// Word id of an exact dictionary entry.
    pub fn lookup(&self, word: &str) -> Option<WordId> {
        let mut node = 0;
        for c in word.chars() {
            node = self.child(node, c)?;
        }
        self.nodes[node].word
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: WordId) -> &LexWord {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[LexWord] {
        &self.words
    }

    pub fn config(&self) -> LexiconConfig {
        self.config
    }

    /// Entries dropped at build time because of their length.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// All dictionary matches in `chars`, one trie walk per start position.
    pub fn match_sentence(&self, chars: &[char]) -> MatchSets {
        let n = chars.len();
        let mut fwd = vec![Vec::new(); n];
        let mut bwd = vec![Vec::new(); n];
        for i in 0..n {
            let mut node = 0;
            for (d, &c) in chars[i..].iter().take(self.config.max_word_len).enumerate() {
                let Some(next) = self.child(node, c) else {
                    break;
                };
                node = next;
                if let Some(id) = self.nodes[node].word {
                    fwd[i].push(id);
                    bwd[i + d].push(id);
                }
            }
        }
        for set in fwd.iter_mut().chain(bwd.iter_mut()) {
            set.sort_unstable();
            set.dedup();
        }
        let flk = (0..n).map(|i| union(&fwd[i], &bwd[i])).collect();
        let slk = (0..n)
            .map(|i| {
                let left: &[WordId] = if i > 0 { &fwd[i - 1] } else { &[] };
                let right: &[WordId] = if i + 1 < n { &bwd[i + 1] } else { &[] };
                union(left, right)
            })
            .collect();
        MatchSets { fwd, bwd, flk, slk }
    }
}

/// Builds the lexicon and resolves every word to a row of `table`, adding
/// uniformly initialised rows for words the table lacks.
pub fn build_lexicon<S: AsRef<str>, R: Rng + ?Sized>(
    words: &[S],
    table: &mut EmbeddingTable,
    config: LexiconConfig,
    rng: &mut R,
) -> Result<Lexicon> {
    let mut lex = Lexicon::from_words(words, config)?;
    let mut added = 0;
    for w in &mut lex.words {
        if table.index(&w.text).is_none() {
            added += 1;
        }
        w.emb_row = Some(table.get_or_init(&w.text, rng)?);
    }
    if added > 0 {
        log::info!("{added} lexicon words had no pretrained embedding; initialised uniformly");
    }
    Ok(lex)
}

/// Reads a word list, one word per line; blank lines are ignored.
pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut words = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let w = line.trim();
        if !w.is_empty() {
            words.push(w.to_string());
        }
    }
    Ok(words)
}

fn union(a: &[WordId], b: &[WordId]) -> Vec<WordId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (_, Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    out
}

/// Per-position word sets for one sentence (0-based positions).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchSets {
    pub fwd: Vec<Vec<WordId>>,
    pub bwd: Vec<Vec<WordId>>,
    pub flk: Vec<Vec<WordId>>,
    pub slk: Vec<Vec<WordId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KnowledgeMode {
    #[serde(rename = "SLK")]
    Slk,
    #[serde(rename = "FLK")]
    Flk,
    #[serde(rename = "BOTH")]
    Both,
    #[serde(rename = "NONE")]
    None,
}

impl KnowledgeMode {
    pub const ALL: [KnowledgeMode; 4] = [
        KnowledgeMode::Slk,
        KnowledgeMode::Flk,
        KnowledgeMode::Both,
        KnowledgeMode::None,
    ];
}

impl std::str::FromStr for KnowledgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SLK" => Ok(KnowledgeMode::Slk),
            "FLK" => Ok(KnowledgeMode::Flk),
            "BOTH" => Ok(KnowledgeMode::Both),
            "NONE" => Ok(KnowledgeMode::None),
            _ => Err(Error::Config(format!("unknown knowledge mode {s:?}"))),
        }
    }
}

impl fmt::Display for KnowledgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KnowledgeMode::Slk => "SLK",
            KnowledgeMode::Flk => "FLK",
            KnowledgeMode::Both => "BOTH",
            KnowledgeMode::None => "NONE",
        })
    }
}

/// The word set each position receives under `mode`.
pub fn knowledge_select(sets: &MatchSets, mode: KnowledgeMode) -> Vec<Vec<WordId>> {
    match mode {
        KnowledgeMode::Slk => sets.slk.clone(),
        KnowledgeMode::Flk => sets.flk.clone(),
        KnowledgeMode::Both => sets
            .slk
            .iter()
            .zip(&sets.flk)
            .map(|(s, f)| union(s, f))
            .collect(),
        KnowledgeMode::None => vec![Vec::new(); sets.slk.len()],
    }
}

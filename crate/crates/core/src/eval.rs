//! Entity-level precision, recall and F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Prefix, SchemeKind, Tag, TagScheme};

/// An entity mention, 1-based inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub spans: Vec<EntitySpan>,
    /// Tag runs that did not form a well-formed entity and were dropped.
    pub malformed: usize,
}

/// Reads well-formed entity spans off a tag sequence.
pub fn extract_entities(tags: &[usize], scheme: &TagScheme) -> Extraction {
    let mut out = Extraction::default();
    // (start index, label) of the entity currently open
    let mut open: Option<(usize, usize)> = None;
    // inside a run of stray I/E tags that has already been counted
    let mut stray = false;
    let name = |l: usize| scheme.labels()[l].clone();

    for (i, &t) in tags.iter().enumerate() {
        let tag = scheme.tag(t);
        match scheme.kind() {
            SchemeKind::Bioes => match tag {
                Tag::Outside => {
                    out.malformed += usize::from(open.take().is_some());
                    stray = false;
                }
                Tag::Entity {
                    prefix: Prefix::S,
                    label,
                } => {
                    out.malformed += usize::from(open.take().is_some());
                    out.spans.push(EntitySpan::new(i + 1, i + 1, name(label)));
                    stray = false;
                }
                Tag::Entity {
                    prefix: Prefix::B,
                    label,
                } => {
                    out.malformed += usize::from(open.replace((i, label)).is_some());
                    stray = false;
                }
                Tag::Entity { prefix, label } => match open {
                    Some((_, l)) if l == label => {
                        if prefix == Prefix::E {
                            let (s, _) = open.take().unwrap();
                            out.spans.push(EntitySpan::new(s + 1, i + 1, name(label)));
                        }
                    }
                    _ => {
                        if open.take().is_some() || !stray {
                            out.malformed += 1;
                        }
                        stray = prefix == Prefix::I;
                    }
                },
            },
            SchemeKind::Bio => match tag {
                Tag::Outside => {
                    if let Some((s, l)) = open.take() {
                        out.spans.push(EntitySpan::new(s + 1, i, name(l)));
                    }
                }
                Tag::Entity { prefix, label } => match (prefix, open) {
                    (Prefix::I, Some((_, l))) if l == label => {}
                    (p, o) => {
                        if let Some((s, l)) = o {
                            out.spans.push(EntitySpan::new(s + 1, i, name(l)));
                        }
                        if p == Prefix::B {
                            open = Some((i, label));
                        } else {
                            out.malformed += 1;
                            open = None;
                        }
                    }
                },
            },
        }
    }
    if let Some((s, l)) = open {
        match scheme.kind() {
            SchemeKind::Bio => out.spans.push(EntitySpan::new(s + 1, tags.len(), name(l))),
            SchemeKind::Bioes => out.malformed += 1,
        }
    }
    out
}

/// Tags for a set of non-overlapping spans over a sentence of length `n`.
/// Spans with an unknown label, out of range, or overlapping an earlier span are ignored.
pub fn encode_tags(spans: &[EntitySpan], n: usize, scheme: &TagScheme) -> Vec<usize> {
    let outside = scheme.encode(Tag::Outside);
    let mut tags = vec![outside; n];
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort();
    for span in sorted {
        let Some(label) = scheme.label_index(&span.label) else {
            continue;
        };
        if span.start < 1 || span.end > n || span.start > span.end {
            continue;
        }
        let (s, e) = (span.start - 1, span.end - 1);
        if tags[s..=e].iter().any(|&t| t != outside) {
            continue;
        }
        let t = |prefix| scheme.encode(Tag::Entity { prefix, label });
        match scheme.kind() {
            SchemeKind::Bioes if s == e => tags[s] = t(Prefix::S),
            SchemeKind::Bioes => {
                tags[s] = t(Prefix::B);
                tags[s + 1..e].fill(t(Prefix::I));
                tags[e] = t(Prefix::E);
            }
            SchemeKind::Bio => {
                tags[s] = t(Prefix::B);
                tags[s + 1..=e].fill(t(Prefix::I));
            }
        }
    }
    tags
}

/// Micro-averaged match counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.pred += other.pred;
        self.gold += other.gold;
    }

    pub fn scores(&self) -> Scores {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.tp, self.pred);
        let r = ratio(self.tp, self.gold);
        let f1 = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        Scores { p, r, f1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
}

/// Gold and predicted spans for one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSpans {
    pub id: String,
    pub len: usize,
    pub gold: Vec<EntitySpan>,
    pub pred: Vec<EntitySpan>,
}

fn count_sentence(gold: &[EntitySpan], pred: &[EntitySpan]) -> Counts {
    let mut g: Vec<&EntitySpan> = gold.iter().collect();
    g.sort();
    g.dedup();
    let mut p: Vec<&EntitySpan> = pred.iter().collect();
    p.sort();
    p.dedup();
    let tp = p.iter().filter(|s| g.binary_search(s).is_ok()).count();
    Counts {
        tp,
        pred: p.len(),
        gold: g.len(),
    }
}

pub fn count(sentences: &[SentenceSpans]) -> Counts {
    let mut c = Counts::default();
    for s in sentences {
        c.add(count_sentence(&s.gold, &s.pred));
    }
    c
}

/// Exact-match micro P/R/F1 over sentences keyed by id.
pub fn prf1(sentences: &[SentenceSpans]) -> Scores {
    count(sentences).scores()
}

/// Per-entity-type counts.
pub fn per_type(sentences: &[SentenceSpans]) -> BTreeMap<String, Counts> {
    let mut out: BTreeMap<String, Counts> = BTreeMap::new();
    for s in sentences {
        let mut labels: Vec<&str> = s
            .gold
            .iter()
            .chain(&s.pred)
            .map(|e| e.label.as_str())
            .collect();
        labels.sort_unstable();
        labels.dedup();
        for label in labels {
            let g: Vec<EntitySpan> = s
                .gold
                .iter()
                .filter(|e| e.label == label)
                .cloned()
                .collect();
            let p: Vec<EntitySpan> = s
                .pred
                .iter()
                .filter(|e| e.label == label)
                .cloned()
                .collect();
            out.entry(label.to_string())
                .or_default()
                .add(count_sentence(&g, &p));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub min_len: usize,
    pub max_len: usize,
    pub sentences: usize,
    pub counts: Counts,
    pub scores: Scores,
}

/// Equal-frequency buckets by sentence length. Sentences of equal length
/// always share a bucket, so fewer than `k` buckets may come back.
pub fn bucket_by_length(sentences: &[SentenceSpans], k: usize) -> Vec<Bucket> {
    let k = k.max(1);
    let n = sentences.len();
    if n == 0 {
        return Vec::new();
    }
    if n < k {
        log::warn!("{n} sentences for {k} length buckets; some buckets will be merged");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (sentences[i].len, i));
    let len_at = |r: usize| sentences[order[r]].len;

    let mut cuts = vec![0];
    for j in 1..k {
        let target = (j * n + k / 2) / k;
        // nearest rank where the length changes
        let mut best: Option<usize> = None;
        for d in 0..=n {
            for cand in [target.checked_sub(d), target.checked_add(d)]
                .into_iter()
                .flatten()
            {
                if cand == 0 || cand >= n {
                    continue;
                }
                if len_at(cand - 1) != len_at(cand) && best.is_none() {
                    best = Some(cand);
                }
            }
            if best.is_some() {
                break;
            }
        }
        if let Some(b) = best {
            cuts.push(b);
        }
    }
    cuts.push(n);
    cuts.sort_unstable();
    cuts.dedup();

    cuts.windows(2)
        .map(|w| {
            let members: Vec<SentenceSpans> = order[w[0]..w[1]]
                .iter()
                .map(|&i| sentences[i].clone())
                .collect();
            let counts = count(&members);
            Bucket {
                min_len: len_at(w[0]),
                max_len: len_at(w[1] - 1),
                sentences: members.len(),
                counts,
                scores: counts.scores(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub counts: Counts,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub overall: Scores,
    pub counts: Counts,
    pub per_type: BTreeMap<String, TypeReport>,
    pub buckets: Vec<Bucket>,
    pub malformed_pred: usize,
}

pub fn report(sentences: &[SentenceSpans], buckets: usize, malformed_pred: usize) -> Report {
    let counts = count(sentences);
    Report {
        overall: counts.scores(),
        counts,
        per_type: per_type(sentences)
            .into_iter()
            .map(|(k, c)| {
                (
                    k,
                    TypeReport {
                        counts: c,
                        scores: c.scores(),
                    },
                )
            })
            .collect(),
        buckets: bucket_by_length(sentences, buckets),
        malformed_pred,
    }
}

impl Report {
    /// Plain-text table of the overall, per-type and per-bucket scores.
    pub fn to_table(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let row = |s: &mut String, name: &str, sc: &Scores| {
            let _ = writeln!(
                s,
                "{name:<16} {:>7.2} {:>7.2} {:>7.2}",
                sc.p * 100.0,
                sc.r * 100.0,
                sc.f1 * 100.0
            );
        };
        let _ = writeln!(s, "{:<16} {:>7} {:>7} {:>7}", "", "P", "R", "F1");
        row(&mut s, "overall", &self.overall);
        for (k, t) in &self.per_type {
            row(&mut s, k, &t.scores);
        }
        for b in &self.buckets {
            row(
                &mut s,
                &format!("len {}-{}", b.min_len, b.max_len),
                &b.scores,
            );
        }
        s
    }
}

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slkner::corpus::{parse_conll, Dataset, SchemeKind, Split, TagScheme};

/// Entity words with their types. Every one of them is also a lexicon word.
pub const ENTITIES: [(&str, &str); 10] = [
    ("长江大桥", "LOC"),
    ("南京市", "LOC"),
    ("北京", "LOC"),
    ("黄河", "LOC"),
    ("王小明", "PER"),
    ("李华", "PER"),
    ("张伟", "PER"),
    ("清华大学", "ORG"),
    ("人民银行", "ORG"),
    ("国务院", "ORG"),
];

/// Lexicon words that cut through or across entities: 长江/大桥 split 长江大桥
/// in the middle, 市长 straddles 南京市|长江大桥, 华北 straddles 李华|北京 and
/// so on.
pub const CONFLICTS: [&str; 10] = [
    "长江", "大桥", "市长", "南京", "大学", "银行", "明天", "华北", "小明", "人民",
];

const FILLER: [char; 10] = ['的', '在', '了', '是', '去', '和', '有', '来', '到', '天'];

/// Adjacent entity pairs that plant a crossing lexicon word.
const PAIRS: [(usize, usize); 2] = [(1, 0), (5, 2)];

pub fn lexicon_words() -> Vec<String> {
    ENTITIES
        .iter()
        .map(|(w, _)| w.to_string())
        .chain(CONFLICTS.iter().map(|w| w.to_string()))
        .collect()
}

fn push_entity(out: &mut String, word: &str, label: &str) {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    for (i, c) in chars.iter().enumerate() {
        let p = match (i, n) {
            (_, 1) => "S",
            (0, _) => "B",
            (i, n) if i == n - 1 => "E",
            _ => "I",
        };
        out.push_str(&format!("{c} {p}-{label}\n"));
    }
}

fn push_filler(out: &mut String, rng: &mut ChaCha8Rng, k: usize) {
    for _ in 0..k {
        out.push_str(&format!("{} O\n", FILLER.choose(rng).unwrap()));
    }
}

/// A 50-sentence BIOES corpus in CoNLL form. About a third of the sentences
/// place two entities side by side so a lexicon word crosses their boundary.
pub fn synthetic_conll(seed: u64, sentences: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for s in 0..sentences {
        let k = rng.gen_range(1..=2);
        push_filler(&mut out, &mut rng, k);
        if s % 3 == 0 {
            let (a, b) = PAIRS[rng.gen_range(0..PAIRS.len())];
            push_entity(&mut out, ENTITIES[a].0, ENTITIES[a].1);
            push_entity(&mut out, ENTITIES[b].0, ENTITIES[b].1);
        } else {
            for _ in 0..rng.gen_range(1..=2) {
                let (w, l) = ENTITIES[rng.gen_range(0..ENTITIES.len())];
                push_entity(&mut out, w, l);
                let k = rng.gen_range(1..=2);
                push_filler(&mut out, &mut rng, k);
            }
        }
        // 明天 straddles a person name followed by 天
        if s % 7 == 3 {
            push_entity(&mut out, "王小明", "PER");
            out.push_str("天 O\n");
        }
        let k = rng.gen_range(0..=2);
        push_filler(&mut out, &mut rng, k);
        out.push('\n');
    }
    out
}

pub fn scheme() -> TagScheme {
    TagScheme::new(
        SchemeKind::Bioes,
        vec!["LOC".into(), "ORG".into(), "PER".into()],
    )
    .unwrap()
}

pub fn dataset(text: &str, split: Split) -> Dataset {
    parse_conll(text.as_bytes(), "synthetic", "syn", &scheme(), split, 250).unwrap()
}

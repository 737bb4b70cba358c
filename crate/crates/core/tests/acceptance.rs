//! Acceptance criteria. Runs without the libtest harness so each criterion
//! prints exactly one PASS/FAIL line; the process exits non-zero if any fail.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slkner::corpus::{init_bound, random_init_row, EmbeddingTable, Split};
use slkner::crf::{self, Lattice};
use slkner::encoder::GlobalFeature;
use slkner::eval;
use slkner::fusion::{fuse_position, FusionParams, FusionStrategy, FusionWord};
use slkner::lexicon::{KnowledgeMode, Lexicon, LexiconConfig};
use slkner::model::{self, Instance};
use slkner::numerics::Tensor;
use slkner::trainer::{prepare, Checkpoint, TrainConfig, Trainer};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1 lexicon

/// Every substring of length 2..=max that is a word, as (start, end) pairs (0-based, inclusive).
fn substring_matches(
    chars: &[char],
    words: &BTreeSet<String>,
    max: usize,
) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    for i in 0..chars.len() {
        for len in 2..=max {
            if i + len > chars.len() {
                break;
            }
            let s: String = chars[i..i + len].iter().collect();
            if words.contains(&s) {
                out.push((i, i + len - 1, s));
            }
        }
    }
    out
}

fn ordered(mut v: Vec<String>) -> Vec<String> {
    v.sort_by(|a, b| (a.chars().count(), a).cmp(&(b.chars().count(), b)));
    v.dedup();
    v
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let alphabet = ['甲', '乙', '丙', '丁', '戊'];
    let cfg = LexiconConfig::default();
    for trial in 0..1000 {
        let words: Vec<String> = (0..50)
            .map(|_| {
                let len = rng.gen_range(1..=5);
                (0..len)
                    .map(|_| *alphabet.choose(&mut rng).unwrap())
                    .collect()
            })
            .collect();
        let lex = Lexicon::from_words(&words, cfg).map_err(|e| e.to_string())?;
        let kept: BTreeSet<String> = words
            .iter()
            .filter(|w| w.chars().count() >= 2)
            .cloned()
            .collect();
        let n = rng.gen_range(1..=15);
        let chars: Vec<char> = (0..n)
            .map(|_| *alphabet.choose(&mut rng).unwrap())
            .collect();
        let m = substring_matches(&chars, &kept, cfg.max_word_len);
        let got = lex.match_sentence(&chars);
        let text = |ids: &[u32]| -> Vec<String> {
            ids.iter().map(|&i| lex.word(i).text.clone()).collect()
        };
        for i in 0..n {
            let fwd: Vec<String> = m.iter().filter(|x| x.0 == i).map(|x| x.2.clone()).collect();
            let bwd: Vec<String> = m.iter().filter(|x| x.1 == i).map(|x| x.2.clone()).collect();
            let flk = [fwd.clone(), bwd.clone()].concat();
            let mut slk = Vec::new();
            if i > 0 {
                slk.extend(m.iter().filter(|x| x.0 == i - 1).map(|x| x.2.clone()));
            }
            slk.extend(m.iter().filter(|x| x.1 == i + 1).map(|x| x.2.clone()));
            for (name, want, have) in [
                ("fwd", fwd, &got.fwd[i]),
                ("bwd", bwd, &got.bwd[i]),
                ("flk", flk, &got.flk[i]),
                ("slk", slk, &got.slk[i]),
            ] {
                ensure(ordered(want.clone()) == text(have), || {
                    format!(
                        "trial {trial}, position {i}, {name}: oracle {want:?} vs {:?}",
                        text(have)
                    )
                })?;
            }
        }
    }
    let fig1 =
        Lexicon::from_words(&["南京", "南京市", "市长", "长江", "大桥", "长江大桥"], cfg).unwrap();
    let chars: Vec<char> = "南京市长江大桥".chars().collect();
    let sets = fig1.match_sentence(&chars);
    for (pos, want) in [
        (1, ["南京", "南京市"]),
        (4, ["长江", "长江大桥"]),
        (5, ["大桥", "长江大桥"]),
    ] {
        let have: BTreeSet<&str> = sets.slk[pos]
            .iter()
            .map(|&i| fig1.word(i).text.as_str())
            .collect();
        ensure(have == want.into_iter().collect(), || {
            format!("SLK at {} is {have:?}", chars[pos])
        })?;
    }
    Ok("1000 random pairs match the substring oracle; 京/江/大 SLK sets exact".into())
}

// ---------------------------------------------------------------- 2 CRF

fn paths(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| (0..k).map(move |y| [p.clone(), vec![y]].concat()))
            .collect();
    }
    out
}

fn brute_score(o: &[f64], t: &[f64], k: usize, y: &[usize]) -> f64 {
    let d = k + 2;
    let mut s = t[k * d + y[0]] + t[y[y.len() - 1] * d + k + 1];
    for i in 0..y.len() {
        s += o[i * k + y[i]];
        if i > 0 {
            s += t[y[i - 1] * d + y[i]];
        }
    }
    s
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut ties = 0;
    for trial in 0..200 {
        let n = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=3);
        // every other lattice is integer-valued so that optimal paths tie
        let integer = trial % 2 == 1;
        let draw = |rng: &mut ChaCha8Rng| {
            if integer {
                rng.gen_range(-1..=1) as f64
            } else {
                rng.gen_range(-3.0..3.0)
            }
        };
        let o: Vec<f64> = (0..n * k).map(|_| draw(&mut rng)).collect();
        let mut t = Tensor::from_vec(
            &[k + 2, k + 2],
            (0..(k + 2) * (k + 2)).map(|_| draw(&mut rng)).collect(),
        )
        .unwrap();
        crf::pin_fixed(&mut t, k);
        let t = t.into_data();
        let lat = Lattice::new(&o, n, k, &t).map_err(|e| e.to_string())?;

        let all = paths(n, k);
        let scores: Vec<f64> = all.iter().map(|y| brute_score(&o, &t, k, y)).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let lz = crf::log_partition(&lat);
        ensure((lz - z).abs() < 1e-8, || {
            format!("lattice {trial}: log Z {lz} vs {z}")
        })?;

        let optimal: Vec<&Vec<usize>> = all
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| s == max)
            .map(|(y, _)| y)
            .collect();
        if optimal.len() > 1 {
            ties += 1;
        }
        // lowest index at each backtrack step = smallest path read right to left
        let expect = optimal
            .iter()
            .min_by(|a, b| a.iter().rev().cmp(b.iter().rev()))
            .unwrap();
        let (path, best) = crf::viterbi(&lat);
        ensure(&&path == expect, || {
            format!("lattice {trial}: viterbi {path:?}, expected {expect:?}")
        })?;
        ensure((best - max).abs() < 1e-9, || {
            format!("lattice {trial}: viterbi score {best} vs {max}")
        })?;

        let post = crf::posteriors(&lat);
        for i in 0..n {
            let sum: f64 = post.node[i].iter().sum();
            ensure((sum - 1.0).abs() < 1e-10, || {
                format!("lattice {trial}: marginals at {i} sum to {sum}")
            })?;
            for y in 0..k {
                let brute: f64 = all
                    .iter()
                    .zip(&scores)
                    .filter(|(p, _)| p[i] == y)
                    .map(|(_, s)| (s - z).exp())
                    .sum();
                ensure((brute - post.node[i][y]).abs() < 1e-8, || {
                    format!(
                        "lattice {trial}: marginal ({i},{y}) {} vs {brute}",
                        post.node[i][y]
                    )
                })?;
            }
        }
    }
    Ok(format!(
        "200 lattices match enumeration ({ties} with tied optima)"
    ))
}

// ---------------------------------------------------------------- 3 gradients

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    let mut models = 0;
    let mut touched: BTreeSet<String> = BTreeSet::new();
    let globals = [GlobalFeature::LastState, GlobalFeature::BothEnds];
    for (s, fusion) in FusionStrategy::ALL.into_iter().enumerate() {
        for m in 0..4 {
            let seed = 300 + (s * 10 + m) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..=5);
            let (spec, mut store, inst) = model::tiny_problem(
                &mut rng,
                n,
                fusion,
                globals[m % 2],
                slkner::crf::BoundaryMode::StartStop,
            )
            .map_err(|e| e.to_string())?;
            let report = model::check_gradients(&spec, &mut store, &inst, 1e-5, &mut rng)
                .map_err(|e| e.to_string())?;
            for (name, p) in store.iter() {
                if p.grad.data().iter().any(|&g| g != 0.0) {
                    touched.insert(name.to_string());
                }
            }
            ensure(report.max_rel_error < 1e-4, || {
                format!("seed {seed} ({fusion}): {:?}", report)
            })?;
            worst = worst.max(report.max_rel_error);
            models += 1;
        }
    }
    let groups = [
        "char_emb",
        "gru_fwd.",
        "gru_bwd.",
        "fusion.w_u",
        "fusion.b_u",
        "word_emb",
        "crf.w_o",
        "crf.b_o",
        "crf.trans",
    ];
    for g in groups {
        ensure(touched.iter().any(|t| t.starts_with(g)), || {
            format!("no gradient ever reached {g}")
        })?;
    }
    Ok(format!(
        "{models} tiny models, max relative error {worst:.2e}"
    ))
}

// ---------------------------------------------------------------- 4 attention

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (d_w, dim) = (3, 6);
    let convex = [
        FusionStrategy::GlobalAttention,
        FusionStrategy::SelfAttention,
        FusionStrategy::Average,
    ];
    for trial in 0..500 {
        let w_u = Tensor::uniform(&[dim, d_w], 1.0, &mut rng);
        let b_u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = rng.gen_range(1..=6);
        let embs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d_w).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let words: Vec<FusionWord> = embs
            .iter()
            .enumerate()
            .map(|(j, e)| FusionWord {
                key: j as u32,
                len: 2 + j % 3,
                emb: e,
            })
            .collect();
        let p = FusionParams {
            w_u: &w_u,
            b_u: &b_u,
        };
        let strategy = convex[trial % 3];
        let (h, cache) = fuse_position(&words, &g, &p, strategy, d_w).map_err(|e| e.to_string())?;
        let a = &cache.alphas;
        ensure((a.iter().sum::<f64>() - 1.0).abs() < 1e-12, || {
            format!("trial {trial}: Σα = {}", a.iter().sum::<f64>())
        })?;
        ensure(a.iter().all(|&x| x >= 0.0), || {
            format!("trial {trial}: negative weight")
        })?;

        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<FusionWord> = perm.iter().map(|&j| words[j]).collect();
        let (h2, c2) = fuse_position(&permuted, &g, &p, strategy, d_w).unwrap();
        for (x, y) in h.iter().zip(&h2) {
            ensure((x - y).abs() < 1e-12, || {
                format!("trial {trial}: permutation changed h")
            })?;
        }
        for (q, &j) in perm.iter().enumerate() {
            ensure((c2.alphas[q] - a[j]).abs() < 1e-12, || {
                format!("trial {trial}: α not permuted alongside")
            })?;
        }

        for c in 0..d_w {
            let lo = embs.iter().map(|e| e[c]).fold(f64::INFINITY, f64::min);
            let hi = embs.iter().map(|e| e[c]).fold(f64::NEG_INFINITY, f64::max);
            ensure(h[c] >= lo - 1e-12 && h[c] <= hi + 1e-12, || {
                format!("trial {trial}: h outside the hull")
            })?;
        }

        if strategy == FusionStrategy::GlobalAttention {
            // shift every score u_jᵀg by c through the bias: b_u += c g / |g|²
            let c = rng.gen_range(-20.0..20.0);
            let gg: f64 = g.iter().map(|x| x * x).sum();
            let shifted: Vec<f64> = b_u.iter().zip(&g).map(|(b, gi)| b + c * gi / gg).collect();
            let p2 = FusionParams {
                w_u: &w_u,
                b_u: &shifted,
            };
            let (_, c3) = fuse_position(&words, &g, &p2, strategy, d_w).unwrap();
            for (x, y) in a.iter().zip(&c3.alphas) {
                ensure((x - y).abs() < 1e-12, || {
                    format!("trial {trial}: shift by {c} changed α")
                })?;
            }
        }

        let (z, _) = fuse_position(&[], &g, &p, strategy, d_w).unwrap();
        ensure(z == vec![0.0; d_w], || {
            format!("trial {trial}: empty set gave {z:?}")
        })?;
    }
    Ok("500 inputs: normalisation, permutation, shift, hull and empty-set checks hold".into())
}

// ---------------------------------------------------------------- 5 memorisation

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    for (k, v) in [
        ("d_w", "16"),
        ("d_c", "16"),
        ("bigru_total", "32"),
        ("batch_size", "8"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

fn criterion_5() -> Outcome {
    let text = "在 O\n南 B-LOC\n京 I-LOC\n市 E-LOC\n长 B-LOC\n江 I-LOC\n大 I-LOC\n桥 E-LOC\n和 O\n李 B-PER\n华 E-PER\n\n";
    let ds = common::dataset(text, Split::Train);
    let mut c = tiny_config();
    c.lr = 1e-2;
    c.dropout = 0.0;
    c.epochs = 200;
    let words = common::lexicon_words();
    let setup = prepare(&c, &ds, &words, EmbeddingTable::new(c.d_w).unwrap(), None)
        .map_err(|e| e.to_string())?;
    let mut t = Trainer::new(c, setup).map_err(|e| e.to_string())?;
    let inst = t
        .instances(&ds.sentences, None)
        .map_err(|e| e.to_string())?;
    let mut last = f64::INFINITY;
    for epoch in 1..=200 {
        t.run_epoch(&inst).map_err(|e| e.to_string())?;
        last = model::sentence_nll(&t.spec, &t.store, &inst[0]).map_err(|e| e.to_string())?;
        if last < 0.01 {
            return Ok(format!("NLL {last:.2e} after {epoch} epochs"));
        }
    }
    Err(format!("NLL still {last} after 200 epochs"))
}

// ---------------------------------------------------------------- 6 synthetic corpus

fn well_formed(s: &eval::Scores) -> bool {
    [s.p, s.r, s.f1]
        .iter()
        .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
}

fn synthetic_trainer(
    mode: KnowledgeMode,
    fusion: FusionStrategy,
) -> Result<(Trainer, Vec<Instance>), String> {
    let ds = common::dataset(&common::synthetic_conll(606, 50), Split::Train);
    let mut c = tiny_config();
    c.lr = 1e-2;
    c.knowledge_mode = mode;
    c.fusion = fusion;
    let words = common::lexicon_words();
    let setup = prepare(&c, &ds, &words, EmbeddingTable::new(c.d_w).unwrap(), None)
        .map_err(|e| e.to_string())?;
    let t = Trainer::new(c, setup).map_err(|e| e.to_string())?;
    let inst = t
        .instances(&ds.sentences, None)
        .map_err(|e| e.to_string())?;
    Ok((t, inst))
}

fn criterion_6() -> Outcome {
    let (mut t, inst) = synthetic_trainer(KnowledgeMode::Slk, FusionStrategy::GlobalAttention)?;
    let lex_words = inst
        .iter()
        .flat_map(|i| i.words.iter())
        .filter(|w| !w.is_empty())
        .count();
    ensure(lex_words > 0, || {
        "synthetic corpus produced no SLK matches".into()
    })?;
    let mut reached = None;
    let mut f1 = 0.0;
    for epoch in 1..=100 {
        t.run_epoch(&inst).map_err(|e| e.to_string())?;
        f1 = t.evaluate(&t.store, &inst).map_err(|e| e.to_string())?.f1;
        if f1 >= 0.95 {
            reached = Some(epoch);
            break;
        }
    }
    let epoch = reached.ok_or_else(|| format!("SLK train F1 only {f1:.3} after 100 epochs"))?;
    let mut runs = 0;
    for mode in KnowledgeMode::ALL {
        for fusion in FusionStrategy::ALL {
            let (mut t, inst) = synthetic_trainer(mode, fusion)?;
            t.config.epochs = 3;
            t.train(&inst, &inst, None, |_| {})
                .map_err(|e| format!("{mode}/{fusion}: {e}"))?;
            let s = t
                .evaluate(&t.best, &inst)
                .map_err(|e| format!("{mode}/{fusion}: {e}"))?;
            ensure(well_formed(&s), || {
                format!("{mode}/{fusion}: metrics {s:?}")
            })?;
            runs += 1;
        }
    }
    Ok(format!(
        "SLK train F1 {f1:.3} at epoch {epoch}; {runs} mode/strategy runs completed"
    ))
}

// ---------------------------------------------------------------- 7 determinism

fn train_to(dir: &Path, name: &str) -> Result<(Trainer, Vec<Instance>, Vec<u8>), String> {
    let (mut t, inst) = synthetic_trainer(KnowledgeMode::Slk, FusionStrategy::GlobalAttention)?;
    t.config.epochs = 2;
    let dev = common::dataset(&common::synthetic_conll(707, 20), Split::Valid);
    let dev = t
        .instances(&dev.sentences, None)
        .map_err(|e| e.to_string())?;
    let path = dir.join(name);
    t.train(&inst, &dev, Some(&path), |_| {})
        .map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    Ok((t, dev, bytes))
}

fn tag_with(ck: &Path, input: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_slkner"))
        .args(["tag", "--set"])
        .arg(format!("checkpoint={}", ck.display()))
        .arg("--input")
        .arg(input)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("tag failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out.stdout)
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, dev, bytes_a) = train_to(dir.path(), "a.ck")?;
    let (_, _, bytes_b) = train_to(dir.path(), "b.ck")?;
    ensure(bytes_a == bytes_b, || {
        "checkpoints from identical runs differ".into()
    })?;

    let loaded = Checkpoint::load(&dir.path().join("a.ck")).map_err(|e| e.to_string())?;
    let resumed = Trainer::resume(loaded).map_err(|e| e.to_string())?;
    let f1 = resumed
        .evaluate(&resumed.best, &dev)
        .map_err(|e| e.to_string())?
        .f1;
    ensure(f1 == a.state.best_dev_f1, || {
        format!("reloaded dev F1 {f1} vs recorded {}", a.state.best_dev_f1)
    })?;

    let input = dir.path().join("input.txt");
    std::fs::write(&input, "南京市长江大桥\n李华北京的清华大学\n\n王小明天来\n")
        .map_err(|e| e.to_string())?;
    let first = tag_with(&dir.path().join("a.ck"), &input)?;
    let second = tag_with(&dir.path().join("a.ck"), &input)?;
    let other = tag_with(&dir.path().join("b.ck"), &input)?;
    ensure(first == second && first == other, || {
        "tag output differs between runs".into()
    })?;
    ensure(!first.is_empty(), || "tag produced no output".into())?;
    Ok(format!(
        "checkpoints bit-identical ({} bytes), reload F1 {f1:.4} exact, tag output identical",
        bytes_a.len()
    ))
}

// ---------------------------------------------------------------- 8 defaults

fn criterion_8() -> Outcome {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_slkner"));
    cmd.arg("echo-config");
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("SLKNER_")) {
        cmd.env_remove(k);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || "echo-config failed".into())?;
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let get = |key: &str| -> Result<f64, String> {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .ok_or_else(|| format!("echo-config has no {key}"))?
            .parse::<f64>()
            .map_err(|e| format!("{key}: {e}"))
    };
    for (key, want) in [
        ("max_len", 250.0),
        ("d_w", 50.0),
        ("bigru_total", 512.0),
        ("layers", 1.0),
        ("dropout", 0.1),
        ("batch_size", 32.0),
        ("lr", 5e-5),
    ] {
        let have = get(key)?;
        ensure(have == want, || format!("{key} = {have}, expected {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for dim in [1usize, 3, 50, 64, 300] {
        let bound = (3.0 / dim as f64).sqrt();
        ensure((init_bound(dim) - bound).abs() < 1e-12, || {
            format!("bound at dim {dim}: {}", init_bound(dim))
        })?;
        for _ in 0..200 {
            let row = random_init_row(dim, &mut rng).map_err(|e| e.to_string())?;
            ensure(
                row.len() == dim && row.iter().all(|v| v.abs() <= bound),
                || format!("row outside ±{bound}"),
            )?;
        }
    }
    ensure(
        (init_bound(50) - 0.244_948_974_278_317_8).abs() < 1e-12,
        || "dim 50 bound".into(),
    )?;
    Ok("echo-config reports the published defaults; init bound √(3/dim)".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "lexicon oracle equivalence",
            criterion_1,
            Duration::from_secs(5),
        ),
        ("CRF exactness", criterion_2, Duration::from_secs(10)),
        ("gradient fidelity", criterion_3, Duration::from_secs(60)),
        ("attention properties", criterion_4, Duration::from_secs(5)),
        ("memorisation", criterion_5, Duration::from_secs(30)),
        (
            "synthetic-corpus overfit",
            criterion_6,
            Duration::from_secs(300),
        ),
        (
            "determinism and persistence",
            criterion_7,
            Duration::from_secs(300),
        ),
        ("defaults conformance", criterion_8, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(_) if took > *limit => Err(format!(
                "took {:.1}s, limit {}s",
                took.as_secs_f64(),
                limit.as_secs()
            )),
            o => o,
        };
        match outcome {
            Ok(detail) => println!(
                "PASS  criterion {} {name} ({:.2}s): {detail}",
                i + 1,
                took.as_secs_f64()
            ),
            Err(why) => {
                failed += 1;
                println!(
                    "FAIL  criterion {} {name} ({:.2}s): {why}",
                    i + 1,
                    took.as_secs_f64()
                );
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

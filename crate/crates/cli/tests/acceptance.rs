//! One line per acceptance criterion, then a single assertion that all
//! of them held.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::bleu_oracle::oracle_bleu;
use common::gradcheck::{check_model, check_ops, TOLERANCE};
use common::scenarios::{
    bilingual_tokenizers, bpe, bridge, copy_config, copy_task, direction, exact_match_and_bleu, related_pair,
    small_config,
};
use nmt_core::corpus::{split, split_counts, write_lines, ParallelCorpus, SentencePair};
use nmt_core::eval::{corpus_bleu, gain_from_stats, DecodeOptions};
use nmt_core::protocols::{
    batches_of, bilingual_data, joint_tokenizers, multilingual_loss, sized_config, train_baseline, train_multilingual,
    train_transfer, transfer_init, zero_shot_eval, Checkpoint, MetricsLog, MultiCorpus, Tokenizers,
};
use nmt_core::subword::{BOS_ID, EOS_ID};
use nmt_core::synthetic::copy_corpus;
use nmt_core::tensor::{Reduction, Tape};
use nmt_core::transformer::TransformerModel;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradients() -> Outcome {
    let mut worst = ("", 0.0f64);
    for seed in 0..100 {
        for (op, e) in check_ops(seed) {
            if e > worst.1 {
                worst = (op, e);
            }
        }
        let e = check_model(seed);
        if e > worst.1 {
            worst = ("two-layer model", e);
        }
    }
    ensure(worst.1 < TOLERANCE, format!("max rel. err {:.2e} ({}) over 100 seeds", worst.1, worst.0))
}

fn bleu_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let words = ["a", "b", "c", "d"];
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<&str> {
        let n = rng.random_range(0..=10);
        (0..n).map(|_| words[rng.random_range(0..words.len())]).collect()
    };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let h: Vec<Vec<&str>> = (0..n).map(|_| sentence(&mut rng)).collect();
        let r: Vec<Vec<&str>> = (0..n).map(|_| sentence(&mut rng)).collect();
        worst = worst.max((corpus_bleu(&h, &r).unwrap().score - oracle_bleu(&h, &r)).abs());
    }
    let h = vec![vec!["the", "cat", "sat", "on", "the", "mat"], vec!["a", "b", "c", "d", "e"]];
    let identity = corpus_bleu(&h, &h).unwrap().score;
    let disjoint = corpus_bleu(&h, &[vec!["x", "y", "z", "w"], vec!["p", "q", "r", "s", "t"]]).unwrap().score;
    ensure(
        worst < 1e-9 && (identity - 100.0).abs() < 1e-9 && disjoint == 0.0,
        format!("max |bleu - oracle| {worst:.1e} on 200 corpora, identity {identity}, disjoint {disjoint}"),
    )
}

fn numbered(n: usize) -> ParallelCorpus {
    let pairs = (0..n)
        .map(|i| SentencePair {
            src: format!("s{i}"),
            tgt: format!("t{i}"),
        })
        .collect();
    ParallelCorpus::new(direction("en-zu"), pairs)
}

fn split_arithmetic() -> Outcome {
    let reference = split_counts(30_253) == (21_177, 4_538, 4_538) && split_counts(77_500) == (54_250, 11_625, 11_625);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(20..2000);
        let seed: u64 = rng.random();
        let c = numbered(n);
        let s = split(&c, seed).unwrap();
        let (tr, va, te) = split_counts(n);
        if (s.train.len(), s.valid.len(), s.test.len()) != (tr, va, te) {
            return Err(format!("N={n} seed={seed}: sizes differ"));
        }
        let mut seen: HashMap<&SentencePair, usize> = HashMap::new();
        for p in s.train.pairs.iter().chain(&s.valid.pairs).chain(&s.test.pairs) {
            *seen.entry(p).or_default() += 1;
        }
        if seen.len() != n || seen.values().any(|&k| k != 1) || c.pairs.iter().any(|p| !seen.contains_key(p)) {
            return Err(format!("N={n} seed={seed}: not a partition"));
        }
    }
    ensure(reference, "reference sizes exact; 200 random (N, seed) partitions disjoint and complete".into())
}

fn transfer_equality() -> Outcome {
    let (s, tok) = copy_task(1);
    let parent = train_baseline(&s, &tok, &copy_config(1, 40), &mut MetricsLog::new()).unwrap().last;
    let pm = parent.model().unwrap();
    let child = transfer_init(&parent, &tok, &tok, pm.config(), 99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..20 {
        let mut src: Vec<u32> = (0..rng.random_range(1..8))
            .map(|_| rng.random_range(4..tok.source.vocab_size() as u32))
            .collect();
        src.push(EOS_ID);
        let mut tgt = vec![BOS_ID];
        tgt.extend((0..rng.random_range(1..8)).map(|_| rng.random_range(4..tok.target.vocab_size() as u32)));
        let (a, b) = (pm.logits(&src, &tgt).unwrap(), child.logits(&src, &tgt).unwrap());
        if !a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()) {
            return Err(format!("input {i}: child logits differ from parent"));
        }
    }
    let (child_split, _) = copy_task(5);
    let child_tok = Tokenizers {
        source: tok.source.clone(),
        target: bpe(&child_split.train.targets().collect::<Vec<_>>(), 60),
    };
    let mut cfg = copy_config(5, 1);
    cfg.eval_every = 1;
    let init = transfer_init(&parent, &tok, &child_tok, &sized_config(&cfg, &child_tok), cfg.seed).unwrap();
    let out = train_transfer(&parent, &tok, &child_split, &child_tok, &cfg, &mut MetricsLog::new()).unwrap();
    let frozen: Vec<&str> = init
        .params()
        .iter()
        .filter(|(name, t)| out.last.params.get(name).unwrap() == *t)
        .map(|(name, _)| name)
        .collect();
    ensure(
        frozen.is_empty(),
        format!("20 inputs bit-identical; {} of {} tensors moved after one step", init.params().len() - frozen.len(), init.params().len()),
    )
}

fn single_direction_reduction() -> Outcome {
    let (s, tok) = copy_task(6);
    let data = bilingual_data(&s, &tok, 256).unwrap();
    let model = TransformerModel::init(sized_config(&copy_config(6, 0), &tok), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut pool = data.train.clone();
        pool.shuffle(&mut rng);
        let batch = batches_of(&pool[..rng.random_range(1..12)], 10_000).remove(0);
        let tape = Tape::new();
        let b = model.bind(&tape, false);
        let none = None::<&mut ChaCha8Rng>;
        let multi = multilingual_loss(&model, &b, std::slice::from_ref(&batch), none).unwrap().value().item();
        let base = model.batch_loss(&b, &batch, Reduction::Mean, None::<&mut ChaCha8Rng>).unwrap().value().item();
        worst = worst.max((multi - base).abs());
    }
    ensure(worst < 1e-9, format!("max |multilingual - baseline| {worst:.1e} on 20 batches"))
}

fn copy_task_learned() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 1..=3 {
        let (s, tok) = copy_task(seed);
        let out = train_baseline(&s, &tok, &copy_config(seed, 2000), &mut MetricsLog::new()).unwrap();
        let (exact, bleu) = exact_match_and_bleu(&out.best.model().unwrap(), &tok, &s.test, None);
        ok &= exact >= 0.95 && bleu >= 95.0;
        lines.push(format!("seed {seed}: exact {:.1}% BLEU {bleu:.1}", 100.0 * exact));
    }
    ensure(ok, lines.join("; "))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn multilingual_gain() -> Outcome {
    let pair = related_pair();
    let base_tok = bilingual_tokenizers(&pair.low, 200);
    let multi_tok = joint_tokenizers(&[pair.high.clone(), pair.low.clone()], 300, 300, false).unwrap();
    let mc = MultiCorpus::new(vec![pair.high.clone(), pair.low.clone()], multi_tok.clone()).unwrap();
    let (mut base, mut multi) = (Vec::new(), Vec::new());
    for seed in 1..=5 {
        let cfg = small_config(seed, 2000, 0.1);
        let b = train_baseline(&pair.low, &base_tok, &cfg, &mut MetricsLog::new()).unwrap();
        base.push(exact_match_and_bleu(&b.best.model().unwrap(), &base_tok, &pair.low.test, None).1);
        let m = train_multilingual(&mc, &cfg, &mut MetricsLog::new()).unwrap();
        multi.push(exact_match_and_bleu(&m.best.model().unwrap(), &multi_tok, &pair.low.test, Some("zu")).1);
    }
    let diff = mean(&multi) - mean(&base);
    ensure(
        diff >= 1.0,
        format!("low-resource BLEU multilingual {:.1} vs baseline {:.1} (diff {diff:+.1})", mean(&multi), mean(&base)),
    )
}

fn zero_shot() -> Outcome {
    let br = bridge();
    let mc = MultiCorpus::new(vec![br.ab.clone(), br.bc.clone()], br.tokenizers.clone()).unwrap();
    let ac = direction("a-c");
    let (mut zs, mut floor) = (Vec::new(), Vec::new());
    for seed in 1..=5 {
        let out = train_multilingual(&mc, &small_config(seed, 2000, 0.1), &mut MetricsLog::new()).unwrap();
        let mut ck = out.best;
        zs.push(zero_shot_eval(&ck, &br.tokenizers, &ac, &br.ac_test, DecodeOptions::greedy()).unwrap().mean);
        let fresh = TransformerModel::init(ck.config.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        ck.params = fresh.into_params();
        floor.push(zero_shot_eval(&ck, &br.tokenizers, &ac, &br.ac_test, DecodeOptions::greedy()).unwrap().mean);
    }
    let diff = mean(&zs) - mean(&floor);
    ensure(
        diff >= 5.0 && zs.iter().zip(&floor).all(|(z, f)| z > f),
        format!("a-c zero-shot BLEU {:.1} vs untrained floor {:.1} (diff {diff:+.1})", mean(&zs), mean(&floor)),
    )
}

fn gain_error_bars() -> Outcome {
    // Baseline 8.7 ± 0.3; (model mean, model std, reference gain std).
    let rows = [(18.6, 1.0, 1.0), (6.0, 0.3, 0.4), (14.6, 0.2, 0.3), (14.8, 0.2, 0.4), (9.6, 0.7, 0.8), (10.6, 0.2, 0.4)];
    let mut worst = 0.0f64;
    for (m, s, gs) in rows {
        let r = gain_from_stats("m", "b", (m, Some(s)), (8.7, Some(0.3)));
        worst = worst.max((r.gain_std.unwrap() - gs).abs());
    }
    ensure(worst <= 0.1 + 1e-9, format!("max |quadrature - reference| {worst:.3} over {} gain rows", rows.len()))
}

fn nmt(args: &[&str]) -> (u8, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = nmt_cli::main_with_args(std::iter::once("nmt").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8_lossy(&err).into_owned())
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let c = copy_corpus(150, 10, 2, 5, 1);
    write_lines(&d.join("raw.src"), c.sources()).unwrap();
    write_lines(&d.join("raw.tgt"), c.targets()).unwrap();
    let p = |x: &str| d.join(x).to_str().unwrap().to_string();
    let (code, err) = nmt(&["prepare", "--src", &p("raw.src"), "--tgt", &p("raw.tgt"), "--langs", "src-copy", "--out", &p("split")]);
    if code != 0 {
        return Err(format!("prepare failed: {err}"));
    }
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let cfg = format!(
            "protocol = baseline\ndata = split\noutput_dir = {run}\nmax_steps = 40\nseed = 9\nnum_layers = 1\n\
             model_dim = 16\nff_dim = 32\nnum_heads = 2\ndropout = 0.1\neval_every = 10\nsrc_vocab = 60\ntgt_vocab = 60\n"
        );
        fs::write(d.join(format!("{run}.cfg")), cfg).unwrap();
        let (code, err) = nmt(&["train", "--config", &p(&format!("{run}.cfg"))]);
        if code != 0 {
            return Err(format!("train failed: {err}"));
        }
        bytes.push([fs::read(d.join(run).join("final.ckpt")).unwrap(), fs::read(d.join(run).join("best.ckpt")).unwrap()]);
    }
    let repeated = bytes[0] == bytes[1];
    let ck = Checkpoint::load(&d.join("a/final.ckpt")).unwrap();
    ck.save(&d.join("resaved.ckpt")).unwrap();
    let round_trip = fs::read(d.join("resaved.ckpt")).unwrap() == bytes[0][0];
    ensure(
        repeated && round_trip,
        format!("repeated train identical: {repeated}; save/load/save identical: {round_trip}"),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradients),
        ("BLEU oracle", bleu_oracle),
        ("split arithmetic", split_arithmetic),
        ("transfer-init equality", transfer_equality),
        ("single-direction multilingual loss", single_direction_reduction),
        ("copy task", copy_task_learned),
        ("synthetic multilingual gain", multilingual_gain),
        ("synthetic zero-shot", zero_shot),
        ("gain error bars", gain_error_bars),
        ("reproducibility", reproducibility),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        let (verdict, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(i + 1);
                ("FAIL", d)
            }
        };
        // Written to the real stdout so the lines survive output capture.
        let mut out = std::io::stdout().lock();
        writeln!(out, "{verdict} criterion {}: {name}: {detail} [{secs:.1}s]", i + 1).unwrap();
        out.flush().unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

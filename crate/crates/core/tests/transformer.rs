mod common;

use common::gradcheck::{random_batch, tiny_config};
use nmt_core::subword::{BOS_ID, EOS_ID};
use nmt_core::tensor::{Reduction, Tape};
use nmt_core::transformer::{ModelConfig, Seq2SeqBatch, TransformerModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(layers: usize, heads: usize, d: usize, ff: usize, src: usize, tgt: usize) -> ModelConfig {
    ModelConfig {
        num_layers: layers,
        num_heads: heads,
        model_dim: d,
        ff_dim: ff,
        dropout: 0.1,
        src_vocab_size: src,
        tgt_vocab_size: tgt,
        max_seq_len: 32,
    }
}

/// Every weight matrix and vector written out by hand.
fn enumerated(c: &ModelConfig) -> usize {
    let (d, ff) = (c.model_dim, c.ff_dim);
    let attention = [d * d, d * d, d * d, d * d];
    let norm = [d, d];
    let ffn = [d * ff, ff, ff * d, d];
    let mut sizes = vec![c.src_vocab_size * d, c.tgt_vocab_size * d];
    for _ in 0..c.num_layers {
        sizes.extend(attention);
        sizes.extend(norm);
        sizes.extend(ffn);
        sizes.extend(norm);
    }
    for _ in 0..c.num_layers {
        sizes.extend(attention);
        sizes.extend(norm);
        sizes.extend(attention);
        sizes.extend(norm);
        sizes.extend(ffn);
        sizes.extend(norm);
    }
    sizes.push(d * c.tgt_vocab_size);
    sizes.push(c.tgt_vocab_size);
    sizes.iter().sum()
}

#[test]
fn parameter_count_matches_enumeration() {
    for c in [
        config(1, 1, 4, 8, 10, 12),
        config(2, 2, 16, 24, 30, 20),
        config(3, 4, 32, 64, 50, 70),
    ] {
        let model = TransformerModel::init(c.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(c.parameter_count(), enumerated(&c));
        assert_eq!(model.params().scalar_count(), enumerated(&c));
    }
}

fn random_model(seed: u64) -> TransformerModel {
    TransformerModel::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_seq(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(4..vocab as u32)).collect()
}

#[test]
fn sequence_logprob_factorizes_into_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let model = random_model(case);
        let cfg = model.config().clone();
        let s = rng.random_range(1..6);
        let t = rng.random_range(1..6);
        let mut src = random_seq(&mut rng, s, cfg.src_vocab_size);
        src.push(EOS_ID);
        let mut tgt = random_seq(&mut rng, t, cfg.tgt_vocab_size);
        tgt.push(EOS_ID);
        let memory = model.encode(&src).unwrap();
        let mut prefix = vec![BOS_ID];
        let mut stepwise = 0.0;
        for &y in &tgt {
            let p = model.decode_step(&memory, &prefix).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            stepwise += p[y as usize].ln();
            prefix.push(y);
        }
        let whole = model.sequence_logprob(&src, &tgt).unwrap();
        assert!((whole - stepwise).abs() < 1e-5, "case {case}: {whole} vs {stepwise}");
    }
}

#[test]
fn future_tokens_do_not_affect_earlier_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..20 {
        let model = random_model(100 + case);
        let v = model.config().tgt_vocab_size;
        let src = [5, 6, 7, EOS_ID];
        let len = rng.random_range(2..8);
        let mut tgt_in = vec![BOS_ID];
        tgt_in.extend(random_seq(&mut rng, len - 1, v));
        let base = model.logits(&src, &tgt_in).unwrap();
        for t in 0..len - 1 {
            let mut changed = tgt_in.clone();
            for x in &mut changed[t + 1..] {
                *x = rng.random_range(4..v as u32);
            }
            let other = model.logits(&src, &changed).unwrap();
            for r in 0..=t {
                let diff = base
                    .row(r)
                    .iter()
                    .zip(other.row(r))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(diff < 1e-9, "case {case}, row {r} moved by {diff}");
            }
        }
    }
}

#[test]
fn padding_does_not_leak_between_examples() {
    let model = random_model(3);
    let tape_loss = |batch: &Seq2SeqBatch| {
        let tape = Tape::new();
        let b = model.bind(&tape, false);
        let l = model.batch_loss(&b, batch, Reduction::Sum, None::<&mut ChaCha8Rng>).unwrap();
        let v = l.value().item();
        v
    };
    let short = (vec![4, EOS_ID], vec![5]);
    let long = (vec![4, 5, 6, 7, 8, EOS_ID], vec![6, 5, 4, 6]);
    let alone = tape_loss(&Seq2SeqBatch {
        src: vec![short.0.clone()],
        tgt: vec![short.1.clone()],
    }) + tape_loss(&Seq2SeqBatch {
        src: vec![long.0.clone()],
        tgt: vec![long.1.clone()],
    });
    let together = tape_loss(&Seq2SeqBatch {
        src: vec![short.0, long.0],
        tgt: vec![short.1, long.1],
    });
    assert!((alone - together).abs() < 1e-9, "{alone} vs {together}");
}

#[test]
fn every_parameter_receives_gradient() {
    let model = random_model(11);
    let cfg = model.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = random_batch(&cfg, &mut rng);
    let tape = Tape::new();
    let b = model.bind(&tape, true);
    let loss = model.batch_loss(&b, &batch, Reduction::Mean, Some(&mut rng)).unwrap();
    let grads = b.collect_gradients(&tape.backward(loss).unwrap());
    for (i, g) in grads.iter().enumerate() {
        assert!(
            g.data().iter().any(|&x| x != 0.0),
            "{} has an all-zero gradient",
            model.params().name(i)
        );
    }
}

#[test]
fn initialization_and_dropout_are_seed_determined() {
    let a = random_model(21);
    let b = random_model(21);
    assert_eq!(a, b);
    assert_ne!(a, random_model(22));
    let src = [4, 5, 6, EOS_ID];
    let enc = |seed| {
        a.encode_with(&src, Some(&mut ChaCha8Rng::seed_from_u64(seed)))
            .unwrap()
            .states()
            .clone()
    };
    assert_eq!(enc(1), enc(1));
    assert_ne!(enc(1), enc(2));
}

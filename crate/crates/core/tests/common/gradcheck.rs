//! Central finite-difference gradient checks for every tape operation and
//! for a full two-layer model. Shared by the autodiff tests and the
//! acceptance target.

use nmt_core::tensor::{normal, Reduction, Tape, Tensor, Var};
use nmt_core::transformer::{ModelConfig, Seq2SeqBatch, TransformerModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: below this magnitude errors are judged absolutely.
const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn projected<'t>(out: Var<'t>, proj: &Tensor) -> Var<'t> {
    let r = out.tape().constant(proj.clone());
    out.mul(r).expect("projection shape").sum()
}

/// Largest relative error between the tape gradient of `⟨f(x), R⟩` and
/// its central difference, over every entry of every input.
pub fn max_error<F>(inputs: &[Tensor], rng: &mut ChaCha8Rng, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars);
    let proj = normal(&out.shape(), 1.0, rng);
    let loss = projected(out, &proj);
    let grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape())))
        .collect();

    let eval = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let v = projected(f(&tape, &vars), &proj).value().item();
        v
    };
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        for i in 0..xs[k].numel() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] = orig - STEP;
            let down = eval(&xs);
            xs[k].data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic[k].data()[i], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    normal(shape, 1.0, rng)
}

/// Random values kept at least 0.05 away from zero, so ReLU's kink is
/// never straddled by the difference stencil.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = randn(shape, rng);
    for x in t.data_mut() {
        if x.abs() < 0.05 {
            *x = 0.05f64.copysign(*x);
        }
    }
    t
}

/// Maximum error per operation for one seed.
pub fn check_ops(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();
    let m34 = |r: &mut ChaCha8Rng| randn(&[3, 4], r);

    let (a, b) = (m34(r), m34(r));
    out.push(("add", max_error(&[a, b], r, |_, x| x[0].add(x[1]).unwrap())));
    let (a, b) = (m34(r), m34(r));
    out.push(("sub", max_error(&[a, b], r, |_, x| x[0].sub(x[1]).unwrap())));
    let (a, b) = (m34(r), m34(r));
    out.push(("mul", max_error(&[a, b], r, |_, x| x[0].mul(x[1]).unwrap())));
    // Shared use: the gradient of x·x must accumulate both contributions.
    let a = m34(r);
    out.push(("mul_self", max_error(&[a], r, |_, x| x[0].mul(x[0]).unwrap())));
    let a = m34(r);
    out.push(("scale", max_error(&[a], r, |_, x| x[0].scale(-1.7))));
    let (a, b) = (m34(r), randn(&[4], r));
    out.push(("add_bias", max_error(&[a, b], r, |_, x| x[0].add_bias(x[1]).unwrap())));
    let (a, b) = (randn(&[2, 3, 4], r), randn(&[4], r));
    out.push(("add_bias_3d", max_error(&[a, b], r, |_, x| x[0].add_bias(x[1]).unwrap())));
    let (a, b) = (m34(r), randn(&[4, 5], r));
    out.push(("matmul", max_error(&[a, b], r, |_, x| x[0].matmul(x[1]).unwrap())));
    let (a, b) = (randn(&[2, 3, 4], r), randn(&[2, 4, 5], r));
    out.push(("bmm", max_error(&[a, b], r, |_, x| x[0].bmm(x[1]).unwrap())));
    let a = randn(&[2, 6], r);
    out.push(("reshape", max_error(&[a], r, |_, x| x[0].reshape(&[3, 4]).unwrap())));
    let a = randn(&[2, 3, 4], r);
    out.push(("permute", max_error(&[a], r, |_, x| x[0].permute(&[2, 0, 1]).unwrap())));
    let a = m34(r);
    out.push(("transpose", max_error(&[a], r, |_, x| x[0].transpose().unwrap())));
    let a = m34(r);
    out.push(("softmax_rows", max_error(&[a], r, |_, x| x[0].softmax(1).unwrap())));
    let a = m34(r);
    out.push(("softmax_cols", max_error(&[a], r, |_, x| x[0].softmax(0).unwrap())));
    let a = randn(&[2, 3, 4], r);
    out.push(("softmax_mid", max_error(&[a], r, |_, x| x[0].softmax(1).unwrap())));
    let (a, g, b) = (m34(r), randn(&[4], r), randn(&[4], r));
    out.push((
        "layer_norm",
        max_error(&[a, g, b], r, |_, x| x[0].layer_norm(x[1], x[2], 1e-6).unwrap()),
    ));
    let a = away_from_zero(&[3, 4], r);
    out.push(("relu", max_error(&[a], r, |_, x| x[0].relu())));
    let a = m34(r);
    let mask_seed: u64 = r.random();
    out.push((
        "dropout",
        max_error(&[a], r, move |_, x| {
            x[0].dropout(0.3, Some(&mut ChaCha8Rng::seed_from_u64(mask_seed)))
        }),
    ));
    let a = randn(&[6, 4], r);
    out.push(("embedding", max_error(&[a], r, |_, x| x[0].embedding(&[1, 3, 3, 0, 5]).unwrap())));
    let (a, b) = (m34(r), randn(&[2, 4], r));
    out.push(("concat_rows", max_error(&[a, b], r, |t, x| t.concat(&[x[0], x[1]], 0).unwrap())));
    let (a, b) = (m34(r), randn(&[3, 2], r));
    out.push(("concat_cols", max_error(&[a, b], r, |t, x| t.concat(&[x[0], x[1]], 1).unwrap())));
    let a = randn(&[5, 6], r);
    out.push((
        "cross_entropy_mean",
        max_error(&[a], r, |_, x| x[0].cross_entropy(&[2, 0, 5, 1, 0], 0, Reduction::Mean).unwrap()),
    ));
    let a = randn(&[5, 6], r);
    out.push((
        "cross_entropy_sum",
        max_error(&[a], r, |_, x| x[0].cross_entropy(&[2, 0, 5, 1, 4], 0, Reduction::Sum).unwrap()),
    ));
    let a = m34(r);
    out.push(("sum", max_error(&[a], r, |_, x| x[0].sum())));
    let a = m34(r);
    out.push(("mean", max_error(&[a], r, |_, x| x[0].mean())));
    out
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        num_heads: 2,
        model_dim: 8,
        ff_dim: 12,
        dropout: 0.1,
        src_vocab_size: 9,
        tgt_vocab_size: 7,
        max_seq_len: 16,
    }
}

/// A random padded batch: sources end in EOS, lengths differ.
pub fn random_batch(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Seq2SeqBatch {
    let n = rng.random_range(1..=3);
    let mut batch = Seq2SeqBatch::default();
    for _ in 0..n {
        let s = rng.random_range(1..=5);
        let t = rng.random_range(1..=4);
        let mut src: Vec<u32> = (0..s).map(|_| rng.random_range(4..cfg.src_vocab_size as u32)).collect();
        src.push(3);
        batch.src.push(src);
        batch.tgt.push((0..t).map(|_| rng.random_range(4..cfg.tgt_vocab_size as u32)).collect());
    }
    batch
}

/// Two-layer encoder-decoder with dropout active: tape gradients of the
/// batch loss against central differences, four sampled entries per
/// parameter tensor (every entry of the small ones).
pub fn check_model(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_config();
    let mut model = TransformerModel::init(cfg.clone(), &mut rng).unwrap();
    // Perturb the unit gains and zero biases so no parameter sits at a
    // special point.
    for i in 0..model.params().len() {
        let t = model.params_mut().tensor_mut(i);
        for x in t.data_mut() {
            *x += 0.1 * rng.random::<f64>() - 0.05;
        }
    }
    let batch = random_batch(&cfg, &mut rng);
    let dropout_seed: u64 = rng.random();
    let loss_of = |m: &TransformerModel, trainable: bool| {
        let tape = Tape::new();
        let b = m.bind(&tape, trainable);
        let mut drop = ChaCha8Rng::seed_from_u64(dropout_seed);
        let l = m.batch_loss(&b, &batch, Reduction::Mean, Some(&mut drop)).unwrap();
        let value = l.value().item();
        let grads = trainable.then(|| b.collect_gradients(&tape.backward(l).unwrap()));
        (value, grads)
    };
    let analytic = loss_of(&model, true).1.unwrap();
    let mut worst = 0.0f64;
    for k in 0..model.params().len() {
        let n = model.params().tensor(k).numel();
        let entries: Vec<usize> = if n <= 16 {
            (0..n).collect()
        } else {
            (0..4).map(|_| rng.random_range(0..n)).collect()
        };
        for i in entries {
            let orig = model.params().tensor(k).data()[i];
            model.params_mut().tensor_mut(k).data_mut()[i] = orig + STEP;
            let up = loss_of(&model, false).0;
            model.params_mut().tensor_mut(k).data_mut()[i] = orig - STEP;
            let down = loss_of(&model, false).0;
            model.params_mut().tensor_mut(k).data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic[k].data()[i], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

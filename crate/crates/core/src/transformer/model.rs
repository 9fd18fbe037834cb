use rand::Rng;

use super::attention::MASK_VALUE;
use super::{ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::subword::{TokenId, BOS_ID, PAD_ID};
use crate::tensor::{self, Gradients, Reduction, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
struct AttnIdx {
    w_q: usize,
    w_k: usize,
    w_v: usize,
    w_o: usize,
}

#[derive(Clone, Copy, Debug)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    self_attn: AttnIdx,
    norm1: NormIdx,
    ffn: FfnIdx,
    norm2: NormIdx,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    self_attn: AttnIdx,
    norm1: NormIdx,
    cross_attn: AttnIdx,
    norm2: NormIdx,
    ffn: FfnIdx,
    norm3: NormIdx,
}

#[derive(Clone, Debug)]
struct Layout {
    src_embedding: usize,
    tgt_embedding: usize,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out_weight: usize,
    out_bias: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Embedding,
    Xavier,
    Ones,
    Zeros,
}

/// Canonical parameter names, shapes and initializers for a config.
fn parameter_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.model_dim;
    let ff = cfg.ff_dim;
    let mut specs = vec![
        ("encoder.embedding".to_string(), vec![cfg.src_vocab_size, d], Init::Embedding),
        ("decoder.embedding".to_string(), vec![cfg.tgt_vocab_size, d], Init::Embedding),
    ];
    let attn = |specs: &mut Vec<_>, prefix: &str| {
        for w in ["w_q", "w_k", "w_v", "w_o"] {
            specs.push((format!("{prefix}.{w}"), vec![d, d], Init::Xavier));
        }
    };
    let norm = |specs: &mut Vec<_>, prefix: &str| {
        specs.push((format!("{prefix}.gain"), vec![d], Init::Ones));
        specs.push((format!("{prefix}.bias"), vec![d], Init::Zeros));
    };
    let ffn = |specs: &mut Vec<_>, prefix: &str| {
        specs.push((format!("{prefix}.w1"), vec![d, ff], Init::Xavier));
        specs.push((format!("{prefix}.b1"), vec![ff], Init::Zeros));
        specs.push((format!("{prefix}.w2"), vec![ff, d], Init::Xavier));
        specs.push((format!("{prefix}.b2"), vec![d], Init::Zeros));
    };
    for l in 0..cfg.num_layers {
        let p = format!("encoder.layers.{l}");
        attn(&mut specs, &format!("{p}.self_attn"));
        norm(&mut specs, &format!("{p}.norm1"));
        ffn(&mut specs, &format!("{p}.ffn"));
        norm(&mut specs, &format!("{p}.norm2"));
    }
    for l in 0..cfg.num_layers {
        let p = format!("decoder.layers.{l}");
        attn(&mut specs, &format!("{p}.self_attn"));
        norm(&mut specs, &format!("{p}.norm1"));
        attn(&mut specs, &format!("{p}.cross_attn"));
        norm(&mut specs, &format!("{p}.norm2"));
        ffn(&mut specs, &format!("{p}.ffn"));
        norm(&mut specs, &format!("{p}.norm3"));
    }
    specs.push(("output.weight".to_string(), vec![d, cfg.tgt_vocab_size], Init::Xavier));
    specs.push(("output.bias".to_string(), vec![cfg.tgt_vocab_size], Init::Zeros));
    specs
}

impl Layout {
    fn resolve(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let specs = parameter_specs(cfg);
        let mut problems = Vec::new();
        for (name, shape, _) in &specs {
            match store.get(name) {
                None => problems.push(format!("{name}: missing")),
                Some(t) if t.shape() != shape.as_slice() => {
                    problems.push(format!("{name}: expected {shape:?}, found {:?}", t.shape()))
                }
                _ => {}
            }
        }
        if store.len() != specs.len() {
            for name in store.names().filter(|n| !specs.iter().any(|(s, _, _)| s == n)) {
                problems.push(format!("{name}: unexpected"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Incompatible(problems.join("; ")));
        }
        let at = |name: String| store.position(&name).expect("checked above");
        let attn = |p: &str| AttnIdx {
            w_q: at(format!("{p}.w_q")),
            w_k: at(format!("{p}.w_k")),
            w_v: at(format!("{p}.w_v")),
            w_o: at(format!("{p}.w_o")),
        };
        let norm = |p: &str| NormIdx {
            gain: at(format!("{p}.gain")),
            bias: at(format!("{p}.bias")),
        };
        let ffn = |p: &str| FfnIdx {
            w1: at(format!("{p}.w1")),
            b1: at(format!("{p}.b1")),
            w2: at(format!("{p}.w2")),
            b2: at(format!("{p}.b2")),
        };
        let encoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("encoder.layers.{l}");
                EncoderLayer {
                    self_attn: attn(&format!("{p}.self_attn")),
                    norm1: norm(&format!("{p}.norm1")),
                    ffn: ffn(&format!("{p}.ffn")),
                    norm2: norm(&format!("{p}.norm2")),
                }
            })
            .collect();
        let decoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("decoder.layers.{l}");
                DecoderLayer {
                    self_attn: attn(&format!("{p}.self_attn")),
                    norm1: norm(&format!("{p}.norm1")),
                    cross_attn: attn(&format!("{p}.cross_attn")),
                    norm2: norm(&format!("{p}.norm2")),
                    ffn: ffn(&format!("{p}.ffn")),
                    norm3: norm(&format!("{p}.norm3")),
                }
            })
            .collect();
        Ok(Self {
            src_embedding: at("encoder.embedding".into()),
            tgt_embedding: at("decoder.embedding".into()),
            encoder,
            decoder,
            out_weight: at("output.weight".into()),
            out_bias: at("output.bias".into()),
        })
    }
}

/// Sinusoidal position table `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[len, d], |idx| {
        let (pos, i) = (idx / d, idx % d);
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Encoder output for one source sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory {
    states: Tensor,
    src: Vec<TokenId>,
}

impl Memory {
    /// Per-position representations, `[src_len, model_dim]`.
    pub fn states(&self) -> &Tensor {
        &self.states
    }

    pub fn src_len(&self) -> usize {
        self.src.len()
    }
}

/// Source/target pairs for one training step. Sources are fully framed
/// (optional language tag, tokens, EOS); targets are bare token sequences,
/// BOS/EOS framing is added here.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Seq2SeqBatch {
    pub src: Vec<Vec<TokenId>>,
    pub tgt: Vec<Vec<TokenId>>,
}

impl Seq2SeqBatch {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Number of predicted target tokens, including EOS.
    pub fn target_tokens(&self) -> usize {
        self.tgt.iter().map(|t| t.len() + 1).sum()
    }
}

/// Parameters of one model placed on a tape.
pub struct Bound<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, i: usize) -> Var<'t> {
        self.vars[i]
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Gradients in parameter-store order.
    pub fn collect_gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&v.shape()))
            })
            .collect()
    }
}

/// Padded `[batch, len]` id matrix, flattened row-major.
struct Padded {
    ids: Vec<usize>,
    batch: usize,
    len: usize,
}

impl Padded {
    fn new(seqs: &[Vec<usize>]) -> Self {
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD_ID as usize, len - s.len()));
        }
        Self {
            ids,
            batch: seqs.len(),
            len,
        }
    }

    fn is_pad(&self, b: usize, t: usize) -> bool {
        self.ids[b * self.len + t] == PAD_ID as usize
    }
}

/// Encoder-decoder transformer with post-norm residual blocks, sinusoidal
/// positions, separate source/target embeddings and an untied output layer.
#[derive(Clone, Debug)]
pub struct TransformerModel {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
    positions: Tensor,
}

impl PartialEq for TransformerModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl TransformerModel {
    /// Fresh model; the RNG fully determines every initial value.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let emb_std = (config.model_dim as f64).powf(-0.5);
        for (name, shape, init) in parameter_specs(&config) {
            let t = match init {
                Init::Embedding => tensor::normal(&shape, emb_std, rng),
                Init::Xavier => tensor::xavier_uniform(shape[0], shape[1], rng),
                Init::Ones => Tensor::full(&shape, 1.0),
                Init::Zeros => Tensor::zeros(&shape),
            };
            store.insert(name, t)?;
        }
        Self::from_params(config, store)
    }

    /// Wraps an existing parameter store; names and shapes must match the config.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        let positions = positional_encoding(config.max_seq_len, config.model_dim);
        Ok(Self {
            config,
            params,
            layout,
            positions,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Per-head projection matrices `(W_q, W_k, W_v)` of one attention block,
    /// sliced out of the fused `[d, N·h]` matrices, plus the full `W_o`.
    pub fn head_weights(&self, block: &str, head: usize) -> Result<(Tensor, Tensor, Tensor)> {
        let h = self.config.head_dim();
        let d = self.config.model_dim;
        if head >= self.config.num_heads {
            return Err(Error::Usage(format!("head {head} out of range")));
        }
        let slice = |w: &str| -> Result<Tensor> {
            let full = self
                .params
                .get(&format!("{block}.{w}"))
                .ok_or_else(|| Error::Usage(format!("no attention block {block}")))?;
            Ok(Tensor::from_fn(&[d, h], |i| full.get(&[i / h, head * h + i % h])))
        };
        Ok((slice("w_q")?, slice("w_k")?, slice("w_v")?))
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { tape, vars }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_seq_len {
            return Err(Error::Length {
                len,
                max: self.config.max_seq_len,
            });
        }
        Ok(())
    }

    fn embed<'t, R: Rng + ?Sized>(
        &self,
        b: &Bound<'t>,
        table: usize,
        ids: &Padded,
        rng: Option<&mut R>,
    ) -> Result<Var<'t>> {
        self.check_len(ids.len)?;
        let d = self.config.model_dim;
        let x = b.var(table).embedding(&ids.ids)?.scale((d as f64).sqrt());
        let pos = Tensor::from_fn(&[ids.batch * ids.len, d], |i| {
            let t = (i / d) % ids.len;
            self.positions.data()[t * d + i % d]
        });
        Ok(x.add(b.tape.constant(pos))?.dropout(self.config.dropout, rng))
    }

    fn mask<'t>(
        &self,
        tape: &'t Tape,
        batch: usize,
        tq: usize,
        tk: usize,
        blocked: impl Fn(usize, usize, usize) -> bool,
    ) -> Var<'t> {
        let heads = self.config.num_heads;
        let per = tq * tk;
        let t = Tensor::from_fn(&[batch * heads, tq, tk], |i| {
            let b = i / (heads * per);
            let r = i % per;
            if blocked(b, r / tk, r % tk) {
                MASK_VALUE
            } else {
                0.0
            }
        });
        tape.constant(t)
    }

    /// Fused multi-head attention over a batch; `xq` is `[B·tq, d]`, `xkv` `[B·tk, d]`.
    #[allow(clippy::too_many_arguments)]
    fn attention<'t>(
        &self,
        b: &Bound<'t>,
        idx: &AttnIdx,
        xq: Var<'t>,
        xkv: Var<'t>,
        batch: usize,
        tq: usize,
        tk: usize,
        mask: Var<'t>,
    ) -> Result<Var<'t>> {
        let heads = self.config.num_heads;
        let h = self.config.head_dim();
        let d = self.config.model_dim;
        let q = xq
            .matmul(b.var(idx.w_q))?
            .reshape(&[batch, tq, heads, h])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * heads, tq, h])?;
        let k = xkv
            .matmul(b.var(idx.w_k))?
            .reshape(&[batch, tk, heads, h])?
            .permute(&[0, 2, 3, 1])?
            .reshape(&[batch * heads, h, tk])?;
        let v = xkv
            .matmul(b.var(idx.w_v))?
            .reshape(&[batch, tk, heads, h])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * heads, tk, h])?;
        let weights = q
            .bmm(k)?
            .scale(1.0 / (h as f64).sqrt())
            .add(mask)?
            .softmax(2)?;
        let heads_out = weights
            .bmm(v)?
            .reshape(&[batch, heads, tq, h])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * tq, d])?;
        heads_out.matmul(b.var(idx.w_o))
    }

    fn feed_forward<'t>(&self, b: &Bound<'t>, idx: &FfnIdx, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(b.var(idx.w1))?
            .add_bias(b.var(idx.b1))?
            .relu()
            .matmul(b.var(idx.w2))?
            .add_bias(b.var(idx.b2))
    }

    fn residual_norm<'t, R: Rng + ?Sized>(
        &self,
        b: &Bound<'t>,
        norm: &NormIdx,
        x: Var<'t>,
        sub: Var<'t>,
        rng: Option<&mut R>,
    ) -> Result<Var<'t>> {
        x.add(sub.dropout(self.config.dropout, rng))?
            .layer_norm(b.var(norm.gain), b.var(norm.bias), LN_EPS)
    }

    fn encode_padded<'t, R: Rng + ?Sized>(
        &self,
        b: &Bound<'t>,
        src: &Padded,
        mut rng: Option<&mut R>,
    ) -> Result<Var<'t>> {
        let (batch, s) = (src.batch, src.len);
        let mut x = self.embed(b, self.layout.src_embedding, src, rng.as_deref_mut())?;
        let mask = self.mask(b.tape, batch, s, s, |bi, _, j| src.is_pad(bi, j));
        for layer in &self.layout.encoder {
            let a = self.attention(b, &layer.self_attn, x, x, batch, s, s, mask)?;
            x = self.residual_norm(b, &layer.norm1, x, a, rng.as_deref_mut())?;
            let f = self.feed_forward(b, &layer.ffn, x)?;
            x = self.residual_norm(b, &layer.norm2, x, f, rng.as_deref_mut())?;
        }
        Ok(x)
    }

    /// Logits `[B·T, V]` for decoder inputs `tgt_in` given encoder output.
    fn decode_padded<'t, R: Rng + ?Sized>(
        &self,
        b: &Bound<'t>,
        memory: Var<'t>,
        src: &Padded,
        tgt_in: &Padded,
        mut rng: Option<&mut R>,
    ) -> Result<Var<'t>> {
        let (batch, s, t) = (tgt_in.batch, src.len, tgt_in.len);
        let mut y = self.embed(b, self.layout.tgt_embedding, tgt_in, rng.as_deref_mut())?;
        let self_mask = self.mask(b.tape, batch, t, t, |bi, i, j| j > i || tgt_in.is_pad(bi, j));
        let cross_mask = self.mask(b.tape, batch, t, s, |bi, _, j| src.is_pad(bi, j));
        for layer in &self.layout.decoder {
            let a = self.attention(b, &layer.self_attn, y, y, batch, t, t, self_mask)?;
            y = self.residual_norm(b, &layer.norm1, y, a, rng.as_deref_mut())?;
            let c = self.attention(b, &layer.cross_attn, y, memory, batch, t, s, cross_mask)?;
            y = self.residual_norm(b, &layer.norm2, y, c, rng.as_deref_mut())?;
            let f = self.feed_forward(b, &layer.ffn, y)?;
            y = self.residual_norm(b, &layer.norm3, y, f, rng.as_deref_mut())?;
        }
        y.matmul(b.var(self.layout.out_weight))?
            .add_bias(b.var(self.layout.out_bias))
    }

    fn check_vocab(&self, ids: &[TokenId], vocab: usize, side: &str) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::Usage(format!(
                "{side} token id {bad} outside model vocabulary of {vocab}; tokenizer does not match model"
            )));
        }
        Ok(())
    }

    /// Token-level negative log-likelihood of a batch (teacher forcing).
    /// Dropout is active when `rng` is given.
    pub fn batch_loss<'t, R: Rng + ?Sized>(
        &self,
        b: &Bound<'t>,
        batch: &Seq2SeqBatch,
        reduction: Reduction,
        mut rng: Option<&mut R>,
    ) -> Result<Var<'t>> {
        if batch.is_empty() || batch.src.len() != batch.tgt.len() {
            return Err(Error::Usage(format!(
                "batch needs matching non-empty sides, got {} sources and {} targets",
                batch.src.len(),
                batch.tgt.len()
            )));
        }
        let widen = |s: &[TokenId]| s.iter().map(|&x| x as usize).collect::<Vec<_>>();
        let src = Padded::new(&batch.src.iter().map(|s| widen(s)).collect::<Vec<_>>());
        let tgt_in: Vec<Vec<usize>> = batch
            .tgt
            .iter()
            .map(|t| std::iter::once(BOS_ID as usize).chain(t.iter().map(|&x| x as usize)).collect())
            .collect();
        let tgt_out: Vec<Vec<usize>> = batch
            .tgt
            .iter()
            .map(|t| {
                t.iter()
                    .map(|&x| x as usize)
                    .chain(std::iter::once(crate::subword::EOS_ID as usize))
                    .collect()
            })
            .collect();
        let tgt_in = Padded::new(&tgt_in);
        let tgt_out = Padded::new(&tgt_out);
        let memory = self.encode_padded(b, &src, rng.as_deref_mut())?;
        let logits = self.decode_padded(b, memory, &src, &tgt_in, rng)?;
        logits.cross_entropy(&tgt_out.ids, PAD_ID as usize, reduction)
    }

    /// Evaluation-mode encoder pass over one source sequence.
    pub fn encode(&self, src: &[TokenId]) -> Result<Memory> {
        self.encode_with(src, None::<&mut rand_chacha::ChaCha8Rng>)
    }

    /// Encoder pass; dropout is applied when `rng` is given.
    pub fn encode_with<R: Rng + ?Sized>(&self, src: &[TokenId], rng: Option<&mut R>) -> Result<Memory> {
        if src.is_empty() {
            return Err(Error::Usage("empty source sequence".into()));
        }
        self.check_len(src.len())?;
        let tape = Tape::new();
        let b = self.bind(&tape, false);
        let padded = Padded::new(&[src.iter().map(|&x| x as usize).collect()]);
        let states = self.encode_padded(&b, &padded, rng)?.value().clone();
        Ok(Memory {
            states,
            src: src.to_vec(),
        })
    }

    /// Next-token log-probabilities for several equal-length prefixes
    /// sharing one encoder memory.
    pub fn next_log_probs(&self, memory: &Memory, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        let first = prefixes
            .first()
            .ok_or_else(|| Error::Usage("no prefixes to decode".into()))?;
        let t = first.len();
        if t == 0 {
            return Err(Error::Usage("decode_step requires a non-empty prefix".into()));
        }
        if prefixes.iter().any(|p| p.len() != t) {
            return Err(Error::Usage("prefixes must share a length".into()));
        }
        for p in prefixes {
            if p[0] != BOS_ID {
                return Err(Error::Usage("prefix must begin with BOS".into()));
            }
            self.check_vocab(p, self.config.tgt_vocab_size, "target")?;
        }
        let batch = prefixes.len();
        let tape = Tape::new();
        let b = self.bind(&tape, false);
        let s = memory.src.len();
        let d = self.config.model_dim;
        let tiled = Tensor::from_fn(&[batch * s, d], |i| memory.states.data()[i % (s * d)]);
        let src = Padded::new(&vec![memory.src.iter().map(|&x| x as usize).collect(); batch]);
        let tgt = Padded::new(
            &prefixes
                .iter()
                .map(|p| p.iter().map(|&x| x as usize).collect())
                .collect::<Vec<_>>(),
        );
        let logits = self.decode_padded(
            &b,
            tape.constant(tiled),
            &src,
            &tgt,
            None::<&mut rand_chacha::ChaCha8Rng>,
        )?;
        let logits = logits.value();
        let v = self.config.tgt_vocab_size;
        Ok((0..batch)
            .map(|i| {
                let row = logits.row(i * t + t - 1);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                debug_assert_eq!(row.len(), v);
                row.iter().map(|x| x - lse).collect()
            })
            .collect())
    }

    /// Distribution over the next target token, p(y_t | y_<t, x).
    pub fn decode_step(&self, memory: &Memory, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let log_probs = self.next_log_probs(memory, &[prefix.to_vec()])?;
        Ok(log_probs[0].iter().map(|l| l.exp()).collect())
    }

    /// Evaluation-mode logits `[T, V]` for a source and decoder input.
    pub fn logits(&self, src: &[TokenId], tgt_in: &[TokenId]) -> Result<Tensor> {
        self.check_vocab(src, self.config.src_vocab_size, "source")?;
        self.check_vocab(tgt_in, self.config.tgt_vocab_size, "target")?;
        if src.is_empty() || tgt_in.is_empty() {
            return Err(Error::Usage("empty sequence".into()));
        }
        let tape = Tape::new();
        let b = self.bind(&tape, false);
        let src = Padded::new(&[src.iter().map(|&x| x as usize).collect()]);
        let tgt = Padded::new(&[tgt_in.iter().map(|&x| x as usize).collect()]);
        let mut none = None::<&mut rand_chacha::ChaCha8Rng>;
        let memory = self.encode_padded(&b, &src, none.as_deref_mut())?;
        let logits = self.decode_padded(&b, memory, &src, &tgt, none)?;
        let value = logits.value().clone();
        Ok(value)
    }

    /// log p(y | x) = Σ_t log p(y_t | y_<t, x) for target tokens `tgt`
    /// (the caller decides whether EOS is part of `tgt`).
    pub fn sequence_logprob(&self, src: &[TokenId], tgt: &[TokenId]) -> Result<f64> {
        if tgt.is_empty() {
            return Ok(0.0);
        }
        self.check_vocab(tgt, self.config.tgt_vocab_size, "target")?;
        let tgt_in: Vec<TokenId> = std::iter::once(BOS_ID)
            .chain(tgt[..tgt.len() - 1].iter().copied())
            .collect();
        let logits = self.logits(src, &tgt_in)?;
        Ok(tgt
            .iter()
            .enumerate()
            .map(|(t, &y)| {
                let row = logits.row(t);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                row[y as usize] - lse
            })
            .sum())
    }
}

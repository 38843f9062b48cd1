//! The shared text encoder f_θ: token and learned position embeddings, a
//! stack of post-norm transformer layers with masked self-attention, and a
//! one-hidden-layer tanh MLP over the `[CLS]` hidden state.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Float, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::text::TokenBatch;

const LN_EPS: Float = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Output dimension d of the pooled representation.
    pub repr_dim: usize,
    pub dropout: f64,
    /// Standard deviation of the truncated-normal weight initialization.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 1000,
            max_len: 64,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            repr_dim: 64,
            dropout: 0.1,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("repr_dim", self.repr_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder.{name} must be positive")));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "encoder.embed_dim ({}) must be divisible by encoder.num_heads ({})",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "encoder.dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!(
                "encoder.init_std must be positive, got {}",
                self.init_std
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("encoder.max_len must be at least 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

#[derive(Clone, Debug)]
struct Layer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

/// Handles to one encoder's parameters inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    prefix: String,
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln_gain: ParamId,
    emb_ln_bias: ParamId,
    layers: Vec<Layer>,
    pool_w1: ParamId,
    pool_b1: ParamId,
    pool_w2: ParamId,
    pool_b2: ParamId,
}

/// N(0, σ²), resampled outside ±2σ.
fn truncated_normal(rng: &mut Rng, std: f64, shape: Vec<usize>) -> Tensor {
    let normal = Normal::new(0.0, std).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v as Float;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("sized")
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: Rng,
    std: f64,
    prefix: &'a str,
}

impl Init<'_> {
    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let t = truncated_normal(&mut self.rng, self.std, vec![rows, cols]);
        self.store.insert(format!("{}{name}", self.prefix), t, true)
    }

    fn fill(&mut self, name: &str, len: usize, value: Float) -> Result<ParamId> {
        self.store.insert(
            format!("{}{name}", self.prefix),
            Tensor::full(vec![len], value),
            true,
        )
    }
}

impl Encoder {
    /// Adds a freshly initialized encoder to `store`, with every parameter
    /// name prefixed by `prefix`. Initialization draws from a stream keyed on
    /// `(cfg.seed, prefix)`.
    pub fn init(cfg: &EncoderConfig, store: &mut ParamStore, prefix: &str) -> Result<Self> {
        cfg.validate()?;
        let (e, f, d) = (cfg.embed_dim, cfg.ffn_dim, cfg.repr_dim);
        let mut init = Init {
            store,
            rng: stream(cfg.seed, &format!("init/{prefix}")),
            std: cfg.init_std,
            prefix,
        };
        let tok_emb = init.matrix("embed.tokens", cfg.vocab_size, e)?;
        let pos_emb = init.matrix("embed.positions", cfg.max_len, e)?;
        let emb_ln_gain = init.fill("embed.norm.gain", e, 1.0)?;
        let emb_ln_bias = init.fill("embed.norm.bias", e, 0.0)?;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(Layer {
                wq: init.matrix(&p("attn.query.weight"), e, e)?,
                bq: init.fill(&p("attn.query.bias"), e, 0.0)?,
                wk: init.matrix(&p("attn.key.weight"), e, e)?,
                bk: init.fill(&p("attn.key.bias"), e, 0.0)?,
                wv: init.matrix(&p("attn.value.weight"), e, e)?,
                bv: init.fill(&p("attn.value.bias"), e, 0.0)?,
                wo: init.matrix(&p("attn.out.weight"), e, e)?,
                bo: init.fill(&p("attn.out.bias"), e, 0.0)?,
                ln1_gain: init.fill(&p("attn.norm.gain"), e, 1.0)?,
                ln1_bias: init.fill(&p("attn.norm.bias"), e, 0.0)?,
                w1: init.matrix(&p("ffn.in.weight"), e, f)?,
                b1: init.fill(&p("ffn.in.bias"), f, 0.0)?,
                w2: init.matrix(&p("ffn.out.weight"), f, e)?,
                b2: init.fill(&p("ffn.out.bias"), e, 0.0)?,
                ln2_gain: init.fill(&p("ffn.norm.gain"), e, 1.0)?,
                ln2_bias: init.fill(&p("ffn.norm.bias"), e, 0.0)?,
            });
        }
        let pool_w1 = init.matrix("pool.hidden.weight", e, e)?;
        let pool_b1 = init.fill("pool.hidden.bias", e, 0.0)?;
        let pool_w2 = init.matrix("pool.out.weight", e, d)?;
        let pool_b2 = init.fill("pool.out.bias", d, 0.0)?;
        Ok(Encoder {
            cfg: cfg.clone(),
            prefix: prefix.to_string(),
            tok_emb,
            pos_emb,
            emb_ln_gain,
            emb_ln_bias,
            layers,
            pool_w1,
            pool_b1,
            pool_w2,
            pool_b2,
        })
    }

    /// A standalone encoder with its own store.
    pub fn new(cfg: &EncoderConfig) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let enc = Self::init(cfg, &mut store, "")?;
        Ok((enc, store))
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// All parameter handles in creation order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.tok_emb,
            self.pos_emb,
            self.emb_ln_gain,
            self.emb_ln_bias,
        ];
        for l in &self.layers {
            ids.extend([
                l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln1_gain, l.ln1_bias, l.w1, l.b1,
                l.w2, l.b2, l.ln2_gain, l.ln2_bias,
            ]);
        }
        ids.extend(self.pooler_ids());
        ids
    }

    pub fn pooler_ids(&self) -> [ParamId; 4] {
        [self.pool_w1, self.pool_b1, self.pool_w2, self.pool_b2]
    }

    pub fn token_embedding_id(&self) -> ParamId {
        self.tok_emb
    }

    pub fn num_params(&self, store: &ParamStore) -> usize {
        self.param_ids()
            .iter()
            .map(|&id| store.value(id).numel())
            .sum()
    }

    fn check_batch(&self, batch: &TokenBatch) -> Result<()> {
        if batch.len > self.cfg.max_len {
            return Err(Error::Dimension {
                op: "encode",
                lhs: vec![batch.batch, batch.len],
                rhs: vec![self.cfg.max_len],
            });
        }
        if let Some(&bad) = batch.ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            return Err(Error::Index {
                what: "token id",
                index: bad,
                bound: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    /// Final-layer hidden states `[batch * len, embed_dim]` of the trimmed batch.
    /// `dropout` is `Some` in training mode.
    pub fn hidden(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &TokenBatch,
        mut dropout: Option<&mut Rng>,
    ) -> Result<(Var, usize)> {
        self.check_batch(batch)?;
        let batch = batch.trimmed();
        let (b, l, e, h) = (
            batch.batch,
            batch.len,
            self.cfg.embed_dim,
            self.cfg.num_heads,
        );
        let dh = e / h;
        let p = self.cfg.dropout as Float;
        let mut drop = |tape: &mut Tape, x: Var| -> Result<Var> {
            match dropout.as_deref_mut() {
                Some(rng) => tape.dropout(x, p, rng),
                None => Ok(x),
            }
        };

        let tok = tape.param(store, self.tok_emb);
        let pos = tape.param(store, self.pos_emb);
        let tok = tape.gather_rows(tok, &batch.ids)?;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
        let pos = tape.gather_rows(pos, &positions)?;
        let x = tape.add(tok, pos)?;
        let (g, bb) = (
            tape.param(store, self.emb_ln_gain),
            tape.param(store, self.emb_ln_bias),
        );
        let x = tape.layer_norm(x, g, bb, LN_EPS)?;
        let mut x = drop(tape, x)?;

        let split_heads = |tape: &mut Tape, t: Var| -> Result<Var> {
            let t = tape.reshape(t, vec![b, l, h, dh])?;
            let t = tape.permute(t, &[0, 2, 1, 3])?;
            tape.reshape(t, vec![b * h, l, dh])
        };
        let linear = |tape: &mut Tape, x: Var, w: ParamId, bias: ParamId| -> Result<Var> {
            let (w, bias) = (tape.param(store, w), tape.param(store, bias));
            let y = tape.matmul(x, w)?;
            tape.add_row(y, bias)
        };

        for layer in &self.layers {
            let q = linear(tape, x, layer.wq, layer.bq)?;
            let k = linear(tape, x, layer.wk, layer.bk)?;
            let v = linear(tape, x, layer.wv, layer.bv)?;
            let (q, k, v) = (
                split_heads(tape, q)?,
                split_heads(tape, k)?,
                split_heads(tape, v)?,
            );
            let scores = tape.bmm(q, k, true)?;
            let scores = tape.scale(scores, 1.0 / (dh as Float).sqrt());
            let attn = tape.masked_softmax(scores, &batch.mask, h)?;
            let ctx = tape.bmm(attn, v, false)?;
            let ctx = tape.reshape(ctx, vec![b, h, l, dh])?;
            let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = tape.reshape(ctx, vec![b * l, e])?;
            let out = linear(tape, ctx, layer.wo, layer.bo)?;
            let out = drop(tape, out)?;
            let res = tape.add(x, out)?;
            let (g, bb) = (
                tape.param(store, layer.ln1_gain),
                tape.param(store, layer.ln1_bias),
            );
            x = tape.layer_norm(res, g, bb, LN_EPS)?;

            let f = linear(tape, x, layer.w1, layer.b1)?;
            let f = tape.gelu(f);
            let f = linear(tape, f, layer.w2, layer.b2)?;
            let f = drop(tape, f)?;
            let res = tape.add(x, f)?;
            let (g, bb) = (
                tape.param(store, layer.ln2_gain),
                tape.param(store, layer.ln2_bias),
            );
            x = tape.layer_norm(res, g, bb, LN_EPS)?;
        }
        Ok((x, l))
    }

    /// Raw `[CLS]` hidden states, `[batch, embed_dim]`.
    pub fn cls(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &TokenBatch,
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let (hidden, len) = self.hidden(tape, store, batch, dropout)?;
        let rows: Vec<usize> = (0..batch.batch).map(|i| i * len).collect();
        tape.gather_rows(hidden, &rows)
    }

    /// f_θ: pooled representations `[batch, repr_dim]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &TokenBatch,
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let cls = self.cls(tape, store, batch, dropout)?;
        let (w1, b1) = (
            tape.param(store, self.pool_w1),
            tape.param(store, self.pool_b1),
        );
        let hdn = tape.matmul(cls, w1)?;
        let hdn = tape.add_row(hdn, b1)?;
        let hdn = tape.tanh(hdn);
        let (w2, b2) = (
            tape.param(store, self.pool_w2),
            tape.param(store, self.pool_b2),
        );
        let out = tape.matmul(hdn, w2)?;
        tape.add_row(out, b2)
    }

    /// Eval-mode encoding: a pure function of (θ, ids, mask).
    pub fn encode(&self, store: &ParamStore, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, batch, None)?;
        Ok(tape.value(out).clone())
    }

    /// Copies every parameter value of `self` onto the matching parameter of `other`.
    pub fn copy_values_to(&self, other: &Encoder, store: &mut ParamStore) -> Result<()> {
        let src = store.clone();
        self.copy_values_into(&src, other, store)
    }

    /// Like [`Encoder::copy_values_to`], with `other` living in a different store.
    pub fn copy_values_into(
        &self,
        store: &ParamStore,
        other: &Encoder,
        other_store: &mut ParamStore,
    ) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::Config(
                "cannot copy between encoders with different configs".into(),
            ));
        }
        for (src, dst) in self.param_ids().into_iter().zip(other.param_ids()) {
            *other_store.value_mut(dst) = store.value(src).clone();
        }
        Ok(())
    }
}

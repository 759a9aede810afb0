use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::context::{segment, TokenizedContext};
use crate::error::{DstError, Result};
use crate::nn::{ParamId, ParamStore, Real, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    /// Fixed sinusoidal position vectors instead of learned ones.
    #[serde(default)]
    pub sinusoidal_positions: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            layers: 2,
            heads: 2,
            ffn_dim: 128,
            max_len: 512,
            sinusoidal_positions: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(DstError::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.max_len < 2 {
            return Err(DstError::Config("max_len must be >= 2".into()));
        }
        Ok(())
    }
}

/// Classification vector plus one vector per content token.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoding<F> {
    pub cls_vector: Array1<F>,
    pub token_vectors: Array2<F>,
}

/// Encoder output as tape variables: `cls` is `1 x n`, `tokens` is
/// `(len - 1) x n` (the classification row removed).
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub cls: Var,
    pub tokens: Var,
}

/// Anything that turns a tokenized context into per-token vectors. The
/// tracker only depends on this contract, so a different backbone can be
/// dropped in.
pub trait ContextEncoder<F: Real> {
    fn dim(&self) -> usize;

    fn encode_on_tape(&self, tape: &mut Tape<'_, F>, ctx: &TokenizedContext)
        -> Result<EncodedVars>;
}

#[derive(Debug, Clone)]
struct BlockIds {
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

/// Post-norm bidirectional self-attention stack over (frozen) word
/// embeddings, learned positions and segment embeddings.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    config: EncoderConfig,
    vocab_size: usize,
    embedding: ParamId,
    positions: ParamId,
    segments: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
    blocks: Vec<BlockIds>,
}

fn normal<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<F> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || F::of(dist.sample(rng)))
}

/// Position table with `sin`/`cos` pairs at geometrically spaced frequencies.
fn sinusoid<F: Real>(len: usize, n: usize) -> Array2<F> {
    Array2::from_shape_fn((len, n), |(pos, i)| {
        let freq = 10000f64.powf(-((i / 2 * 2) as f64) / n as f64);
        let angle = pos as f64 * freq;
        F::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

impl TransformerEncoder {
    /// Register fresh parameters. The word embedding table is drawn from a
    /// unit normal and optionally frozen.
    pub fn init<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        config: EncoderConfig,
        vocab_size: usize,
        freeze_embeddings: bool,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.dim;
        let embedding = store.add("embedding", normal(rng, vocab_size, n, 1.0), freeze_embeddings);
        let positions = if config.sinusoidal_positions {
            store.add("encoder.positions", sinusoid(config.max_len, n), true)
        } else {
            store.add("encoder.positions", normal(rng, config.max_len, n, 0.5), false)
        };
        let segments = store.add("encoder.segments", normal(rng, segment::COUNT, n, 0.5), false);
        let ln_gain = store.add("encoder.ln.gain", Array2::ones((1, n)), false);
        let ln_bias = store.add("encoder.ln.bias", Array2::zeros((1, n)), false);
        let proj = (1.0 / n as f64).sqrt();
        let ffn = (1.0 / config.ffn_dim as f64).sqrt();
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("encoder.block{l}.{s}");
            blocks.push(BlockIds {
                wq: store.add(p("wq"), normal(rng, n, n, proj), false),
                bq: store.add(p("bq"), Array2::zeros((1, n)), false),
                wk: store.add(p("wk"), normal(rng, n, n, proj), false),
                bk: store.add(p("bk"), Array2::zeros((1, n)), false),
                wv: store.add(p("wv"), normal(rng, n, n, proj), false),
                bv: store.add(p("bv"), Array2::zeros((1, n)), false),
                wo: store.add(p("wo"), normal(rng, n, n, proj), false),
                bo: store.add(p("bo"), Array2::zeros((1, n)), false),
                ln1_gain: store.add(p("ln1.gain"), Array2::ones((1, n)), false),
                ln1_bias: store.add(p("ln1.bias"), Array2::zeros((1, n)), false),
                w1: store.add(p("w1"), normal(rng, n, config.ffn_dim, proj), false),
                b1: store.add(p("b1"), Array2::zeros((1, config.ffn_dim)), false),
                w2: store.add(p("w2"), normal(rng, config.ffn_dim, n, ffn), false),
                b2: store.add(p("b2"), Array2::zeros((1, n)), false),
                ln2_gain: store.add(p("ln2.gain"), Array2::ones((1, n)), false),
                ln2_bias: store.add(p("ln2.bias"), Array2::zeros((1, n)), false),
            });
        }
        Ok(TransformerEncoder {
            config,
            vocab_size,
            embedding,
            positions,
            segments,
            ln_gain,
            ln_bias,
            blocks,
        })
    }

    /// Re-attach to parameters already present in `store` (checkpoint load).
    pub fn attach<F: Real>(store: &ParamStore<F>, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| DstError::Checkpoint(format!("missing tensor '{name}'")))
        };
        let embedding = find("embedding")?;
        let vocab_size = store.get(embedding).nrows();
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| find(&format!("encoder.block{l}.{s}"));
            blocks.push(BlockIds {
                wq: p("wq")?,
                bq: p("bq")?,
                wk: p("wk")?,
                bk: p("bk")?,
                wv: p("wv")?,
                bv: p("bv")?,
                wo: p("wo")?,
                bo: p("bo")?,
                ln1_gain: p("ln1.gain")?,
                ln1_bias: p("ln1.bias")?,
                w1: p("w1")?,
                b1: p("b1")?,
                w2: p("w2")?,
                b2: p("b2")?,
                ln2_gain: p("ln2.gain")?,
                ln2_bias: p("ln2.bias")?,
            });
        }
        Ok(TransformerEncoder {
            embedding,
            vocab_size,
            positions: find("encoder.positions")?,
            segments: find("encoder.segments")?,
            ln_gain: find("encoder.ln.gain")?,
            ln_bias: find("encoder.ln.bias")?,
            blocks,
            config,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    fn attention<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var, b: &BlockIds) -> Var {
        let n = self.config.dim;
        let heads = self.config.heads;
        let d = n / heads;
        let project = |tape: &mut Tape<'_, F>, w: ParamId, bias: ParamId| {
            let wv = tape.param(w);
            let bv = tape.param(bias);
            let h = tape.matmul(x, wv);
            tape.add_row(h, bv)
        };
        let q = project(tape, b.wq, b.bq);
        let k = project(tape, b.wk, b.bk);
        let v = project(tape, b.wv, b.bv);
        let scale = F::of(1.0 / (d as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (tape.cols(q, h * d, d), tape.cols(k, h * d, d), tape.cols(v, h * d, d))
            };
            let scores = tape.matmul_bt(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, None);
            outs.push(tape.matmul(attn, vh));
        }
        let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let wo = tape.param(b.wo);
        let bo = tape.param(b.bo);
        let o = tape.matmul(joined, wo);
        tape.add_row(o, bo)
    }

    fn block<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var, b: &BlockIds) -> Var {
        let a = self.attention(tape, x, b);
        let r = tape.add(x, a);
        let (g1, b1n) = (tape.param(b.ln1_gain), tape.param(b.ln1_bias));
        let x1 = tape.layer_norm(r, g1, b1n);
        let (w1, b1) = (tape.param(b.w1), tape.param(b.b1));
        let h = tape.matmul(x1, w1);
        let h = tape.add_row(h, b1);
        let h = tape.gelu(h);
        let (w2, b2) = (tape.param(b.w2), tape.param(b.b2));
        let f = tape.matmul(h, w2);
        let f = tape.add_row(f, b2);
        let r2 = tape.add(x1, f);
        let (g2, b2n) = (tape.param(b.ln2_gain), tape.param(b.ln2_bias));
        tape.layer_norm(r2, g2, b2n)
    }

    /// Forward pass without gradient bookkeeping beyond the tape itself.
    pub fn encode<F: Real>(
        &self,
        ctx: &TokenizedContext,
        params: &ParamStore<F>,
    ) -> Result<ContextEncoding<F>> {
        let mut tape = Tape::new(params);
        let out = self.encode_on_tape(&mut tape, ctx)?;
        Ok(ContextEncoding {
            cls_vector: tape.value(out.cls).row(0).to_owned(),
            token_vectors: tape.value(out.tokens).clone(),
        })
    }
}

impl<F: Real> ContextEncoder<F> for TransformerEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn encode_on_tape(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TokenizedContext,
    ) -> Result<EncodedVars> {
        let len = ctx.len();
        if len < 2 {
            return Err(DstError::EmptyContext);
        }
        if len > self.config.max_len {
            return Err(DstError::Config(format!(
                "context of {len} tokens exceeds max_len {}",
                self.config.max_len
            )));
        }
        if let Some(&bad) = ctx.ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(DstError::Config(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        let emb = tape.param(self.embedding);
        let words = tape.gather(emb, &ctx.ids);
        let pos_table = tape.param(self.positions);
        let pos = tape.rows(pos_table, 0, len);
        let seg_table = tape.param(self.segments);
        let segs = tape.gather(seg_table, &ctx.segments);
        let x = tape.add(words, pos);
        let x = tape.add(x, segs);
        let (g, b) = (tape.param(self.ln_gain), tape.param(self.ln_bias));
        let mut x = tape.layer_norm(x, g, b);
        for block in &self.blocks {
            x = self.block(tape, x, block);
        }
        let cls = tape.rows(x, 0, 1);
        let tokens = tape.rows(x, 1, len - 1);
        Ok(EncodedVars { cls, tokens })
    }
}

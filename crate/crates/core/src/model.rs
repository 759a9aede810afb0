//! The trainable tracker model: context encoder, fused pool representation
//! and the per-slot heads, recorded on an autodiff tape.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::labels::uses_categorical_head;
use crate::corpus::text::{detokenize, slot_name_tokens, tokenize};
use crate::corpus::{Schema, SlotValue};
use crate::encoder::{ContextEncoder, EncoderConfig, TokenizedContext, TransformerEncoder, Vocab};
use crate::error::{DstError, Result};
use crate::heads::{decode_span, HitType};
use crate::msp::{PoolCandidate, PoolMode, DEFAULT_POOL_SIZE};
use crate::nn::{argmax, masked_softmax, ParamId, ParamStore, Real, Tape, Var};
use crate::tracker::{SlotDecision, TurnInput, TurnPredictor, UpdateStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub strategy: UpdateStrategy,
    pub pool_size: usize,
    pub pool_mode: PoolMode,
    pub categorical_heads: bool,
    /// Exclude padding from the fusion softmax (padding is always excluded
    /// from mention selection).
    pub fusion_mask: bool,
    /// Represent a pool entry by the mean embedding of its source slot name
    /// and value tokens instead of the value tokens alone.
    #[serde(default)]
    pub slot_aware_entries: bool,
    pub freeze_embeddings: bool,
    /// Standard deviation of the head weight initialization.
    pub head_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            strategy: UpdateStrategy::Msp,
            pool_size: DEFAULT_POOL_SIZE,
            pool_mode: PoolMode::Full,
            categorical_heads: true,
            fusion_mask: true,
            slot_aware_entries: false,
            freeze_embeddings: true,
            head_init_std: 0.1,
        }
    }
}

/// Parameter handles of one slot's heads.
#[derive(Debug, Clone)]
pub struct SlotHeads {
    pub w_fused: Option<ParamId>,
    pub w_type: ParamId,
    pub b_type: ParamId,
    pub w_mention: Option<ParamId>,
    /// `|V| x n` for categorical slots, `2 x n` (start, end) for span slots.
    pub w_hit: ParamId,
    pub b_hit: ParamId,
    pub categorical: bool,
}

/// Tape variables produced for one slot at one turn.
#[derive(Debug, Clone)]
pub struct SlotVars {
    /// `1 x C` type logits.
    pub type_logits: Var,
    /// `1 x K` selection scores and the pool mask.
    pub mention: Option<(Var, Vec<bool>)>,
    /// `1 x |V|` categorical logits, or `2 x L` start/end logits.
    pub hit_logits: Var,
}

pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub schema: Schema,
    pub vocab: Vocab,
    pub store: ParamStore<F>,
    encoder: TransformerEncoder,
    heads: Vec<SlotHeads>,
    slot_tokens: Vec<Vec<usize>>,
}

fn normal<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<F> {
    if std == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || F::of(dist.sample(rng)))
}

fn head_name(slot: &str, part: &str) -> String {
    format!("slot.{slot}.{part}")
}

impl<F: Real> Model<F> {
    pub fn init<R: Rng>(config: ModelConfig, schema: Schema, vocab: Vocab, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = TransformerEncoder::init(
            &mut store,
            config.encoder.clone(),
            vocab.len(),
            config.freeze_embeddings,
            rng,
        )?;
        let n = config.encoder.dim;
        let std = config.head_init_std;
        let classes = config.strategy.classes().len();
        let mut heads = Vec::with_capacity(schema.len());
        for (id, slot) in schema.slots().iter().enumerate() {
            let name = &slot.name;
            let categorical = uses_categorical_head(&schema, id, config.categorical_heads);
            let pooled = config.strategy.uses_pool();
            let w_fused = pooled.then(|| store.add(head_name(name, "fused"), normal(rng, n, n, std), false));
            let w_type = store.add(head_name(name, "type.w"), normal(rng, classes, n, std), false);
            let b_type = store.add(head_name(name, "type.b"), Array2::zeros((1, classes)), false);
            let w_mention =
                pooled.then(|| store.add(head_name(name, "mention"), normal(rng, n, n, std), false));
            let rows = if categorical { slot.ontology.len() } else { 2 };
            let w_hit = store.add(head_name(name, "hit.w"), normal(rng, rows, n, std), false);
            let b_hit = store.add(head_name(name, "hit.b"), Array2::zeros((1, rows)), false);
            heads.push(SlotHeads {
                w_fused,
                w_type,
                b_type,
                w_mention,
                w_hit,
                b_hit,
                categorical,
            });
        }
        Self::assemble(config, schema, vocab, store, encoder, heads)
    }

    /// Rebuild a model around an existing parameter store.
    pub fn from_store(config: ModelConfig, schema: Schema, vocab: Vocab, store: ParamStore<F>) -> Result<Self> {
        let encoder = TransformerEncoder::attach(&store, config.encoder.clone())?;
        let find = |name: String| {
            store
                .find(&name)
                .ok_or_else(|| DstError::Checkpoint(format!("missing tensor '{name}'")))
        };
        let pooled = config.strategy.uses_pool();
        let mut heads = Vec::with_capacity(schema.len());
        for (id, slot) in schema.slots().iter().enumerate() {
            let name = &slot.name;
            heads.push(SlotHeads {
                w_fused: if pooled { Some(find(head_name(name, "fused"))?) } else { None },
                w_type: find(head_name(name, "type.w"))?,
                b_type: find(head_name(name, "type.b"))?,
                w_mention: if pooled { Some(find(head_name(name, "mention"))?) } else { None },
                w_hit: find(head_name(name, "hit.w"))?,
                b_hit: find(head_name(name, "hit.b"))?,
                categorical: uses_categorical_head(&schema, id, config.categorical_heads),
            });
        }
        Self::assemble(config, schema, vocab, store, encoder, heads)
    }

    fn assemble(
        config: ModelConfig,
        schema: Schema,
        vocab: Vocab,
        store: ParamStore<F>,
        encoder: TransformerEncoder,
        heads: Vec<SlotHeads>,
    ) -> Result<Self> {
        let n = config.encoder.dim;
        let classes = config.strategy.classes().len();
        for (h, slot) in heads.iter().zip(schema.slots()) {
            let rows = if h.categorical { slot.ontology.len() } else { 2 };
            let expect = [(h.w_type, classes, n), (h.b_type, 1, classes), (h.w_hit, rows, n), (h.b_hit, 1, rows)];
            for (id, r, c) in expect {
                let shape = store.get(id).dim();
                if shape != (r, c) {
                    return Err(DstError::Checkpoint(format!(
                        "tensor '{}' has shape {shape:?}, expected ({r}, {c})",
                        store.entry(id).name
                    )));
                }
            }
        }
        let slot_tokens = schema
            .slots()
            .iter()
            .map(|s| slot_name_tokens(&s.name).iter().map(|t| vocab.id(t)).collect())
            .collect();
        Ok(Model {
            config,
            schema,
            vocab,
            store,
            encoder,
            heads,
            slot_tokens,
        })
    }

    pub fn strategy(&self) -> UpdateStrategy {
        self.config.strategy
    }

    pub fn heads(&self) -> &[SlotHeads] {
        &self.heads
    }

    pub fn encoder(&self) -> &TransformerEncoder {
        &self.encoder
    }

    /// Set every head weight and bias to zero.
    pub fn zero_heads(&mut self) {
        for h in self.heads.clone() {
            let ids = [Some(h.w_type), Some(h.b_type), Some(h.w_hit), Some(h.b_hit), h.w_fused, h.w_mention];
            for id in ids.into_iter().flatten() {
                self.store.get_mut(id).fill(F::zero());
            }
        }
    }

    /// Same model with parameters converted to another element type.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            schema: self.schema.clone(),
            vocab: self.vocab.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            heads: self.heads.clone(),
            slot_tokens: self.slot_tokens.clone(),
        }
    }

    /// Mean word embeddings of several token lists, as rows of one matrix.
    fn mean_rows(&self, tape: &mut Tape<'_, F>, lists: &[&[usize]], rows: usize) -> Var {
        let n = self.config.encoder.dim;
        let total: usize = lists.iter().map(|l| l.len()).sum();
        if total == 0 {
            return tape.constant(Array2::zeros((rows, n)));
        }
        let mut avg = Array2::zeros((rows, total));
        let mut ids = Vec::with_capacity(total);
        for (i, list) in lists.iter().enumerate() {
            let w = F::of(1.0 / list.len() as f64);
            for &id in list.iter() {
                avg[[i, ids.len()]] = w;
                ids.push(id);
            }
        }
        let emb = tape.param(self.encoder.embedding());
        let words = tape.gather(emb, &ids);
        let avg = tape.constant(avg);
        tape.matmul(avg, words)
    }

    fn value_ids(&self, value: &str) -> Vec<usize> {
        tokenize(value).iter().map(|t| self.vocab.id(t)).collect()
    }

    /// Record the forward pass of one turn. `pools` holds the pool values
    /// per slot (ignored by pool-less strategies).
    pub fn forward_turn(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TokenizedContext,
        pools: &[Vec<PoolCandidate>],
    ) -> Result<Vec<SlotVars>> {
        let enc = self.encoder.encode_on_tape(tape, ctx)?;
        let k = self.config.pool_size;
        let mut out = Vec::with_capacity(self.heads.len());
        for (s, h) in self.heads.iter().enumerate() {
            let (x, mention) = match (h.w_fused, h.w_mention) {
                (Some(w_fused), Some(w_mention)) => {
                    let cands = pools.get(s).map(Vec::as_slice).unwrap_or(&[]);
                    let cands = &cands[..cands.len().min(k)];
                    let ids: Vec<Vec<usize>> = cands
                        .iter()
                        .map(|c| {
                            let value = self.value_ids(&c.value);
                            if self.config.slot_aware_entries {
                                [self.slot_tokens[c.source_slot].as_slice(), &value].concat()
                            } else {
                                value
                            }
                        })
                        .collect();
                    let lists: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
                    let pool = self.mean_rows(tape, &lists, k);
                    let mask: Vec<bool> = (0..k).map(|i| i < cands.len()).collect();
                    let r_slot = self.mean_rows(tape, &[&self.slot_tokens[s]], 1);
                    let q = tape.add(r_slot, enc.cls);
                    let wf = tape.param(w_fused);
                    let q = tape.matmul(q, wf);
                    let scores = tape.matmul_bt(q, pool);
                    let fused = if cands.is_empty() && self.config.fusion_mask {
                        tape.constant(Array2::zeros((1, self.config.encoder.dim)))
                    } else {
                        let m = self.config.fusion_mask.then(|| mask.clone());
                        let attn = tape.softmax(scores, m);
                        tape.matmul(attn, pool)
                    };
                    let x = tape.add(fused, enc.cls);
                    let wm = tape.param(w_mention);
                    let qm = tape.matmul(enc.cls, wm);
                    let mscores = tape.matmul_bt(qm, pool);
                    (x, Some((mscores, mask)))
                }
                _ => (enc.cls, None),
            };
            let (wt, bt) = (tape.param(h.w_type), tape.param(h.b_type));
            let type_logits = tape.matmul_bt(x, wt);
            let type_logits = tape.add_row(type_logits, bt);
            let (wh, bh) = (tape.param(h.w_hit), tape.param(h.b_hit));
            let hit_logits = if h.categorical {
                let l = tape.matmul_bt(x, wh);
                tape.add_row(l, bh)
            } else {
                let l = tape.matmul_bt(enc.tokens, wh);
                let l = tape.add_row(l, bh);
                tape.transpose(l)
            };
            out.push(SlotVars {
                type_logits,
                mention,
                hit_logits,
            });
        }
        Ok(out)
    }

    /// Decode tape outputs into per-slot decisions.
    pub fn decide(
        &self,
        tape: &Tape<'_, F>,
        vars: &[SlotVars],
        ctx: &TokenizedContext,
    ) -> Vec<SlotDecision> {
        let classes = self.config.strategy.classes();
        vars.iter()
            .enumerate()
            .map(|(s, v)| {
                let logits = tape.value(v.type_logits).row(0).to_vec();
                let c = argmax(&masked_softmax(&logits, None), None).unwrap_or(0);
                let mut d = SlotDecision::of_type(classes[c]);
                match d.hit_type {
                    HitType::Mentioned => {
                        if let Some((m, mask)) = &v.mention {
                            let scores = tape.value(*m).row(0).to_vec();
                            d.mention_index = argmax(&scores, Some(mask));
                        }
                    }
                    HitType::Hit => {
                        let hv = tape.value(v.hit_logits);
                        if self.heads[s].categorical {
                            let i = argmax(&hv.row(0).to_vec(), None).unwrap_or(0);
                            d.value = SlotValue::Text(self.schema.slot(s).ontology[i].clone());
                        } else {
                            let span = decode_span(&hv.row(0).to_vec(), &hv.row(1).to_vec()).span;
                            if let Some((a, b)) = span {
                                d.value = SlotValue::Text(detokenize(&ctx.content()[a..=b]));
                            }
                            d.span = span;
                        }
                    }
                    _ => {}
                }
                d
            })
            .collect()
    }
}

impl<F: Real> TurnPredictor for Model<F> {
    fn strategy(&self) -> Option<UpdateStrategy> {
        Some(self.config.strategy)
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn predict_turn(&self, input: &TurnInput<'_>) -> Result<Vec<SlotDecision>> {
        let mut tape = Tape::new(&self.store);
        let vars = self.forward_turn(&mut tape, input.context, input.pools)?;
        Ok(self.decide(&tape, &vars, input.context))
    }
}

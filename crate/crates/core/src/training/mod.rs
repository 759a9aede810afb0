//! Joint loss, optimizer, schedule and the training loop.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod schedule;

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::labels::{derive_labels, label_slot, LabelConfig, TurnLabels};
use crate::corpus::{find_span_any, Dialogue, Schema, SlotValue};
use crate::encoder::Vocab;
use crate::error::{DstError, Result};
use crate::eval::evaluate;
use crate::heads::HitType;
use crate::model::{Model, ModelConfig};
use crate::nn::{Gradients, ParamStore, Real, Tape};
use crate::tracker::{NoiseConfig, TrackerConfig, UpdateStrategy};

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, Tensor, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use loss::{
    joint_loss, loss_hit, loss_mention, loss_type, HitTarget, LossParts, LossTerms, LossValue, LossWeights,
};
pub use schedule::lr_at;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Fraction of all steps spent warming up.
    pub warmup: f64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Probability of swapping a self pool entry for a wrong value during
    /// training (pool strategy only).
    pub pool_noise: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            learning_rate: 1e-3,
            epochs: 20,
            warmup: 0.1,
            patience: 3,
            seed: 0,
            pool_noise: 0.0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning settings for a large pretrained encoder.
    pub fn pretrained() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if [w.alpha, w.beta, w.gamma].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DstError::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DstError::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(DstError::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(DstError::Config("warmup must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.pool_noise) {
            return Err(DstError::Config("pool_noise must be in [0, 1]".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(DstError::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_jga: f64,
    pub lr: f64,
}

pub fn write_history(records: &[HistoryRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("history serializes");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| DstError::io(path, e))?;
    f.write_all(&out).map_err(|e| DstError::io(path, e))
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: Vec<HistoryRecord>,
    pub best_epoch: usize,
    pub best_dev_jga: f64,
}

pub fn label_config(config: &ModelConfig) -> LabelConfig {
    LabelConfig {
        strategy: config.strategy,
        max_len: config.encoder.max_len,
        pool_size: config.pool_size,
        pool_mode: config.pool_mode,
        categorical_heads: config.categorical_heads,
    }
}

pub fn tracker_config(config: &ModelConfig) -> TrackerConfig {
    TrackerConfig {
        strategy: config.strategy,
        max_len: config.encoder.max_len,
        pool_size: config.pool_size,
        pool_mode: config.pool_mode,
        noise: None,
    }
}

/// Joint loss of one teacher-forced dialogue, evaluated with `store` (which
/// must share the layout of `model.store`), and optionally its gradients.
pub fn dialogue_objective<F: Real>(
    model: &Model<F>,
    store: &ParamStore<F>,
    turns: &[TurnLabels],
    weights: &LossWeights,
    with_grad: bool,
) -> Result<(LossParts, Option<Gradients<F>>)> {
    let mut tape = Tape::new(store);
    let mut terms = LossTerms::default();
    for t in turns {
        let vars = model.forward_turn(&mut tape, &t.context, &t.pools)?;
        terms.add_turn(&mut tape, model.config.strategy, &vars, &t.examples)?;
    }
    let (root, parts) = terms.combine(&mut tape, weights);
    if !parts.joint.is_finite() {
        return Err(DstError::NonFinite {
            what: "loss".into(),
            detail: format!("{parts:?}"),
        });
    }
    Ok((parts, with_grad.then(|| tape.backward(root))))
}

/// Swap self pool entries that the gold value would be copied from for a
/// wrong value with probability `q`, relabeling the slot. Only applied where
/// the gold value is visible in the context, so the relabeled example asks
/// the model to prefer the context over a stale pool value.
pub fn corrupt_pools<R: Rng>(
    turns: &[TurnLabels],
    dialogue: &Dialogue,
    schema: &Schema,
    inventory: &[Vec<String>],
    q: f64,
    categorical_heads: bool,
    rng: &mut R,
) -> Vec<TurnLabels> {
    let mut out = turns.to_vec();
    for tl in &mut out {
        let gold = &dialogue.turns[tl.turn].gold_state;
        let prev = dialogue.gold_before(tl.turn, schema.len());
        for s in 0..schema.len() {
            let ex = &tl.examples[s];
            let eligible = ex.hit_type == HitType::Mentioned
                && ex.mention_index == Some(0)
                && tl.pools[s].first().is_some_and(|c| c.source_slot == s);
            if !eligible || !rng.gen_bool(q) {
                continue;
            }
            let right = gold.get(s);
            let Some(text) = right.text() else { continue };
            if find_span_any(&schema.surface_forms(text), tl.context.content()).is_none() {
                continue;
            }
            let wrong: Vec<&String> = inventory[s]
                .iter()
                .filter(|v| !SlotValue::Text((*v).clone()).matches(right, schema))
                .collect();
            let Some(w) = wrong.choose(rng) else { continue };
            let mut pool = tl.pools[s].clone();
            pool[0].value = (*w).clone();
            let relabeled = label_slot(
                UpdateStrategy::Msp,
                schema,
                tl.turn,
                s,
                right,
                prev.get(s),
                &pool,
                tl.context.content(),
                categorical_heads,
            );
            if !relabeled.unmatched {
                tl.pools[s] = pool;
                tl.examples[s] = relabeled;
            }
        }
    }
    out
}

/// Train a tracker on `train`, selecting the epoch with the best dev joint
/// goal accuracy.
pub fn train(
    config: &TrainConfig,
    model_config: ModelConfig,
    schema: &Schema,
    train_set: &[Dialogue],
    dev_set: &[Dialogue],
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.encoder.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(DstError::Config("train and dev splits must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = Vocab::build(schema, train_set);
    let mut model = Model::<f32>::init(model_config, schema.clone(), vocab, &mut rng)?;
    let labels_cfg = label_config(&model.config);
    let labels: Vec<Vec<TurnLabels>> = train_set
        .iter()
        .map(|d| derive_labels(d, schema, &model.vocab, &labels_cfg))
        .collect::<Result<_>>()?;
    let augment = model.config.strategy == UpdateStrategy::Msp && config.pool_noise > 0.0;
    let inventory = augment.then(|| NoiseConfig::from_corpus(schema, train_set, 0, 0).inventory);
    let tracker = tracker_config(&model.config);

    let total = config.epochs * train_set.len();
    let mut adam = Adam::<f32>::new(model.store.len());
    let mut step = 0usize;
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for &i in &order {
            let noisy;
            let turns = match &inventory {
                Some(inv) => {
                    noisy = corrupt_pools(
                        &labels[i],
                        &train_set[i],
                        schema,
                        inv,
                        config.pool_noise,
                        model.config.categorical_heads,
                        &mut rng,
                    );
                    &noisy
                }
                None => &labels[i],
            };
            let (parts, grads) = dialogue_objective(&model, &model.store, turns, &config.weights, true)?;
            let mut grads = grads.expect("gradients requested");
            if !grads.all_finite() {
                return Err(DstError::NonFinite {
                    what: "gradient".into(),
                    detail: format!("dialogue {} at step {step}", train_set[i].id),
                });
            }
            if let Some(clip) = config.grad_clip {
                let norm = grads.global_norm().as_f64();
                if norm > clip {
                    grads.scale((clip / norm) as f32);
                }
            }
            step += 1;
            lr = lr_at(step, total, config.learning_rate, config.warmup)?;
            adam.update(&mut model.store, &grads, lr);
            loss_sum += parts.joint;
        }
        let dev_jga = evaluate(&model, dev_set, schema, &tracker, &[])?.report.jga;
        let train_loss = loss_sum / train_set.len() as f64;
        log::info!("epoch {epoch}: train loss {train_loss:.4}, dev JGA {dev_jga:.4}, lr {lr:.2e}");
        history.push(HistoryRecord {
            epoch,
            train_loss,
            dev_jga,
            lr,
        });
        if best.as_ref().map_or(true, |(_, b, _)| dev_jga > *b) {
            best = Some((epoch, dev_jga, model.store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("no dev improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    let (best_epoch, best_dev_jga, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_dev_jga,
    })
}

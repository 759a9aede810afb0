use serde::{Deserialize, Serialize};

use super::dialogue::{Dialogue, DialogueState, SlotValue};
use super::schema::Schema;
use super::span::find_span_any;
use crate::encoder::{TokenizedContext, Vocab};
use crate::error::Result;
use crate::heads::HitType;
use crate::msp::{pool_values, PoolCandidate, PoolMode, DEFAULT_POOL_SIZE};
use crate::tracker::{turn_context, UpdateStrategy};

/// Settings that change what the gold labels look like.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub strategy: UpdateStrategy,
    pub max_len: usize,
    pub pool_size: usize,
    pub pool_mode: PoolMode,
    /// When off, categorical slots are treated as span slots.
    pub categorical_heads: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            strategy: UpdateStrategy::Msp,
            max_len: 512,
            pool_size: DEFAULT_POOL_SIZE,
            pool_mode: PoolMode::Full,
            categorical_heads: true,
        }
    }
}

/// Supervision for one slot at one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    /// Zero-based turn index.
    pub turn: usize,
    pub slot: usize,
    pub hit_type: HitType,
    pub mention_index: Option<usize>,
    pub categorical_label: Option<usize>,
    /// Inclusive token range into the context content (after the
    /// classification token).
    pub span_label: Option<(usize, usize)>,
    /// Hit whose value could not be located; kept for the type loss only.
    pub unmatched: bool,
}

impl TrainingExample {
    fn new(turn: usize, slot: usize, hit_type: HitType) -> Self {
        TrainingExample {
            turn,
            slot,
            hit_type,
            mention_index: None,
            categorical_label: None,
            span_label: None,
            unmatched: false,
        }
    }
}

/// All supervision of one turn together with the inputs it refers to.
#[derive(Debug, Clone)]
pub struct TurnLabels {
    pub turn: usize,
    pub context: TokenizedContext,
    /// Teacher-forced pool values per slot (empty without a pool).
    pub pools: Vec<Vec<PoolCandidate>>,
    pub examples: Vec<TrainingExample>,
}

pub fn uses_categorical_head(schema: &Schema, slot: usize, categorical_heads: bool) -> bool {
    categorical_heads && schema.slot(slot).is_categorical()
}

/// Label one slot. `prev_gold` is the gold value at the previous turn and
/// `content` the context tokens that span labels index into.
#[allow(clippy::too_many_arguments)]
pub fn label_slot(
    strategy: UpdateStrategy,
    schema: &Schema,
    turn: usize,
    slot: usize,
    gold: &SlotValue,
    prev_gold: &SlotValue,
    pool: &[PoolCandidate],
    content: &[String],
    categorical_heads: bool,
) -> TrainingExample {
    if strategy == UpdateStrategy::ChangedState && gold.matches(prev_gold, schema) {
        return TrainingExample::new(turn, slot, HitType::None);
    }
    let value = match gold {
        SlotValue::None => return TrainingExample::new(turn, slot, HitType::None),
        SlotValue::DontCare => return TrainingExample::new(turn, slot, HitType::DontCare),
        SlotValue::Text(v) => v,
    };
    if strategy == UpdateStrategy::Msp {
        // candidates are ordered self first, so the first match prefers self
        if let Some(i) = pool
            .iter()
            .position(|c| SlotValue::Text(c.value.clone()).matches(gold, schema))
        {
            let mut ex = TrainingExample::new(turn, slot, HitType::Mentioned);
            ex.mention_index = Some(i);
            return ex;
        }
    }
    let mut ex = TrainingExample::new(turn, slot, HitType::Hit);
    if uses_categorical_head(schema, slot, categorical_heads) {
        ex.categorical_label = schema.ontology_index(slot, value);
        ex.unmatched = ex.categorical_label.is_none();
    } else {
        ex.span_label = find_span_any(&schema.surface_forms(value), content);
        ex.unmatched = ex.span_label.is_none();
    }
    ex
}

/// Labels of turn `t` given the gold state before it.
pub fn derive_turn_labels(
    dialogue: &Dialogue,
    t: usize,
    prev_gold: &DialogueState,
    schema: &Schema,
    vocab: &Vocab,
    config: &LabelConfig,
) -> Result<TurnLabels> {
    let context = turn_context(dialogue, t, prev_gold, schema, vocab, config.strategy, config.max_len)?;
    let gold = &dialogue.turns[t].gold_state;
    let pools: Vec<Vec<PoolCandidate>> = (0..schema.len())
        .map(|s| {
            if config.strategy.uses_pool() {
                pool_values(s, prev_gold, schema, config.pool_size, config.pool_mode)
            } else {
                Vec::new()
            }
        })
        .collect();
    let examples = (0..schema.len())
        .map(|s| {
            label_slot(
                config.strategy,
                schema,
                t,
                s,
                gold.get(s),
                prev_gold.get(s),
                &pools[s],
                context.content(),
                config.categorical_heads,
            )
        })
        .collect();
    Ok(TurnLabels {
        turn: t,
        context,
        pools,
        examples,
    })
}

/// Teacher-forced labels for every turn and slot of a dialogue.
pub fn derive_labels(
    dialogue: &Dialogue,
    schema: &Schema,
    vocab: &Vocab,
    config: &LabelConfig,
) -> Result<Vec<TurnLabels>> {
    (0..dialogue.turns.len())
        .map(|t| {
            let prev = dialogue.gold_before(t, schema.len());
            derive_turn_labels(dialogue, t, &prev, schema, vocab, config)
        })
        .collect()
}

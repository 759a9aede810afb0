//! Turn-by-turn state update under the four update strategies.

mod oracle;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::text::{slot_name_tokens, tokenize};
use crate::corpus::{Dialogue, DialogueState, Schema, SlotValue, Turn};
use crate::encoder::{
    context_utterances, tokenize_context, tokenize_context_with_state, TokenizedContext, Vocab,
    SEP,
};
use crate::error::{DstError, Result};
use crate::heads::HitType;
use crate::msp::{pool_values, PoolCandidate, PoolMode, DEFAULT_POOL_SIZE};

pub use oracle::OracleHeads;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    PureContext,
    ChangedState,
    FullState,
    Msp,
}

impl UpdateStrategy {
    pub const ALL: [UpdateStrategy; 4] = [
        UpdateStrategy::PureContext,
        UpdateStrategy::ChangedState,
        UpdateStrategy::FullState,
        UpdateStrategy::Msp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateStrategy::PureContext => "pure_context",
            UpdateStrategy::ChangedState => "changed_state",
            UpdateStrategy::FullState => "full_state",
            UpdateStrategy::Msp => "msp",
        }
    }

    /// Hit-type classes of this strategy's type head, in logit order.
    pub fn classes(self) -> &'static [HitType] {
        const THREE: [HitType; 3] = [HitType::None, HitType::DontCare, HitType::Hit];
        match self {
            UpdateStrategy::Msp => &HitType::ALL,
            _ => &THREE,
        }
    }

    pub fn class_index(self, hit_type: HitType) -> Option<usize> {
        self.classes().iter().position(|&c| c == hit_type)
    }

    pub fn uses_pool(self) -> bool {
        self == UpdateStrategy::Msp
    }

    pub fn uses_state_string(self) -> bool {
        self == UpdateStrategy::FullState
    }
}

impl std::fmt::Display for UpdateStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for UpdateStrategy {
    type Err = DstError;

    fn from_str(s: &str) -> Result<Self> {
        UpdateStrategy::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| DstError::Config(format!("unknown strategy '{s}'")))
    }
}

/// `slot = value` pairs in schema order, none omitted, separated by the
/// separator token.
pub fn serialize_state_string(state: &DialogueState, schema: &Schema) -> Vec<String> {
    let mut out = Vec::new();
    for (id, value) in state.filled() {
        if !out.is_empty() {
            out.push(SEP.to_string());
        }
        let name = &schema.slot(id).name;
        let parts = slot_name_tokens(name);
        for (i, p) in parts.into_iter().enumerate() {
            if i > 0 {
                out.push("-".to_string());
            }
            out.push(p);
        }
        out.push("=".to_string());
        out.extend(tokenize(value.as_annotation()));
    }
    out
}

/// Encoder input for turn `t`. The full-state strategy appends `prev_state`.
pub fn turn_context(
    dialogue: &Dialogue,
    t: usize,
    prev_state: &DialogueState,
    schema: &Schema,
    vocab: &Vocab,
    strategy: UpdateStrategy,
    max_len: usize,
) -> Result<TokenizedContext> {
    let utterances = context_utterances(dialogue, t);
    if strategy.uses_state_string() {
        let state = serialize_state_string(prev_state, schema);
        tokenize_context_with_state(&utterances, &state, max_len, vocab)
    } else {
        tokenize_context(&utterances, max_len, vocab)
    }
}

/// What a predictor decided for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecision {
    pub hit_type: HitType,
    pub mention_index: Option<usize>,
    /// Value produced by the hit path (categorical argmax or span text).
    pub value: SlotValue,
    pub span: Option<(usize, usize)>,
}

impl SlotDecision {
    pub fn of_type(hit_type: HitType) -> Self {
        SlotDecision {
            hit_type,
            mention_index: None,
            value: SlotValue::None,
            span: None,
        }
    }
}

pub struct TurnInput<'a> {
    pub dialogue: &'a Dialogue,
    pub turn: usize,
    pub context: &'a TokenizedContext,
    pub pools: &'a [Vec<PoolCandidate>],
    pub prev_state: &'a DialogueState,
}

/// Source of per-slot decisions: a trained model or the gold-label oracle.
pub trait TurnPredictor {
    /// Strategy the predictor was built for; `None` fits any strategy.
    fn strategy(&self) -> Option<UpdateStrategy>;

    fn vocab(&self) -> &Vocab;

    fn predict_turn(&self, input: &TurnInput<'_>) -> Result<Vec<SlotDecision>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disposition {
    Inherited,
    Revised,
    Extracted,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub dialogue_id: String,
    /// One-based turn number.
    pub turn: usize,
    pub slot: String,
    pub hit_type: HitType,
    pub mention_index: Option<usize>,
    /// Slot whose pool entry was selected, for mentioned decisions.
    pub source_slot: Option<String>,
    pub value: String,
    pub disposition: Disposition,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub noised: bool,
}

/// Forced extraction errors: the first extraction of each slot within the
/// first `early_turns` turns is replaced by a wrong value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub seed: u64,
    pub early_turns: usize,
    /// Replacement values per slot id.
    pub inventory: Vec<Vec<String>>,
}

impl NoiseConfig {
    /// Inventory from categorical ontologies plus every gold value seen.
    pub fn from_corpus(schema: &Schema, dialogues: &[Dialogue], seed: u64, early_turns: usize) -> Self {
        let mut inventory: Vec<Vec<String>> =
            schema.slots().iter().map(|s| s.ontology.clone()).collect();
        for d in dialogues {
            for turn in &d.turns {
                for (s, v) in turn.gold_state.filled() {
                    if let SlotValue::Text(text) = v {
                        if !inventory[s].contains(text) {
                            inventory[s].push(text.clone());
                        }
                    }
                }
            }
        }
        for values in &mut inventory {
            values.sort();
        }
        NoiseConfig {
            seed,
            early_turns,
            inventory,
        }
    }

    fn wrong_value(&self, dialogue_id: &str, slot: usize, right: &SlotValue, schema: &Schema) -> Option<String> {
        let candidates: Vec<&String> = self.inventory[slot]
            .iter()
            .filter(|v| !SlotValue::Text((*v).clone()).matches(right, schema))
            .collect();
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(dialogue_id.as_bytes());
        hasher.update(slot.to_le_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        candidates.choose(&mut rng).map(|v| (*v).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub strategy: UpdateStrategy,
    pub max_len: usize,
    pub pool_size: usize,
    pub pool_mode: PoolMode,
    pub noise: Option<NoiseConfig>,
}

impl TrackerConfig {
    pub fn new(strategy: UpdateStrategy, max_len: usize) -> Self {
        TrackerConfig {
            strategy,
            max_len,
            pool_size: DEFAULT_POOL_SIZE,
            pool_mode: PoolMode::Full,
            noise: None,
        }
    }
}

/// New value of a slot under the pool strategy.
pub fn update_slot(decision: &SlotDecision, pool: &[PoolCandidate]) -> SlotValue {
    match decision.hit_type {
        HitType::None => SlotValue::None,
        HitType::DontCare => SlotValue::DontCare,
        HitType::Mentioned => decision
            .mention_index
            .and_then(|i| pool.get(i))
            .map_or(SlotValue::None, |c| SlotValue::Text(c.value.clone())),
        HitType::Hit => decision.value.clone(),
    }
}

fn hit_disposition(prev: &SlotValue, value: &SlotValue, schema: &Schema) -> Disposition {
    if value.is_none() {
        Disposition::None
    } else if !prev.is_none() && !prev.matches(value, schema) {
        Disposition::Revised
    } else {
        Disposition::Extracted
    }
}

/// Apply one decision; returns the new value, its disposition and the pool
/// entry used, if any.
pub fn apply_decision(
    strategy: UpdateStrategy,
    prev: &SlotValue,
    decision: &SlotDecision,
    pool: &[PoolCandidate],
    context: &TokenizedContext,
    schema: &Schema,
) -> (SlotValue, Disposition, Option<usize>) {
    let keep = |prev: &SlotValue| {
        if prev.is_none() {
            (SlotValue::None, Disposition::None, None)
        } else {
            (prev.clone(), Disposition::Inherited, None)
        }
    };
    match (strategy, decision.hit_type) {
        (_, HitType::DontCare) => (SlotValue::DontCare, Disposition::Extracted, None),
        (UpdateStrategy::ChangedState, HitType::None) => keep(prev),
        (_, HitType::None) => (SlotValue::None, Disposition::None, None),
        (UpdateStrategy::Msp, HitType::Mentioned) => {
            let value = update_slot(decision, pool);
            if value.is_none() {
                (value, Disposition::None, None)
            } else {
                let source = decision.mention_index.map(|i| pool[i].source_slot);
                (value, Disposition::Inherited, source)
            }
        }
        // a pool-less head never emits mentioned; treat it as no update
        (UpdateStrategy::ChangedState, HitType::Mentioned) => keep(prev),
        (_, HitType::Mentioned) => (SlotValue::None, Disposition::None, None),
        (UpdateStrategy::ChangedState, HitType::Hit) if decision.value.is_none() => keep(prev),
        (UpdateStrategy::FullState, HitType::Hit)
            if !decision.value.is_none()
                && decision.span.map_or(false, |(s, _)| context.in_state(s)) =>
        {
            (decision.value.clone(), Disposition::Inherited, None)
        }
        (_, HitType::Hit) => {
            let value = decision.value.clone();
            let disposition = hit_disposition(prev, &value, schema);
            (value, disposition, None)
        }
    }
}

/// One tracking step shared by batch tracking and interactive sessions.
fn step_turn<P: TurnPredictor + ?Sized>(
    predictor: &P,
    schema: &Schema,
    config: &TrackerConfig,
    dialogue: &Dialogue,
    t: usize,
    prev: &DialogueState,
    noised: &mut [bool],
) -> Result<(DialogueState, Vec<TraceRecord>)> {
    let strategy = config.strategy;
    let context = turn_context(dialogue, t, prev, schema, predictor.vocab(), strategy, config.max_len)?;
    let pools: Vec<Vec<PoolCandidate>> = (0..schema.len())
        .map(|s| {
            if strategy.uses_pool() {
                pool_values(s, prev, schema, config.pool_size, config.pool_mode)
            } else {
                Vec::new()
            }
        })
        .collect();
    let decisions = predictor.predict_turn(&TurnInput {
        dialogue,
        turn: t,
        context: &context,
        pools: &pools,
        prev_state: prev,
    })?;
    if decisions.len() != schema.len() {
        return Err(DstError::Misaligned(format!(
            "predictor returned {} decisions for {} slots",
            decisions.len(),
            schema.len()
        )));
    }
    let mut state = prev.clone();
    let mut records = Vec::with_capacity(schema.len());
    for (s, decision) in decisions.iter().enumerate() {
        let prev_value = prev.get(s);
        let (mut value, disposition, source) =
            apply_decision(strategy, prev_value, decision, &pools[s], &context, schema);
        let mut was_noised = false;
        if let Some(noise) = &config.noise {
            if disposition == Disposition::Extracted
                && prev_value.is_none()
                && matches!(value, SlotValue::Text(_))
                && t < noise.early_turns
                && !noised[s]
            {
                if let Some(wrong) = noise.wrong_value(&dialogue.id, s, &value, schema) {
                    value = SlotValue::Text(wrong);
                    noised[s] = true;
                    was_noised = true;
                }
            }
        }
        records.push(TraceRecord {
            dialogue_id: dialogue.id.clone(),
            turn: t + 1,
            slot: schema.slot(s).name.clone(),
            hit_type: decision.hit_type,
            mention_index: decision.mention_index,
            source_slot: source.map(|i| schema.slot(i).name.clone()),
            value: value.as_annotation().to_string(),
            disposition,
            noised: was_noised,
        });
        state.set(s, value, t + 1);
    }
    Ok((state, records))
}

fn check_strategy<P: TurnPredictor + ?Sized>(predictor: &P, config: &TrackerConfig) -> Result<()> {
    match predictor.strategy() {
        Some(s) if s != config.strategy => Err(DstError::Checkpoint(format!(
            "model was trained for strategy {s}, not {}",
            config.strategy
        ))),
        _ => Ok(()),
    }
}

/// Predicted state after every turn plus one trace record per turn and slot.
pub fn track_dialogue<P: TurnPredictor + ?Sized>(
    predictor: &P,
    dialogue: &Dialogue,
    schema: &Schema,
    config: &TrackerConfig,
) -> Result<(Vec<DialogueState>, Vec<TraceRecord>)> {
    check_strategy(predictor, config)?;
    let mut prev = DialogueState::empty(schema.len());
    let mut noised = vec![false; schema.len()];
    let mut states = Vec::with_capacity(dialogue.turns.len());
    let mut trace = Vec::with_capacity(dialogue.turns.len() * schema.len());
    for t in 0..dialogue.turns.len() {
        let (state, records) = step_turn(predictor, schema, config, dialogue, t, &prev, &mut noised)?;
        trace.extend(records);
        states.push(state.clone());
        prev = state;
    }
    Ok((states, trace))
}

/// Incremental tracking for interactive use: feed one agent/user exchange
/// at a time.
pub struct TrackerSession<'a, P: TurnPredictor + ?Sized> {
    predictor: &'a P,
    schema: &'a Schema,
    config: TrackerConfig,
    dialogue: Dialogue,
    state: DialogueState,
    noised: Vec<bool>,
}

impl<'a, P: TurnPredictor + ?Sized> TrackerSession<'a, P> {
    pub fn new(predictor: &'a P, schema: &'a Schema, config: TrackerConfig, id: &str) -> Result<Self> {
        check_strategy(predictor, &config)?;
        Ok(TrackerSession {
            predictor,
            schema,
            config,
            dialogue: Dialogue {
                id: id.to_string(),
                turns: Vec::new(),
            },
            state: DialogueState::empty(schema.len()),
            noised: vec![false; schema.len()],
        })
    }

    pub fn state(&self) -> &DialogueState {
        &self.state
    }

    pub fn turns(&self) -> usize {
        self.dialogue.turns.len()
    }

    pub fn reset(&mut self) {
        self.dialogue.turns.clear();
        self.state = DialogueState::empty(self.schema.len());
        self.noised = vec![false; self.schema.len()];
    }

    /// Track one exchange given raw agent and user text.
    pub fn step(&mut self, agent: &str, user: &str) -> Result<(DialogueState, Vec<TraceRecord>)> {
        self.dialogue.turns.push(Turn {
            agent: tokenize(agent),
            user: tokenize(user),
            gold_state: DialogueState::empty(self.schema.len()),
        });
        let t = self.dialogue.turns.len() - 1;
        let (state, records) = step_turn(
            self.predictor,
            self.schema,
            &self.config,
            &self.dialogue,
            t,
            &self.state,
            &mut self.noised,
        )?;
        self.state = state.clone();
        Ok((state, records))
    }
}

/// Write trace records as JSON lines.
pub fn write_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| DstError::io(path, e))?);
    for r in records {
        let line = serde_json::to_string(r).expect("trace record serializes");
        writeln!(out, "{line}").map_err(|e| DstError::io(path, e))?;
    }
    out.flush().map_err(|e| DstError::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| DstError::malformed(path.display().to_string(), e))
        })
        .collect()
}

#[cfg(test)]
mod tests;

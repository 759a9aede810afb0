use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::Schema;
use super::text::tokenize;
use crate::error::{DstError, Result};

/// Value of one slot at one turn.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum SlotValue {
    #[default]
    None,
    DontCare,
    Text(String),
}

impl SlotValue {
    /// Interpret an annotation string; `none`, the empty string and the
    /// MultiWOZ dontcare spellings are recognised.
    pub fn parse(raw: &str) -> SlotValue {
        let trimmed = raw.trim();
        match trimmed.to_lowercase().as_str() {
            "" | "none" | "not mentioned" => SlotValue::None,
            "dontcare" | "don't care" | "dont care" | "do n't care" => SlotValue::DontCare,
            _ => SlotValue::Text(trimmed.to_string()),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, SlotValue::None)
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            SlotValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_annotation(&self) -> &str {
        match self {
            SlotValue::None => "none",
            SlotValue::DontCare => "dontcare",
            SlotValue::Text(s) => s,
        }
    }

    /// Comparison under the schema's value normalization.
    pub fn matches(&self, other: &SlotValue, schema: &Schema) -> bool {
        match (self, other) {
            (SlotValue::None, SlotValue::None) => true,
            (SlotValue::DontCare, SlotValue::DontCare) => true,
            (SlotValue::Text(a), SlotValue::Text(b)) => {
                a == b || schema.canonical_value(a) == schema.canonical_value(b)
            }
            _ => false,
        }
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_annotation())
    }
}

/// Assignment of a value to every schema slot, indexed by slot id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueState {
    values: Vec<SlotValue>,
    last_updated: Vec<Option<usize>>,
}

impl DialogueState {
    pub fn empty(slot_count: usize) -> Self {
        DialogueState {
            values: vec![SlotValue::None; slot_count],
            last_updated: vec![None; slot_count],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, slot: usize) -> &SlotValue {
        &self.values[slot]
    }

    pub fn values(&self) -> &[SlotValue] {
        &self.values
    }

    /// Turn at which the slot last changed value, if it holds one.
    pub fn last_updated(&self, slot: usize) -> Option<usize> {
        self.last_updated[slot]
    }

    /// Set a slot at `turn`; the update turn only moves when the value
    /// actually changes.
    pub fn set(&mut self, slot: usize, value: SlotValue, turn: usize) {
        if self.values[slot] != value {
            self.last_updated[slot] = if value.is_none() { None } else { Some(turn) };
            self.values[slot] = value;
        }
    }

    /// Derive the state at `turn` from raw per-slot values and the previous
    /// state's bookkeeping.
    pub fn advance(prev: &DialogueState, values: Vec<SlotValue>, turn: usize) -> DialogueState {
        let mut next = prev.clone();
        for (slot, value) in values.into_iter().enumerate() {
            next.set(slot, value, turn);
        }
        next
    }

    pub fn filled(&self) -> impl Iterator<Item = (usize, &SlotValue)> {
        self.values.iter().enumerate().filter(|(_, v)| !v.is_none())
    }

    /// Non-none slots as a name -> annotation map.
    pub fn to_map(&self, schema: &Schema) -> BTreeMap<String, String> {
        self.filled()
            .map(|(i, v)| (schema.slot(i).name.clone(), v.as_annotation().to_string()))
            .collect()
    }

    pub fn matches(&self, other: &DialogueState, schema: &Schema) -> bool {
        self.values
            .iter()
            .zip(&other.values)
            .all(|(a, b)| a.matches(b, schema))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub agent: Vec<String>,
    pub user: Vec<String>,
    pub gold_state: DialogueState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Gold state before turn `t` (0-based); turn 0 sees the empty state.
    pub fn gold_before(&self, t: usize, slot_count: usize) -> DialogueState {
        if t == 0 {
            DialogueState::empty(slot_count)
        } else {
            self.turns[t - 1].gold_state.clone()
        }
    }

    pub fn to_record(&self, schema: &Schema) -> DialogueRecord {
        DialogueRecord {
            id: self.id.clone(),
            turns: self
                .turns
                .iter()
                .map(|t| TurnRecord {
                    agent: t.agent.join(" "),
                    user: t.user.join(" "),
                    state: t.gold_state.to_map(schema),
                })
                .collect(),
        }
    }
}

/// One line of a dialogue file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub id: String,
    pub turns: Vec<TurnRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    #[serde(default)]
    pub agent: String,
    #[serde(default)]
    pub user: String,
    #[serde(default)]
    pub state: BTreeMap<String, String>,
}

impl DialogueRecord {
    pub fn into_dialogue(self, schema: &Schema) -> Result<Dialogue> {
        if self.turns.is_empty() {
            return Err(DstError::dialogue(&self.id, "empty dialogue"));
        }
        let mut prev = DialogueState::empty(schema.len());
        let mut turns = Vec::with_capacity(self.turns.len());
        for (t, record) in self.turns.into_iter().enumerate() {
            let mut values = vec![SlotValue::None; schema.len()];
            for (name, raw) in &record.state {
                let id = schema.slot_id(name).ok_or_else(|| {
                    DstError::dialogue(
                        &self.id,
                        format!("turn {}: unknown slot '{name}' in state", t + 1),
                    )
                })?;
                values[id] = SlotValue::parse(raw);
            }
            let state = DialogueState::advance(&prev, values, t + 1);
            turns.push(Turn {
                agent: tokenize(&record.agent),
                user: tokenize(&record.user),
                gold_state: state.clone(),
            });
            prev = state;
        }
        Ok(Dialogue { id: self.id, turns })
    }
}

pub fn parse_dialogue_line(line: &str, schema: &Schema) -> Result<Dialogue> {
    let record: DialogueRecord =
        serde_json::from_str(line).map_err(|e| DstError::malformed("dialogue record", e))?;
    record.into_dialogue(schema)
}

/// Read a JSON-lines dialogue file; blank lines are skipped.
pub fn parse_dialogues(path: impl AsRef<Path>, schema: &Schema) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DstError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DstError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let dialogue = parse_dialogue_line(&line, schema).map_err(|e| match e {
            DstError::Malformed { what, message } => DstError::Malformed {
                what,
                message: format!("line {}: {message}", n + 1),
            },
            other => other,
        })?;
        out.push(dialogue);
    }
    Ok(out)
}

pub fn write_dialogues(
    path: impl AsRef<Path>,
    dialogues: &[Dialogue],
    schema: &Schema,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for d in dialogues {
        let line = serde_json::to_string(&d.to_record(schema)).expect("record serializes");
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| DstError::io(path, e))?;
    file.write_all(&buf).map_err(|e| DstError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::schema::{SchemaFile, SlotDef, SlotKind};

    fn schema() -> Schema {
        let slot = |name: &str| SlotDef {
            name: name.into(),
            domain: name.split('-').next().unwrap().into(),
            kind: SlotKind::Span,
            ontology: vec![],
            relevant_slots: vec![],
        };
        Schema::new(SchemaFile {
            slots: vec![slot("train-day"), slot("restaurant-day")],
            synonyms: Default::default(),
        })
        .unwrap()
    }

    #[test]
    fn repeated_state_keeps_update_turns() {
        let line = r#"{"id":"d1","turns":[
            {"agent":"","user":"a train on monday","state":{"train-day":"monday"}},
            {"agent":"ok","user":"thanks","state":{"train-day":"monday"}}]}"#;
        let d = parse_dialogue_line(&line.replace('\n', ""), &schema()).unwrap();
        assert_eq!(d.turns[0].gold_state.last_updated(0), Some(1));
        assert_eq!(d.turns[1].gold_state.last_updated(0), Some(1));
        assert_eq!(d.turns[1].gold_state.last_updated(1), None);
        assert_eq!(d.turns[1].gold_state.get(1), &SlotValue::None);
    }

    #[test]
    fn unknown_slot_is_an_error() {
        let line = r#"{"id":"d1","turns":[{"agent":"","user":"x","state":{"hotel-day":"monday"}}]}"#;
        let err = parse_dialogue_line(line, &schema()).unwrap_err();
        assert!(err.to_string().contains("hotel-day"));
    }

    #[test]
    fn empty_dialogue_is_an_error() {
        let err = parse_dialogue_line(r#"{"id":"d9","turns":[]}"#, &schema()).unwrap_err();
        assert!(err.to_string().contains("empty dialogue"));
    }

    #[test]
    fn dontcare_spellings() {
        assert_eq!(SlotValue::parse("don't care"), SlotValue::DontCare);
        assert_eq!(SlotValue::parse("none"), SlotValue::None);
        assert_eq!(SlotValue::parse("Monday"), SlotValue::Text("Monday".into()));
    }
}

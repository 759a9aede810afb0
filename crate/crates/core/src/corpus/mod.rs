//! Schema and dialogue ingestion, span search, label derivation and the
//! synthetic corpus generator.

mod dialogue;
mod schema;
pub mod events;
pub mod generator;
pub mod labels;
mod span;
pub mod text;

pub use dialogue::{
    parse_dialogue_line, parse_dialogues, write_dialogues, Dialogue, DialogueRecord,
    DialogueState, SlotValue, Turn, TurnRecord,
};
pub use schema::{parse_schema, Schema, SchemaFile, SlotDef, SlotKind, MAX_RELEVANT_SLOTS};
pub use span::{find_span, find_span_any};

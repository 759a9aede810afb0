use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Indirect,
    Correction,
    Distractor,
}

/// One logged phenomenon of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhenomenonEvent {
    pub dialogue_id: String,
    /// One-based turn number.
    pub turn: usize,
    pub slot: String,
    pub event: EventKind,
    /// Slot an indirect mention refers to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_slot: Option<String>,
}

pub fn write_events(path: impl AsRef<Path>, events: &[PhenomenonEvent]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| DstError::io(path, e))?);
    for e in events {
        let line = serde_json::to_string(e).expect("event serializes");
        writeln!(out, "{line}").map_err(|e| DstError::io(path, e))?;
    }
    out.flush().map_err(|e| DstError::io(path, e))
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<PhenomenonEvent>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| DstError::malformed(path.display().to_string(), e)))
        .collect()
}

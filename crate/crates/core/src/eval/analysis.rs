use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::events::{EventKind, PhenomenonEvent};
use crate::corpus::{Dialogue, Schema, SlotValue};
use crate::error::{DstError, Result};
use crate::heads::HitType;
use crate::tracker::{Disposition, TraceRecord};

/// Counters of how predicted values were carried across turns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InheritCounters {
    /// Wrong (turn, slot) predictions.
    pub error_count: usize,
    /// Errors caused by carrying a wrong value forward or by missing an
    /// indirect mention.
    pub inherit_error_count: usize,
    /// Wrong at the previous turn, right after a revising hit.
    pub revision_success: usize,
    pub indirect_tracked: usize,
    pub indirect_total: usize,
}

type Key<'a> = (&'a str, usize, &'a str);

/// Score traces against gold states and the phenomenon sidecar.
pub fn inherit_analysis(
    traces: &[TraceRecord],
    dialogues: &[Dialogue],
    events: &[PhenomenonEvent],
    schema: &Schema,
) -> Result<InheritCounters> {
    let index: HashMap<Key<'_>, &TraceRecord> = traces
        .iter()
        .map(|r| ((r.dialogue_id.as_str(), r.turn, r.slot.as_str()), r))
        .collect();
    if index.len() != traces.len() {
        return Err(DstError::Misaligned("duplicate trace records".into()));
    }
    let expected: usize = dialogues.iter().map(|d| d.turns.len() * schema.len()).sum();
    if expected != traces.len() {
        return Err(DstError::Misaligned(format!(
            "{} trace records for {expected} (turn, slot) pairs",
            traces.len()
        )));
    }
    let indirect: HashMap<Key<'_>, &PhenomenonEvent> = events
        .iter()
        .filter(|e| e.event == EventKind::Indirect)
        .map(|e| ((e.dialogue_id.as_str(), e.turn, e.slot.as_str()), e))
        .collect();

    let mut c = InheritCounters::default();
    for d in dialogues {
        for s in 0..schema.len() {
            let name = schema.slot(s).name.as_str();
            let mut prev_wrong = false;
            for (t, turn) in d.turns.iter().enumerate() {
                let key = (d.id.as_str(), t + 1, name);
                let rec = index.get(&key).ok_or_else(|| {
                    DstError::Misaligned(format!("no trace for {} turn {} slot {name}", d.id, t + 1))
                })?;
                let wrong = !SlotValue::parse(&rec.value).matches(turn.gold_state.get(s), schema);
                let event = indirect.get(&key);
                if wrong {
                    c.error_count += 1;
                    let carried = rec.disposition == Disposition::Inherited && prev_wrong;
                    if carried || event.is_some() {
                        c.inherit_error_count += 1;
                    }
                } else if prev_wrong && rec.disposition == Disposition::Revised {
                    c.revision_success += 1;
                }
                if let Some(e) = event {
                    c.indirect_total += 1;
                    if rec.hit_type == HitType::Mentioned && rec.source_slot.is_some() && rec.source_slot == e.source_slot {
                        c.indirect_tracked += 1;
                    }
                }
                prev_wrong = wrong;
            }
        }
    }
    Ok(c)
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueState, Schema, SlotValue};
use crate::error::{DstError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SlotOutcome {
    Tp,
    Tn,
    Fp,
    Fn,
    Plfp,
}

/// Outcome of one prediction against its gold value.
pub fn classify(pred: &SlotValue, gold: &SlotValue, schema: &Schema) -> SlotOutcome {
    match (gold.is_none(), pred.is_none()) {
        (true, true) => SlotOutcome::Tn,
        (true, false) => SlotOutcome::Fp,
        (false, true) => SlotOutcome::Fn,
        (false, false) if pred.matches(gold, schema) => SlotOutcome::Tp,
        (false, false) => SlotOutcome::Plfp,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub plfp: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, outcome: SlotOutcome) {
        match outcome {
            SlotOutcome::Tp => self.tp += 1,
            SlotOutcome::Tn => self.tn += 1,
            SlotOutcome::Fp => self.fp += 1,
            SlotOutcome::Fn => self.fn_ += 1,
            SlotOutcome::Plfp => self.plfp += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_ + self.plfp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotReport {
    pub slot: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: OutcomeCounts,
    /// Metrics whose denominator was zero and that are reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl SlotReport {
    pub fn from_counts(slot: impl Into<String>, counts: OutcomeCounts) -> Self {
        let mut undefined = Vec::new();
        let c = counts;
        let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
        let recall = ratio(c.tp, c.tp + c.fn_ + c.plfp, "recall", &mut undefined);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            undefined.push("f1".to_string());
            0.0
        };
        let accuracy = ratio(c.tp + c.tn, c.total(), "accuracy", &mut undefined);
        SlotReport {
            slot: slot.into(),
            accuracy,
            precision,
            recall,
            f1,
            counts,
            undefined,
        }
    }
}

fn check_aligned(preds: &[DialogueState], golds: &[DialogueState], schema: &Schema) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(DstError::Misaligned(format!(
            "{} predicted turns vs {} gold turns",
            preds.len(),
            golds.len()
        )));
    }
    if let Some(bad) = preds.iter().chain(golds).find(|s| s.len() != schema.len()) {
        return Err(DstError::Misaligned(format!(
            "state covers {} slots, schema has {}",
            bad.len(),
            schema.len()
        )));
    }
    Ok(())
}

fn turn_correct(pred: &DialogueState, gold: &DialogueState, slots: &[usize], schema: &Schema) -> bool {
    slots.iter().all(|&s| pred.get(s).matches(gold.get(s), schema))
}

/// Fraction of turns whose every slot is right. An empty input scores 0.
pub fn joint_goal_accuracy(preds: &[DialogueState], golds: &[DialogueState], schema: &Schema) -> Result<f64> {
    check_aligned(preds, golds, schema)?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let all: Vec<usize> = (0..schema.len()).collect();
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| turn_correct(p, g, &all, schema))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Per-slot outcome counts and derived metrics, in schema order.
pub fn slot_metrics(preds: &[DialogueState], golds: &[DialogueState], schema: &Schema) -> Result<Vec<SlotReport>> {
    check_aligned(preds, golds, schema)?;
    Ok(schema
        .slots()
        .iter()
        .enumerate()
        .map(|(s, def)| {
            let mut counts = OutcomeCounts::default();
            for (p, g) in preds.iter().zip(golds) {
                counts.add(classify(p.get(s), g.get(s), schema));
            }
            SlotReport::from_counts(def.name.clone(), counts)
        })
        .collect())
}

/// Joint accuracy over each domain's slots, on turns where the domain holds
/// at least one non-none gold value. Domains never active are omitted.
pub fn domain_jga(
    preds: &[DialogueState],
    golds: &[DialogueState],
    schema: &Schema,
) -> Result<BTreeMap<String, f64>> {
    check_aligned(preds, golds, schema)?;
    let mut out = BTreeMap::new();
    for domain in schema.domains() {
        let slots: Vec<usize> = (0..schema.len())
            .filter(|&s| schema.slot(s).domain == domain)
            .collect();
        let mut active = 0usize;
        let mut hits = 0usize;
        for (p, g) in preds.iter().zip(golds) {
            if slots.iter().any(|&s| !g.get(s).is_none()) {
                active += 1;
                if turn_correct(p, g, &slots, schema) {
                    hits += 1;
                }
            }
        }
        if active > 0 {
            out.insert(domain, hits as f64 / active as f64);
        }
    }
    Ok(out)
}

//! Joint and per-slot metrics, inherit analysis, and report rendering.

mod analysis;
mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::events::PhenomenonEvent;
use crate::corpus::{Dialogue, DialogueState, Schema};
use crate::error::{DstError, Result};
use crate::tracker::{track_dialogue, TraceRecord, TrackerConfig, TurnPredictor, UpdateStrategy};
use crate::training::load_checkpoint;

pub use analysis::{inherit_analysis, InheritCounters};
pub use metrics::{
    classify, domain_jga, joint_goal_accuracy, slot_metrics, OutcomeCounts, SlotOutcome,
    SlotReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: UpdateStrategy,
    pub dialogues: usize,
    pub turns: usize,
    pub jga: f64,
    pub domain_jga: BTreeMap<String, f64>,
    pub slots: Vec<SlotReport>,
    pub inherit: InheritCounters,
}

/// Report plus the raw tracking output it was computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub states: Vec<Vec<DialogueState>>,
    pub traces: Vec<TraceRecord>,
}

/// Track every dialogue and score the predicted states.
pub fn evaluate<P: TurnPredictor + ?Sized>(
    predictor: &P,
    dialogues: &[Dialogue],
    schema: &Schema,
    config: &TrackerConfig,
    events: &[PhenomenonEvent],
) -> Result<Evaluation> {
    let mut states = Vec::with_capacity(dialogues.len());
    let mut traces = Vec::new();
    for d in dialogues {
        let (s, t) = track_dialogue(predictor, d, schema, config)?;
        states.push(s);
        traces.extend(t);
    }
    let preds: Vec<DialogueState> = states.iter().flatten().cloned().collect();
    let golds: Vec<DialogueState> = dialogues
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.gold_state.clone()))
        .collect();
    let report = MetricsReport {
        strategy: config.strategy,
        dialogues: dialogues.len(),
        turns: golds.len(),
        jga: joint_goal_accuracy(&preds, &golds, schema)?,
        domain_jga: domain_jga(&preds, &golds, schema)?,
        slots: slot_metrics(&preds, &golds, schema)?,
        inherit: inherit_analysis(&traces, dialogues, events, schema)?,
    };
    Ok(Evaluation {
        report,
        states,
        traces,
    })
}

/// Per-slot table: accuracy, precision, recall, F1 and outcome counts.
pub fn render_slot_table(report: &MetricsReport) -> String {
    let width = report.slots.iter().map(|s| s.slot.len()).max().unwrap_or(4).max(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6} {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6} {:>6} {:>6}",
        "slot", "acc", "prec", "rec", "f1", "TP", "TN", "FP", "FN", "PLFP"
    );
    for s in &report.slots {
        let c = &s.counts;
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.2} {:>6.2} {:>6.2} {:>6.2}  {:>6} {:>6} {:>6} {:>6} {:>6}",
            s.slot,
            100.0 * s.accuracy,
            100.0 * s.precision,
            100.0 * s.recall,
            100.0 * s.f1,
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            c.plfp
        );
    }
    let _ = writeln!(out, "JGA {:.2}", 100.0 * report.jga);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: UpdateStrategy,
    pub seed: u64,
    pub jga: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub medians: BTreeMap<UpdateStrategy, f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

impl Comparison {
    pub fn from_rows(rows: Vec<ComparisonRow>) -> Self {
        let mut by: BTreeMap<UpdateStrategy, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            by.entry(r.strategy).or_default().push(r.jga);
        }
        let medians = by
            .into_iter()
            .filter_map(|(k, v)| median(&v).map(|m| (k, m)))
            .collect();
        Comparison { rows, medians }
    }

    pub fn median_of(&self, strategy: UpdateStrategy) -> Option<f64> {
        self.medians.get(&strategy).copied()
    }
}

/// Strategy comparison table: one row per (strategy, seed) and the medians.
pub fn render_comparison(c: &Comparison) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:>6} {:>8}", "strategy", "seed", "JGA");
    for r in &c.rows {
        let _ = writeln!(out, "{:<14} {:>6} {:>8.2}", r.strategy.as_str(), r.seed, 100.0 * r.jga);
    }
    let _ = writeln!(out, "{:<14} {:>6} {:>8}", "strategy", "", "median");
    for (s, m) in &c.medians {
        let _ = writeln!(out, "{:<14} {:>6} {:>8.2}", s.as_str(), "", 100.0 * m);
    }
    out
}

/// One checkpoint to score in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub strategy: UpdateStrategy,
    pub seed: u64,
    pub checkpoint: PathBuf,
}

/// Load each checkpoint, track the dialogues with its strategy and collect
/// joint goal accuracy per (strategy, seed).
pub fn compare_strategies(entries: &[CompareEntry], dialogues: &[Dialogue], schema: &Schema) -> Result<Comparison> {
    let mut rows = Vec::with_capacity(entries.len());
    for e in entries {
        if !e.checkpoint.exists() {
            return Err(DstError::Checkpoint(format!("missing checkpoint {}", e.checkpoint.display())));
        }
        let model = load_checkpoint(&e.checkpoint, schema)?;
        let config = TrackerConfig {
            strategy: e.strategy,
            max_len: model.config.encoder.max_len,
            pool_size: model.config.pool_size,
            pool_mode: model.config.pool_mode,
            noise: None,
        };
        let ev = evaluate(&model, dialogues, schema, &config, &[])?;
        rows.push(ComparisonRow {
            strategy: e.strategy,
            seed: e.seed,
            jga: ev.report.jga,
        });
    }
    Ok(Comparison::from_rows(rows))
}

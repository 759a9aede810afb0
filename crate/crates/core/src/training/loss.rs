use serde::{Deserialize, Serialize};

use crate::corpus::labels::TrainingExample;
use crate::error::{DstError, Result};
use crate::heads::HitType;
use crate::model::SlotVars;
use crate::nn::{Real, Tape, Var, LOG_FLOOR};
use crate::tracker::UpdateStrategy;

/// Weights of the type, mention and hit terms in the joint loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.6,
            beta: 0.2,
            gamma: 0.2,
        }
    }
}

/// A summed negative log-likelihood and how many of its terms hit the floor.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub clamped: usize,
}

impl LossValue {
    fn push(&mut self, p: f64, weight: f64) {
        if p < LOG_FLOOR {
            self.clamped += 1;
            self.value -= weight * LOG_FLOOR.ln();
        } else {
            self.value -= weight * p.ln();
        }
    }
}

/// Type loss over (distribution, label) pairs.
pub fn loss_type(items: &[(Vec<f64>, usize)]) -> LossValue {
    let mut out = LossValue::default();
    for (p, label) in items {
        out.push(p[*label], 1.0);
    }
    out
}

/// Mention loss over examples labeled mentioned. A label on a padded entry
/// is a configuration error.
pub fn loss_mention(items: &[(Vec<f64>, Vec<bool>, usize)]) -> Result<LossValue> {
    let mut out = LossValue::default();
    for (p, mask, label) in items {
        if !mask.get(*label).copied().unwrap_or(false) {
            return Err(DstError::Config(format!("mention label {label} points at padding")));
        }
        out.push(p[*label], 1.0);
    }
    Ok(out)
}

/// Supervision target of the hit head.
#[derive(Debug, Clone, PartialEq)]
pub enum HitTarget {
    Categorical { p: Vec<f64>, label: usize },
    Span { p_start: Vec<f64>, p_end: Vec<f64>, start: usize, end: usize },
}

pub fn loss_hit(items: &[HitTarget]) -> LossValue {
    let mut out = LossValue::default();
    for item in items {
        match item {
            HitTarget::Categorical { p, label } => out.push(p[*label], 1.0),
            HitTarget::Span { p_start, p_end, start, end } => {
                out.push(p_start[*start], 0.5);
                out.push(p_end[*end], 0.5);
            }
        }
    }
    out
}

pub fn joint_loss(l_type: f64, l_mention: f64, l_hit: f64, w: &LossWeights) -> f64 {
    w.alpha * l_type + w.beta * l_mention + w.gamma * l_hit
}

/// Component losses of one batch, as plain numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l_type: f64,
    pub l_mention: f64,
    pub l_hit: f64,
    pub joint: f64,
}

/// Collects likelihood terms recorded on a tape and combines them.
#[derive(Debug, Default)]
pub struct LossTerms {
    pub type_terms: Vec<Var>,
    pub mention_terms: Vec<Var>,
    pub hit_terms: Vec<Var>,
}

impl LossTerms {
    /// Add the terms of one turn.
    pub fn add_turn<F: Real>(
        &mut self,
        tape: &mut Tape<'_, F>,
        strategy: UpdateStrategy,
        vars: &[SlotVars],
        examples: &[TrainingExample],
    ) -> Result<()> {
        for ex in examples {
            let v = &vars[ex.slot];
            let class = strategy.class_index(ex.hit_type).ok_or_else(|| {
                DstError::Config(format!("label {} is not a class of strategy {strategy}", ex.hit_type))
            })?;
            self.type_terms.push(tape.nll(v.type_logits, 0, class, None));
            match ex.hit_type {
                HitType::Mentioned => {
                    let (scores, mask) = v.mention.as_ref().ok_or_else(|| {
                        DstError::Config("mentioned label without a pool".into())
                    })?;
                    let i = ex.mention_index.ok_or_else(|| DstError::Config("mentioned label without index".into()))?;
                    if !mask.get(i).copied().unwrap_or(false) {
                        return Err(DstError::Config(format!("mention label {i} points at padding")));
                    }
                    self.mention_terms.push(tape.nll(*scores, 0, i, Some(mask.clone())));
                }
                HitType::Hit if !ex.unmatched => {
                    if let Some(c) = ex.categorical_label {
                        self.hit_terms.push(tape.nll(v.hit_logits, 0, c, None));
                    } else if let Some((s, e)) = ex.span_label {
                        let a = tape.nll(v.hit_logits, 0, s, None);
                        let b = tape.nll(v.hit_logits, 1, e, None);
                        let sum = tape.add(a, b);
                        self.hit_terms.push(tape.scale(sum, F::of(0.5)));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Weighted joint loss variable and its component values.
    pub fn combine<F: Real>(&self, tape: &mut Tape<'_, F>, w: &LossWeights) -> (Var, LossParts) {
        let mut parts = LossParts::default();
        let mut weighted = Vec::with_capacity(3);
        for (terms, weight, slot) in [
            (&self.type_terms, w.alpha, &mut parts.l_type),
            (&self.mention_terms, w.beta, &mut parts.l_mention),
            (&self.hit_terms, w.gamma, &mut parts.l_hit),
        ] {
            if terms.is_empty() {
                continue;
            }
            let total = tape.add_all(terms);
            *slot = tape.scalar(total).as_f64();
            weighted.push(tape.scale(total, F::of(weight)));
        }
        let joint = if weighted.is_empty() {
            tape.constant(ndarray::Array2::zeros((1, 1)))
        } else {
            tape.add_all(&weighted)
        };
        parts.joint = tape.scalar(joint).as_f64();
        (joint, parts)
    }
}

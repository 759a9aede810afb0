//! Per-slot prediction heads evaluated on plain arrays: hit type, mentioned
//! value selection, categorical value and span extraction. The training path
//! records the same computations on a tape (see `model`); these functions are
//! the reference used for inference checks and tests.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};
use crate::msp::MentionedSlotPool;
use crate::nn::{argmax, masked_softmax, Real};

/// Per-slot update decision. Class order is fixed: none, dontcare,
/// mentioned, hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitType {
    None,
    #[serde(rename = "dontcare")]
    DontCare,
    Mentioned,
    Hit,
}

impl HitType {
    pub const ALL: [HitType; 4] = [
        HitType::None,
        HitType::DontCare,
        HitType::Mentioned,
        HitType::Hit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HitType::None => "none",
            HitType::DontCare => "dontcare",
            HitType::Mentioned => "mentioned",
            HitType::Hit => "hit",
        }
    }
}

impl std::fmt::Display for HitType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(DstError::DimensionMismatch { expected, actual })
    }
}

/// `softmax(W (a + b) + bias)` for `W` of shape `classes x n`.
fn affine_softmax<F: Real>(
    a: &Array1<F>,
    b: &Array1<F>,
    w: ArrayView2<'_, F>,
    bias: ArrayView1<'_, F>,
) -> Result<Vec<F>> {
    check_dim(w.ncols(), a.len())?;
    check_dim(w.ncols(), b.len())?;
    check_dim(w.nrows(), bias.len())?;
    let x = a + b;
    let logits = w.dot(&x) + bias;
    Ok(masked_softmax(&logits.to_vec(), None))
}

/// Distribution over hit-type classes. With four rows the classes are
/// none, dontcare, mentioned, hit; the three-row variant used without a
/// pool drops the mentioned class.
pub fn predict_hit_type<F: Real>(
    m_fused: &Array1<F>,
    r_cls: &Array1<F>,
    w_type: ArrayView2<'_, F>,
    b_type: ArrayView1<'_, F>,
) -> Result<Vec<F>> {
    affine_softmax(m_fused, r_cls, w_type, b_type)
}

/// Masked selection over pool entries. Returns the distribution and the
/// selected position, or `None` when every entry is padding.
pub fn select_mentioned<F: Real>(
    r_cls: &Array1<F>,
    pool: &MentionedSlotPool<F>,
    w_mention: ArrayView2<'_, F>,
) -> Result<(Vec<F>, Option<usize>)> {
    check_dim(w_mention.nrows(), r_cls.len())?;
    check_dim(w_mention.ncols(), pool.dim())?;
    if pool.is_empty() {
        return Ok((vec![F::zero(); pool.capacity()], None));
    }
    let q = r_cls.dot(&w_mention);
    let scores: Vec<F> = pool
        .entries
        .iter()
        .map(|e| q.dot(&e.representation))
        .collect();
    let probs = masked_softmax(&scores, Some(&pool.mask));
    let pick = argmax(&probs, Some(&pool.mask));
    Ok((probs, pick))
}

/// Distribution over the ontology and the most probable value.
pub fn predict_categorical<'v, F: Real>(
    m_fused: &Array1<F>,
    r_cls: &Array1<F>,
    w_hit: ArrayView2<'_, F>,
    b_hit: ArrayView1<'_, F>,
    ontology: &'v [String],
) -> Result<(Vec<F>, &'v str)> {
    if ontology.is_empty() {
        return Err(DstError::SlotKind {
            slot: String::new(),
            message: "categorical prediction needs a non-empty ontology".into(),
        });
    }
    check_dim(ontology.len(), w_hit.nrows())?;
    let probs = affine_softmax(m_fused, r_cls, w_hit, b_hit)?;
    let pick = argmax(&probs, None).unwrap_or(0);
    Ok((probs, ontology[pick].as_str()))
}

/// Start/end distributions over tokens and the decoded span.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction<F> {
    pub p_start: Vec<F>,
    pub p_end: Vec<F>,
    /// Inclusive token range, absent when the start falls after the end.
    pub span: Option<(usize, usize)>,
}

/// Token-wise start/end logits `W r_i + b` with `W` of shape `2 x n`.
pub fn predict_span<F: Real>(
    token_vectors: &Array2<F>,
    w_span: ArrayView2<'_, F>,
    b_span: ArrayView1<'_, F>,
) -> Result<SpanPrediction<F>> {
    if token_vectors.nrows() == 0 {
        return Err(DstError::EmptyTokens);
    }
    check_dim(2, w_span.nrows())?;
    check_dim(2, b_span.len())?;
    check_dim(w_span.ncols(), token_vectors.ncols())?;
    let logits = token_vectors.dot(&w_span.t()) + &b_span;
    Ok(decode_span(
        &logits.column(0).to_vec(),
        &logits.column(1).to_vec(),
    ))
}

/// Normalize per-token start and end logits and decode the span.
pub fn decode_span<F: Real>(start_logits: &[F], end_logits: &[F]) -> SpanPrediction<F> {
    let p_start = masked_softmax(start_logits, None);
    let p_end = masked_softmax(end_logits, None);
    let s = argmax(&p_start, None).unwrap_or(0);
    let e = argmax(&p_end, None).unwrap_or(0);
    SpanPrediction {
        p_start,
        p_end,
        span: (s <= e).then_some((s, e)),
    }
}

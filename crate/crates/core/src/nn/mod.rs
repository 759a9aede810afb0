//! Minimal dense-tensor reverse-mode differentiation used by the encoder and
//! the prediction heads. Everything is a 2-D array; vectors are `1 x n` rows.

mod params;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

pub use params::{Gradients, ParamEntry, ParamId, ParamStore};
pub use tape::{Tape, Var, LOG_FLOOR};

/// Floating point element type: `f32` for training, `f64` for gradient checks.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerically stable normalized exponential over the unmasked entries.
/// Masked entries get probability exactly zero; an all-masked input yields
/// all zeros.
pub fn masked_softmax<F: Real>(logits: &[F], mask: Option<&[bool]>) -> Vec<F> {
    let keep = |i: usize| mask.map_or(true, |m| m[i]);
    let mut max = F::neg_infinity();
    for (i, &x) in logits.iter().enumerate() {
        if keep(i) && x > max {
            max = x;
        }
    }
    if max == F::neg_infinity() {
        return vec![F::zero(); logits.len()];
    }
    let mut out: Vec<F> = logits
        .iter()
        .enumerate()
        .map(|(i, &x)| if keep(i) { (x - max).exp() } else { F::zero() })
        .collect();
    let total: F = out.iter().copied().sum();
    for p in &mut out {
        *p = *p / total;
    }
    out
}

/// Index of the largest entry among unmasked positions; ties go to the
/// lowest index.
pub fn argmax<F: Real>(values: &[F], mask: Option<&[bool]>) -> Option<usize> {
    let mut best: Option<(usize, F)> = None;
    for (i, &v) in values.iter().enumerate() {
        if mask.map_or(false, |m| !m[i]) {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

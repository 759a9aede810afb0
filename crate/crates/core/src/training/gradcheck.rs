use rand::seq::index::sample;
use rand::Rng;

use super::{dialogue_objective, LossWeights};
use crate::corpus::labels::TurnLabels;
use crate::error::{DstError, Result};
use crate::model::Model;
use crate::nn::ParamId;

/// Relative errors below this denominator are measured against it instead.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter name, flat index, analytic and numeric gradient of the worst
    /// coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare tape gradients of the joint loss of one dialogue with central
/// differences on `samples` randomly chosen trainable coordinates.
pub fn grad_check<R: Rng>(
    model: &Model<f64>,
    turns: &[TurnLabels],
    weights: &LossWeights,
    h: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (_, grads) = dialogue_objective(model, &model.store, turns, weights, true)?;
    let grads = grads.expect("gradients requested");
    let coords: Vec<(ParamId, usize)> = model
        .store
        .iter()
        .filter(|(_, e)| !e.frozen)
        .flat_map(|(id, e)| (0..e.value.len()).map(move |i| (id, i)))
        .collect();
    if coords.is_empty() {
        return Err(DstError::Config("no trainable parameters".into()));
    }
    let picked = sample(rng, coords.len(), samples.min(coords.len()));
    let mut store = model.store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for p in picked.iter() {
        let (id, i) = coords[p];
        let cols = store.get(id).ncols();
        let (r, c) = (i / cols, i % cols);
        let original = store.get(id)[[r, c]];
        store.get_mut(id)[[r, c]] = original + h;
        let plus = dialogue_objective(model, &store, turns, weights, false)?.0.joint;
        store.get_mut(id)[[r, c]] = original - h;
        let minus = dialogue_objective(model, &store, turns, weights, false)?.0.joint;
        store.get_mut(id)[[r, c]] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some((store.entry(id).name.clone(), i, analytic, numeric));
        }
    }
    Ok(report)
}

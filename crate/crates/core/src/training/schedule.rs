use crate::error::{DstError, Result};

/// Learning rate at `step`: linear warmup from 0 to `peak` over the first
/// `warmup * total` steps, then linear decay to 0 at `total`.
pub fn lr_at(step: usize, total: usize, peak: f64, warmup: f64) -> Result<f64> {
    if step > total {
        return Err(DstError::StepOutOfRange { step, total });
    }
    if total == 0 {
        return Ok(peak);
    }
    let w = warmup * total as f64;
    let s = step as f64;
    if s < w {
        Ok(peak * s / w)
    } else {
        Ok(peak * (total as f64 - s) / (total as f64 - w))
    }
}

//! Central finite-difference verification of [`loss_and_gradients`].

use super::{batch_loss, loss_and_gradients, Batch, ModelConfig, ModelError, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Dotted name and flat index of the worst coordinate.
    pub worst: (String, usize),
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares every parameter coordinate's analytic gradient against
/// `(L(θ+h) - L(θ-h)) / 2h`. Dropout is off.
pub fn check_gradients(
    params: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
    step: f64,
    floor: f64,
) -> Result<GradCheckReport, ModelError> {
    let (_, grads) = loss_and_gradients(params, cfg, batch, None)?;
    let names = params.names();
    let analytic: Vec<&[f64]> = grads.slots().into_iter().map(|t| t.data()).collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        coordinates: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (String::new(), 0),
    };
    let n_slots = analytic.len();
    for slot in 0..n_slots {
        let len = analytic[slot].len();
        for i in 0..len {
            let original = probe.slots()[slot].data()[i];
            probe.slots_mut()[slot].data_mut()[i] = original + step;
            let plus = batch_loss(&probe, cfg, batch)?;
            probe.slots_mut()[slot].data_mut()[i] = original - step;
            let minus = batch_loss(&probe, cfg, batch)?;
            probe.slots_mut()[slot].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[slot][i];
            let rel = relative_error(a, numeric, floor);
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (names[slot].clone(), i);
            }
        }
    }
    Ok(report)
}

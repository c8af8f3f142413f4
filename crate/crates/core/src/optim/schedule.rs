use super::OptimError;

/// Linear warmup to `peak` over `round(warmup_frac * total)` steps, then
/// linear decay to zero at `total`. Warmup is capped at `total - 1` so the
/// decay segment is never empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_frac: f64, total_steps: u64) -> Self {
        Self {
            peak,
            warmup_steps: ((warmup_frac * total_steps as f64).round() as u64).min(total_steps.saturating_sub(1)),
            total_steps,
        }
    }

    pub fn lr_at(&self, step: u64) -> Result<f64, OptimError> {
        let (w, t) = (self.warmup_steps, self.total_steps);
        if step > t {
            return Err(OptimError::StepOutOfRange { step, total: t });
        }
        if step == t {
            return Ok(0.0);
        }
        if step <= w && w > 0 {
            return Ok(self.peak * (step as f64 / w as f64));
        }
        Ok(self.peak * ((t - step) as f64 / (t - w) as f64))
    }
}

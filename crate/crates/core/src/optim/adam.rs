use super::{OptimError, TrainConfig};
use crate::model::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            weight_decay: c.weight_decay,
        }
    }
}

/// First and second moments plus the number of completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Parameters,
    pub v: Parameters,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for NaN/Inf
/// before anything is modified.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut OptimizerState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<(), OptimError> {
    let mut bad = None;
    grads.visit(&mut |name, g| {
        if bad.is_none() && !g.is_finite() {
            bad = Some(name);
        }
    });
    if let Some(name) = bad {
        return Err(OptimError::NonFiniteGradient { name });
    }
    let t = state.step + 1;
    let c1 = 1.0 - hyper.beta1.powf(t as f64);
    let c2 = 1.0 - hyper.beta2.powf(t as f64);
    let (b1, b2, eps, wd) = (hyper.beta1, hyper.beta2, hyper.epsilon, hyper.weight_decay);
    let g_slots = grads.slots();
    let m_slots = state.m.slots_mut();
    let v_slots = state.v.slots_mut();
    let p_slots = params.slots_mut();
    for (((p, g), m), v) in p_slots.into_iter().zip(g_slots).zip(m_slots).zip(v_slots) {
        let p = p.data_mut();
        let g = g.data();
        let m = m.data_mut();
        let v = v.data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            if wd > 0.0 {
                p[i] -= lr * wd * p[i];
            }
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step = t;
    Ok(())
}

/// Mean of equally weighted gradients, summed in list order.
pub fn accumulate_gradients(grads: &[Parameters]) -> Option<Parameters> {
    let (first, rest) = grads.split_first()?;
    let mut sum = first.clone();
    for g in rest {
        sum.add_scaled(g, 1.0);
    }
    let scale = 1.0 / grads.len() as f64;
    for t in sum.slots_mut() {
        t.scale(scale);
    }
    Some(sum)
}

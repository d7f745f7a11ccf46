//! AdamW with decoupled weight decay and an optional one-cycle schedule.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SonicError};
use crate::params::{GradientVector, ParamMap};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine warm-up over the first 30% of steps from `lr/25`, then
    /// cosine decay to `lr/25e4`.
    OneCycle,
}

impl Schedule {
    pub fn rate(self, peak: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => peak,
            Schedule::OneCycle => {
                let total = total.max(2);
                let warm = ((0.3 * total as f64) as usize).max(1);
                let (start, end) = (peak / 25.0, peak / 25.0 / 1e4);
                let cos = |from: f64, to: f64, frac: f64| to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
                if step < warm {
                    cos(start, peak, step as f64 / warm as f64)
                } else {
                    let frac = (step - warm) as f64 / (total - 1 - warm).max(1) as f64;
                    cos(peak, end, frac.min(1.0))
                }
            }
        }
    }
}

/// Moment estimates keyed like the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamMap,
    pub v: ParamMap,
}

impl AdamState {
    pub fn new(params: &ParamMap) -> Self {
        Self { step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One AdamW update at learning rate `lr`.
///
/// Decay is applied first (`θ ← θ(1 − lr·wd)`), then the bias-corrected
/// Adam step. Keys are visited in sorted order.
pub fn optimizer_step(
    params: &mut ParamMap,
    grads: &GradientVector,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return invalid("parameter, gradient and optimizer layouts differ");
    }
    if !(lr >= 0.0) || !(weight_decay >= 0.0) {
        return invalid(format!("bad optimizer settings lr={lr} wd={weight_decay}"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    let keys: Vec<String> = params.keys().map(str::to_string).collect();
    for key in &keys {
        let g = grads.require(key)?;
        let m = state.m.get_mut(key).unwrap();
        let v = state.v.get_mut(key).unwrap();
        let p = params.get_mut(key).unwrap();
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            let next = p[i] * (1.0 - lr * weight_decay) - lr * update;
            if !next.is_finite() {
                return Err(SonicError::NonFinite { block: key.clone(), detail: "optimizer update".into() });
            }
            p[i] = next;
        }
    }
    Ok(())
}

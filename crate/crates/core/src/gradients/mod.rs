//! Hand-written reverse mode over the fixed operator graph, plus a
//! central-difference oracle to audit it.
//!
//! Complex gradients follow `g = ∂L/∂Re z + i ∂L/∂Im z`, so for `y = h·x`
//! the partials are `g_h = g_y·conj(x)` and `g_x = g_y·conj(h)`.

mod sonic;

use serde::Serialize;

use crate::error::{invalid, Result, SonicError};
use crate::exec::Execution;
use crate::grid::Signal;
use crate::params::{GradientVector, ParamMap};
use crate::tasks::{TaskSample, Target};
use crate::train::loss::{classification_loss, combined_loss, half_squared_norm, Readout, SegmentationLoss};

/// What the network output is scored against.
#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    /// `½‖y‖²`, ignoring the target.
    HalfSquaredNorm,
    Segmentation(SegmentationLoss),
    Classification(Readout),
}

impl LossSpec {
    /// Loss of one sample and its gradient with respect to the logits.
    pub fn evaluate(&self, logits: &Signal, target: &Target) -> Result<(f64, Vec<f64>)> {
        match (self, target) {
            (LossSpec::HalfSquaredNorm, _) => Ok(half_squared_norm(logits)),
            (LossSpec::Segmentation(cfg), Target::Mask(m)) => combined_loss(logits, m, cfg),
            (LossSpec::Classification(r), Target::Label(l)) => classification_loss(logits, *l, *r),
            _ => invalid("loss does not match the sample target"),
        }
    }
}

/// Per-call switches for a forward/backward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PassOptions {
    /// Enables mode dropout.
    pub training: bool,
    pub seed: u64,
    pub exec: Execution,
}

/// Per-sample loss callback: logits in, `(loss, ∂loss/∂logits)` out.
pub type OutputGrad<'a> = dyn Fn(usize, &Signal) -> Result<(f64, Vec<f64>)> + Sync + 'a;

/// A trainable model with an analytic batch gradient.
pub trait Model: Clone + Send + Sync {
    fn params(&self) -> ParamMap;
    fn set_params(&mut self, p: &ParamMap) -> Result<()>;
    /// Inference forward pass (no dropout).
    fn forward(&self, x: &Signal) -> Result<Signal>;
    /// Per-sample losses and the gradient of their **sum**.
    fn batch_backward(
        &self,
        inputs: &[&Signal],
        out_grad: &OutputGrad<'_>,
        opts: PassOptions,
    ) -> Result<(Vec<f64>, GradientVector)>;
    /// Called after every optimizer update to restore invariants.
    fn post_step(&mut self) -> Result<()> {
        Ok(())
    }
    /// Name of the first block whose output is non-finite for `x`.
    fn locate_non_finite(&self, _x: &Signal) -> Option<String> {
        None
    }
}

fn non_finite_error<M: Model>(model: &M, batch: &[TaskSample], loss: f64) -> SonicError {
    let block = model
        .params()
        .all_finite()
        .map(str::to_string)
        .or_else(|| batch.iter().find_map(|s| model.locate_non_finite(&s.image)))
        .unwrap_or_else(|| "loss".into());
    SonicError::NonFinite { block, detail: format!("batch loss is {loss}") }
}

/// Mean batch loss and its exact gradient, dropout disabled.
pub fn loss_and_gradients<M: Model>(
    model: &M,
    batch: &[TaskSample],
    loss: &LossSpec,
) -> Result<(f64, GradientVector)> {
    loss_and_gradients_with(model, batch, loss, PassOptions::default())
}

pub fn loss_and_gradients_with<M: Model>(
    model: &M,
    batch: &[TaskSample],
    loss: &LossSpec,
    opts: PassOptions,
) -> Result<(f64, GradientVector)> {
    if batch.is_empty() {
        return invalid("batch is empty");
    }
    let inputs: Vec<&Signal> = batch.iter().map(|s| &s.image).collect();
    let scale = 1.0 / batch.len() as f64;
    let out_grad = |i: usize, y: &Signal| -> Result<(f64, Vec<f64>)> {
        let (l, mut g) = loss.evaluate(y, &batch[i].target)?;
        g.iter_mut().for_each(|v| *v *= scale);
        Ok((l, g))
    };
    let (losses, grads) = model.batch_backward(&inputs, &out_grad, opts)?;
    // gradients were scaled inside the callback; losses were not
    let mean = losses.iter().sum::<f64>() * scale;
    if !mean.is_finite() {
        return Err(non_finite_error(model, batch, mean));
    }
    if let Some(key) = grads.all_finite() {
        return Err(SonicError::NonFinite { block: key.to_string(), detail: "gradient".into() });
    }
    Ok((mean, grads))
}

/// Mean inference loss over `batch`.
pub fn batch_loss<M: Model>(model: &M, batch: &[TaskSample], loss: &LossSpec) -> Result<f64> {
    if batch.is_empty() {
        return invalid("batch is empty");
    }
    let mut total = 0.0;
    for s in batch {
        total += loss.evaluate(&model.forward(&s.image)?, &s.target)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Central differences `(L(θ+he_i) − L(θ−he_i)) / 2h`, with the step
/// scaled to `h·|θ_i|` when `|θ_i| > 1`.
pub fn finite_difference_gradients<M: Model>(
    model: &M,
    batch: &[TaskSample],
    loss: &LossSpec,
    h: f64,
) -> Result<GradientVector> {
    finite_difference_with(model, &|m: &M| batch_loss(m, batch, loss), h, Execution::default())
}

/// Central differences of an arbitrary scalar function of the model.
pub fn finite_difference_with<M: Model>(
    model: &M,
    f: &(dyn Fn(&M) -> Result<f64> + Sync),
    h: f64,
    exec: Execution,
) -> Result<GradientVector> {
    if !(h > 0.0) {
        return invalid(format!("finite-difference step must be positive, got {h}"));
    }
    let base = model.params();
    let slots: Vec<(String, usize)> =
        base.iter().flat_map(|(k, v)| (0..v.len()).map(move |i| (k.to_string(), i))).collect();
    let values = exec.map(&slots, |(key, i)| -> Result<f64> {
        let theta = base.get(key).unwrap()[*i];
        let step = if theta.abs() > 1.0 { h * theta.abs() } else { h };
        let eval = |v: f64| -> Result<f64> {
            let mut p = base.clone();
            p.get_mut(key).unwrap()[*i] = v;
            let mut m = model.clone();
            m.set_params(&p)?;
            f(&m)
        };
        Ok((eval(theta + step)? - eval(theta - step)?) / (2.0 * step))
    });
    let mut out = base.zeros_like();
    for ((key, i), v) in slots.iter().zip(values) {
        out.get_mut(key).unwrap()[*i] = v?;
    }
    Ok(out)
}

/// Error statistics of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockError {
    pub name: String,
    pub count: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub max_rel: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("block,count,max_rel_error,mean_rel_error\n");
        for b in &self.blocks {
            s.push_str(&format!("{},{},{:.6e},{:.6e}\n", b.name, b.count, b.max_rel, b.mean_rel));
        }
        s
    }

    /// Blocks whose worst error exceeds the tolerance.
    pub fn failing(&self) -> Vec<&str> {
        self.blocks.iter().filter(|b| b.max_rel >= self.tolerance).map(|b| b.name.as_str()).collect()
    }
}

/// Pass threshold on the relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Default central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// `|a − f| / max(|a|, |f|, 1e-8)` per entry, summarized per tensor.
pub fn compare_gradients(analytic: &GradientVector, numeric: &GradientVector) -> Result<GradCheckReport> {
    if !analytic.same_layout(numeric) {
        return invalid("gradient layouts differ");
    }
    let mut blocks = Vec::new();
    let mut worst: f64 = 0.0;
    for ((name, a), (_, f)) in analytic.iter().zip(numeric.iter()) {
        let errs: Vec<f64> = a
            .iter()
            .zip(f)
            .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-8))
            .collect();
        let max_rel = errs.iter().copied().fold(0.0, f64::max);
        let mean_rel = if errs.is_empty() { 0.0 } else { errs.iter().sum::<f64>() / errs.len() as f64 };
        worst = worst.max(max_rel);
        blocks.push(BlockError { name: name.to_string(), count: errs.len(), max_rel, mean_rel });
    }
    Ok(GradCheckReport { blocks, max_rel: worst, tolerance: GRADCHECK_TOLERANCE, passed: worst < GRADCHECK_TOLERANCE })
}

/// Compare the analytic gradient with central differences of step `h`.
pub fn gradient_check<M: Model>(
    model: &M,
    batch: &[TaskSample],
    loss: &LossSpec,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradients(model, batch, loss)?;
    let numeric = finite_difference_gradients(model, batch, loss, h)?;
    compare_gradients(&analytic, &numeric)
}

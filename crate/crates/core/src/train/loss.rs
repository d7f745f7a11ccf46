//! Losses with exact logit gradients, and the hard Dice metric.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Signal;

/// Mixing weights of the cross-entropy and Dice terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ce: 1.0, dice: 1.0 }
    }
}

/// Weighted cross-entropy plus soft multi-class Dice over the foreground.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationLoss {
    pub weights: LossWeights,
    /// Per-class cross-entropy weights; empty means uniform.
    pub class_weights: Vec<f64>,
    /// Additive smoothing in the soft Dice ratio. With 0, a class absent
    /// from both prediction and target scores 1.
    pub dice_smooth: f64,
}

impl Default for SegmentationLoss {
    fn default() -> Self {
        Self { weights: LossWeights::default(), class_weights: Vec::new(), dice_smooth: 1.0 }
    }
}

/// Where classification logits are averaged before the softmax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// Every pixel.
    Global,
    /// The central `r`×`r` window of a 2-D field.
    Centre(usize),
}

impl Readout {
    /// Flat pixel indices of the readout region on `dims`.
    pub fn indices(self, dims: &[usize]) -> Result<Vec<usize>> {
        let n: usize = dims.iter().product();
        match self {
            Readout::Global => Ok((0..n).collect()),
            Readout::Centre(r) => {
                if dims.len() != 2 || r == 0 || r > dims[0] || r > dims[1] {
                    return invalid(format!("centre readout {r} does not fit grid {dims:?}"));
                }
                let (i0, j0) = ((dims[0] - r) / 2, (dims[1] - r) / 2);
                Ok((i0..i0 + r).flat_map(|i| (j0..j0 + r).map(move |j| i * dims[1] + j)).collect())
            }
        }
    }
}

/// Softmax over channels at every pixel; `logits` is channel-major.
pub fn softmax_pixels(logits: &[f64], classes: usize) -> Vec<f64> {
    let n = logits.len() / classes;
    let mut p = vec![0.0; logits.len()];
    for i in 0..n {
        let max = (0..classes).map(|k| logits[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..classes {
            let e = (logits[k * n + i] - max).exp();
            p[k * n + i] = e;
            z += e;
        }
        for k in 0..classes {
            p[k * n + i] /= z;
        }
    }
    p
}

/// `p ⊙ (g − Σ_k p_k g_k)`, the softmax vector-Jacobian product.
fn softmax_backward(p: &[f64], gp: &[f64], classes: usize) -> Vec<f64> {
    let n = p.len() / classes;
    let mut gz = vec![0.0; p.len()];
    for i in 0..n {
        let dot: f64 = (0..classes).map(|k| p[k * n + i] * gp[k * n + i]).sum();
        for k in 0..classes {
            gz[k * n + i] = p[k * n + i] * (gp[k * n + i] - dot);
        }
    }
    gz
}

fn check_mask(logits: &Signal, mask: &[u8]) -> Result<(usize, usize)> {
    let (classes, n) = (logits.channels(), logits.grid().len());
    if mask.len() != n {
        return invalid(format!("mask has {} pixels, logits have {n}", mask.len()));
    }
    if let Some(bad) = mask.iter().find(|&&v| v as usize >= classes) {
        return invalid(format!("mask label {bad} outside {classes} classes"));
    }
    Ok((classes, n))
}

/// Loss and gradient with respect to the logits.
pub fn combined_loss(logits: &Signal, mask: &[u8], cfg: &SegmentationLoss) -> Result<(f64, Vec<f64>)> {
    let (classes, n) = check_mask(logits, mask)?;
    if !cfg.class_weights.is_empty() && cfg.class_weights.len() != classes {
        return invalid("class weight count does not match the logits");
    }
    let z = logits.data();
    let p = softmax_pixels(z, classes);
    let mut grad = vec![0.0; z.len()];
    let mut loss = 0.0;

    if cfg.weights.ce != 0.0 {
        let w = |c: usize| if cfg.class_weights.is_empty() { 1.0 } else { cfg.class_weights[c] };
        let total: f64 = mask.iter().map(|&t| w(t as usize)).sum();
        if total > 0.0 {
            let mut ce = 0.0;
            for (i, &t) in mask.iter().enumerate() {
                let t = t as usize;
                // log-softmax computed from logits to stay finite at large margins
                let max = (0..classes).map(|k| z[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..classes).map(|k| (z[k * n + i] - max).exp()).sum::<f64>().ln();
                ce += w(t) * (lse - z[t * n + i]);
                let scale = cfg.weights.ce * w(t) / total;
                for k in 0..classes {
                    grad[k * n + i] += scale * (p[k * n + i] - if k == t { 1.0 } else { 0.0 });
                }
            }
            loss += cfg.weights.ce * ce / total;
        }
    }

    if cfg.weights.dice != 0.0 && classes > 1 {
        let fg = (classes - 1) as f64;
        let s = cfg.dice_smooth;
        let mut gp = vec![0.0; z.len()];
        let mut mean = 0.0;
        for c in 1..classes {
            let pc = &p[c * n..(c + 1) * n];
            let (mut inter, mut psum, mut ysum) = (0.0, 0.0, 0.0);
            for (i, &t) in mask.iter().enumerate() {
                let y = if t as usize == c { 1.0 } else { 0.0 };
                inter += pc[i] * y;
                psum += pc[i];
                ysum += y;
            }
            let den = psum + ysum + s;
            if den == 0.0 {
                mean += 1.0;
                continue;
            }
            mean += (2.0 * inter + s) / den;
            let num = 2.0 * inter + s;
            for (i, &t) in mask.iter().enumerate() {
                let y = if t as usize == c { 1.0 } else { 0.0 };
                // d(1 - mean Dice)/dp
                gp[c * n + i] = -cfg.weights.dice * (2.0 * y * den - num) / (den * den) / fg;
            }
        }
        loss += cfg.weights.dice * (1.0 - mean / fg);
        for (g, d) in grad.iter_mut().zip(softmax_backward(&p, &gp, classes)) {
            *g += d;
        }
    }
    Ok((loss, grad))
}

/// Mean logit per class over the readout region.
pub fn readout_logits(logits: &Signal, readout: Readout) -> Result<Vec<f64>> {
    let idx = readout.indices(logits.grid().dims())?;
    Ok((0..logits.channels())
        .map(|k| {
            let ch = logits.channel(k);
            idx.iter().map(|&i| ch[i]).sum::<f64>() / idx.len() as f64
        })
        .collect())
}

/// Cross-entropy of the region-averaged logits against `label`.
pub fn classification_loss(logits: &Signal, label: usize, readout: Readout) -> Result<(f64, Vec<f64>)> {
    let classes = logits.channels();
    if label >= classes {
        return invalid(format!("label {label} outside {classes} classes"));
    }
    let idx = readout.indices(logits.grid().dims())?;
    let r = readout_logits(logits, readout)?;
    let p = softmax_pixels(&r, classes);
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let n = logits.grid().len();
    let mut grad = vec![0.0; classes * n];
    let inv = 1.0 / idx.len() as f64;
    for k in 0..classes {
        let g = (p[k] - if k == label { 1.0 } else { 0.0 }) * inv;
        for &i in &idx {
            grad[k * n + i] = g;
        }
    }
    Ok((lse - r[label], grad))
}

/// `½‖y‖²`.
pub fn half_squared_norm(y: &Signal) -> (f64, Vec<f64>) {
    let d = y.data();
    (0.5 * d.iter().map(|v| v * v).sum::<f64>(), d.to_vec())
}

/// Per-pixel argmax over channels.
pub fn argmax_mask(logits: &Signal) -> Vec<u8> {
    let (classes, n) = (logits.channels(), logits.grid().len());
    let d = logits.data();
    (0..n)
        .map(|i| {
            let mut best = 0;
            for k in 1..classes {
                if d[k * n + i] > d[best * n + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Hard Dice per foreground class and its mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// Overlap counts per class, so Dice can be pooled over many samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiceCounts {
    pub inter: Vec<usize>,
    pub pred: Vec<usize>,
    pub truth: Vec<usize>,
}

impl DiceCounts {
    pub fn new(num_classes: usize) -> Self {
        Self { inter: vec![0; num_classes], pred: vec![0; num_classes], truth: vec![0; num_classes] }
    }

    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return invalid("prediction and target masks differ in size");
        }
        let k = self.inter.len();
        for (&p, &t) in pred.iter().zip(truth) {
            let (p, t) = (p as usize, t as usize);
            if p >= k || t >= k {
                return invalid(format!("label outside {k} classes"));
            }
            self.pred[p] += 1;
            self.truth[t] += 1;
            if p == t {
                self.inter[p] += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> DiceReport {
        let per_class: Vec<f64> = (1..self.inter.len())
            .map(|c| {
                let den = self.pred[c] + self.truth[c];
                if den == 0 {
                    1.0
                } else {
                    2.0 * self.inter[c] as f64 / den as f64
                }
            })
            .collect();
        let mean = if per_class.is_empty() { 1.0 } else { per_class.iter().sum::<f64>() / per_class.len() as f64 };
        DiceReport { per_class, mean }
    }
}

/// `2|P∩G| / (|P|+|G|)` per foreground class, 1 when both are empty.
pub fn dice_score(pred: &[u8], truth: &[u8], num_classes: usize) -> Result<DiceReport> {
    let mut c = DiceCounts::new(num_classes);
    c.add(pred, truth)?;
    Ok(c.report())
}

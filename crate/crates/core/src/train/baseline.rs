//! Local convolution baseline: stacked 3×3 zero-padded convolutions with
//! GELU, then a pointwise head. Its receptive field grows by one pixel per
//! layer, which is exactly what the long-range task is meant to expose.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gradients::{Model, OutputGrad, PassOptions};
use crate::grid::Signal;
use crate::operator::{gelu, gelu_grad, pointwise_affine, Head};
use crate::params::{GradientVector, ParamMap};
use crate::rng::{stream, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv3 {
    pub inputs: usize,
    pub outputs: usize,
    /// `[o][i][dy][dx]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3 {
    fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let s = (2.0 / (9 * inputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: (0..outputs * inputs * 9).map(|_| s * rng.normal()).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Pre-activation on an `h`×`w` field.
    fn apply(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let n = h * w;
        let mut out = vec![0.0; self.outputs * n];
        for o in 0..self.outputs {
            let row = &mut out[o * n..(o + 1) * n];
            row.fill(self.bias[o]);
            for c in 0..self.inputs {
                let xc = &x[c * n..(c + 1) * n];
                for (t, &wt) in self.weight[(o * self.inputs + c) * 9..][..9].iter().enumerate() {
                    let (dy, dx) = (t / 3, t % 3);
                    accumulate_shifted(row, xc, h, w, dy, dx, wt);
                }
            }
        }
        out
    }
}

/// `row[i, j] += wt · x[i + dy − 1, j + dx − 1]` with zero padding.
fn accumulate_shifted(row: &mut [f64], x: &[f64], h: usize, w: usize, dy: usize, dx: usize, wt: f64) {
    let i_lo = if dy == 0 { 1 } else { 0 };
    let i_hi = if dy == 2 { h - 1 } else { h };
    let j_lo = if dx == 0 { 1 } else { 0 };
    let j_hi = if dx == 2 { w - 1 } else { w };
    for i in i_lo..i_hi {
        let src = (i + dy - 1) * w;
        for j in j_lo..j_hi {
            row[i * w + j] += wt * x[src + j + dx - 1];
        }
    }
}

/// `Σ g[i, j] · x[i + dy − 1, j + dx − 1]` over in-frame pixels.
fn shifted_dot(g: &[f64], x: &[f64], h: usize, w: usize, dy: usize, dx: usize) -> f64 {
    let i_lo = if dy == 0 { 1 } else { 0 };
    let i_hi = if dy == 2 { h - 1 } else { h };
    let j_lo = if dx == 0 { 1 } else { 0 };
    let j_hi = if dx == 2 { w - 1 } else { w };
    let mut acc = 0.0;
    for i in i_lo..i_hi {
        let src = (i + dy - 1) * w;
        for j in j_lo..j_hi {
            acc += g[i * w + j] * x[src + j + dx - 1];
        }
    }
    acc
}

/// Format tag of baseline model files.
pub const CONV_FORMAT: &str = "sonic-conv-baseline";

#[derive(Serialize, Deserialize)]
struct ConvFile {
    format: String,
    version: u32,
    model: ConvBaseline,
}

/// Stack of 3×3 convolutions plus a 1×1 head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBaseline {
    pub layers: Vec<Conv3>,
    pub head: Head,
}

impl ConvBaseline {
    pub fn init(in_channels: usize, width: usize, depth: usize, out_channels: usize, seed: u64) -> Result<Self> {
        if depth == 0 || width == 0 {
            return invalid("baseline needs at least one layer of positive width");
        }
        let mut rng = SeededRng::new(seed, stream::INIT);
        let layers = (0..depth)
            .map(|i| Conv3::init(if i == 0 { in_channels } else { width }, width, &mut rng))
            .collect();
        Ok(Self { layers, head: Head::init(width, out_channels, &mut rng) })
    }

    /// Widest baseline whose parameter count does not exceed `budget`.
    pub fn matched_width(in_channels: usize, depth: usize, out_channels: usize, budget: usize) -> usize {
        let count = |w: usize| {
            let first = 9 * in_channels * w + w;
            let rest = (depth - 1) * (9 * w * w + w);
            first + rest + w * out_channels + out_channels
        };
        (1..=4096).take_while(|&w| count(w) <= budget).last().unwrap_or(1)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv3::param_count).sum::<usize>() + self.head.weight.len() + self.head.bias.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ConvFile { format: CONV_FORMAT.into(), version: 1, model: self.clone() };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ConvFile = serde_json::from_str(text)?;
        if file.format != CONV_FORMAT || file.version != 1 {
            return invalid(format!("unsupported model file {} v{}", file.format, file.version));
        }
        let m = file.model;
        let shapes_ok = !m.layers.is_empty()
            && m.layers.iter().all(|l| l.weight.len() == l.inputs * l.outputs * 9 && l.bias.len() == l.outputs)
            && m.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && m.head.inputs == m.layers.last().unwrap().outputs
            && m.head.weight.len() == m.head.inputs * m.head.outputs
            && m.head.bias.len() == m.head.outputs;
        if !shapes_ok {
            return invalid("baseline file has inconsistent layer shapes");
        }
        Ok(m)
    }

    /// Pixels on each side that can influence one output pixel.
    pub fn receptive_radius(&self) -> usize {
        self.layers.len()
    }

    fn dims(x: &Signal) -> Result<(usize, usize)> {
        match x.grid().dims() {
            [h, w] if *h >= 2 && *w >= 2 => Ok((*h, *w)),
            d => invalid(format!("baseline needs a 2-D field, got {d:?}")),
        }
    }
}

impl Model for ConvBaseline {
    fn params(&self) -> ParamMap {
        let mut p = ParamMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            p.insert(format!("conv{i}.weight"), l.weight.clone());
            p.insert(format!("conv{i}.bias"), l.bias.clone());
        }
        p.insert("head.weight", self.head.weight.clone());
        p.insert("head.bias", self.head.bias.clone());
        p
    }

    fn set_params(&mut self, p: &ParamMap) -> Result<()> {
        if !p.same_layout(&self.params()) {
            return invalid("parameter map does not match the baseline layout");
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.weight.copy_from_slice(p.require(&format!("conv{i}.weight"))?);
            l.bias.copy_from_slice(p.require(&format!("conv{i}.bias"))?);
        }
        self.head.weight.copy_from_slice(p.require("head.weight")?);
        self.head.bias.copy_from_slice(p.require("head.bias")?);
        Ok(())
    }

    fn forward(&self, x: &Signal) -> Result<Signal> {
        let (h, w) = Self::dims(x)?;
        if x.channels() != self.layers[0].inputs {
            return invalid("input channel count does not match the baseline");
        }
        let mut act = x.data().to_vec();
        for l in &self.layers {
            act = l.apply(&act, h, w).into_iter().map(gelu).collect();
        }
        let width = self.layers.last().unwrap().outputs;
        self.head.apply(&Signal::new(width, act, x.grid().clone())?)
    }

    fn batch_backward(
        &self,
        inputs: &[&Signal],
        out_grad: &OutputGrad<'_>,
        opts: PassOptions,
    ) -> Result<(Vec<f64>, GradientVector)> {
        let per = opts.exec.map_range(inputs.len(), |b| self.sample_backward(inputs[b], b, out_grad));
        let mut losses = Vec::with_capacity(per.len());
        let mut total = self.params().zeros_like();
        for r in per {
            let (l, g) = r?;
            losses.push(l);
            total.add_scaled(&g, 1.0)?;
        }
        Ok((losses, total))
    }
}

impl ConvBaseline {
    fn sample_backward(&self, x: &Signal, index: usize, out_grad: &OutputGrad<'_>) -> Result<(f64, ParamMap)> {
        let (h, w) = Self::dims(x)?;
        let n = h * w;
        let mut acts = vec![x.data().to_vec()];
        let mut pres = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let pre = l.apply(acts.last().unwrap(), h, w);
            acts.push(pre.iter().map(|&z| gelu(z)).collect());
            pres.push(pre);
        }
        let width = self.layers.last().unwrap().outputs;
        let feat = Signal::new(width, acts.last().unwrap().clone(), x.grid().clone())?;
        let logits = self.head.apply(&feat)?;
        let (loss, gl) = out_grad(index, &logits)?;

        let mut grads = ParamMap::new();
        let head = &self.head;
        let f = feat.data();
        let mut gw = vec![0.0; head.weight.len()];
        let mut gb = vec![0.0; head.outputs];
        for o in 0..head.outputs {
            let go = &gl[o * n..(o + 1) * n];
            gb[o] = go.iter().sum();
            for i in 0..head.inputs {
                gw[o * head.inputs + i] = go.iter().zip(&f[i * n..(i + 1) * n]).map(|(a, b)| a * b).sum();
            }
        }
        grads.insert("head.weight", gw);
        grads.insert("head.bias", gb);
        let wt: Vec<f64> = (0..head.inputs * head.outputs)
            .map(|j| head.weight[(j % head.outputs) * head.inputs + j / head.outputs])
            .collect();
        let mut g = vec![0.0; head.inputs * n];
        pointwise_affine(&wt, None, head.outputs, &gl, &mut g, n);

        for (li, l) in self.layers.iter().enumerate().rev() {
            let gz: Vec<f64> = g.iter().zip(&pres[li]).map(|(a, z)| a * gelu_grad(*z)).collect();
            let xin = &acts[li];
            let mut gw = vec![0.0; l.weight.len()];
            let mut gb = vec![0.0; l.outputs];
            let mut gx = vec![0.0; l.inputs * n];
            for o in 0..l.outputs {
                let go = &gz[o * n..(o + 1) * n];
                gb[o] = go.iter().sum();
                for c in 0..l.inputs {
                    let xc = &xin[c * n..(c + 1) * n];
                    for t in 0..9 {
                        let (dy, dx) = (t / 3, t % 3);
                        let idx = (o * l.inputs + c) * 9 + t;
                        gw[idx] = shifted_dot(go, xc, h, w, dy, dx);
                        // transpose: shift the gradient back the other way
                        accumulate_shifted(&mut gx[c * n..(c + 1) * n], go, h, w, 2 - dy, 2 - dx, l.weight[idx]);
                    }
                }
            }
            grads.insert(format!("conv{li}.weight"), gw);
            grads.insert(format!("conv{li}.bias"), gb);
            g = gx;
        }
        Ok((loss, grads))
    }
}

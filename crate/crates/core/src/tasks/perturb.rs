//! Inference-time geometric and photometric perturbations.
//!
//! Every transform is a backward map: each output pixel looks up a source
//! location. Images sample bilinearly, masks take the nearest label, and
//! anything that falls outside the frame becomes zero.

use serde::{Deserialize, Serialize};

use super::{TaskSample, Target, IMAGE_CHANNELS};
use crate::error::{invalid, Result};
use crate::grid::Signal;
use crate::rng::{stream, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Rescale,
    Rotate,
    Translate,
    Distort,
    Noise,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::Rescale,
        PerturbationKind::Rotate,
        PerturbationKind::Translate,
        PerturbationKind::Distort,
        PerturbationKind::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::Rescale => "rescale",
            PerturbationKind::Rotate => "rotate",
            PerturbationKind::Translate => "translate",
            PerturbationKind::Distort => "distort",
            PerturbationKind::Noise => "noise",
        }
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = crate::SonicError;

    fn from_str(s: &str) -> Result<Self> {
        PerturbationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .map_or_else(|| invalid(format!("unknown perturbation '{s}'")), Ok)
    }
}

/// Three severities per kind: scale factor, degrees, fraction of the side,
/// pixel amplitude, noise σ.
pub const SEVERITY_GRID: [(PerturbationKind, [f64; 3]); 5] = [
    (PerturbationKind::Rescale, [0.75, 1.0, 1.5]),
    (PerturbationKind::Rotate, [15.0, 30.0, 45.0]),
    (PerturbationKind::Translate, [0.10, 0.20, 0.30]),
    (PerturbationKind::Distort, [2.0, 4.0, 6.0]),
    (PerturbationKind::Noise, [0.1, 0.2, 0.3]),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub level: f64,
}

impl Perturbation {
    pub fn new(kind: PerturbationKind, level: f64) -> Result<Self> {
        let p = Self { kind, level };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.level;
        let ok = l.is_finite()
            && match self.kind {
                PerturbationKind::Rescale => l > 0.0 && l <= 4.0,
                PerturbationKind::Rotate => l.abs() <= 360.0,
                PerturbationKind::Translate => (0.0..1.0).contains(&l),
                PerturbationKind::Distort => (0.0..=64.0).contains(&l),
                PerturbationKind::Noise => (0.0..=1.0).contains(&l),
            };
        if ok {
            Ok(())
        } else {
            invalid(format!("{} level {l} out of range", self.kind.name()))
        }
    }
}

fn bilinear(ch: &[f64], size: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |i: f64, j: f64| -> f64 {
        if i < 0.0 || j < 0.0 || i >= size as f64 || j >= size as f64 {
            0.0
        } else {
            ch[i as usize * size + j as usize]
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    if fy == 0.0 {
        top
    } else {
        top * (1.0 - fy) + bottom * fy
    }
}

fn nearest(mask: &[u8], size: usize, y: f64, x: f64) -> u8 {
    let (i, j) = (y.round(), x.round());
    if i < 0.0 || j < 0.0 || i >= size as f64 || j >= size as f64 {
        0
    } else {
        mask[i as usize * size + j as usize]
    }
}

/// Resample `sample` through the backward map `src(i, j) -> (y, x)`.
fn warp(sample: &TaskSample, src: impl Fn(usize, usize) -> (f64, f64)) -> Result<TaskSample> {
    let size = sample.size();
    let n = size * size;
    let coords: Vec<(f64, f64)> = (0..n).map(|idx| src(idx / size, idx % size)).collect();
    let mut img = vec![0.0; IMAGE_CHANNELS * n];
    for c in 0..IMAGE_CHANNELS {
        let ch = sample.image.channel(c);
        for (idx, &(y, x)) in coords.iter().enumerate() {
            img[c * n + idx] = bilinear(ch, size, y, x).clamp(0.0, 1.0);
        }
    }
    let target = match &sample.target {
        Target::Mask(m) => Target::Mask(coords.iter().map(|&(y, x)| nearest(m, size, y, x)).collect()),
        t => t.clone(),
    };
    let image = Signal::new(IMAGE_CHANNELS, img, sample.image.grid().clone())?;
    Ok(TaskSample { image, target, ..sample.clone() })
}

/// Resize a square image to `to`×`to` with edge-clamped bilinear sampling,
/// pixel centres aligned.
fn resize_channel(ch: &[f64], from: usize, to: usize) -> Vec<f64> {
    let r = from as f64 / to as f64;
    let last = (from - 1) as f64;
    (0..to * to)
        .map(|idx| {
            let y = (((idx / to) as f64 + 0.5) * r - 0.5).clamp(0.0, last);
            let x = (((idx % to) as f64 + 0.5) * r - 0.5).clamp(0.0, last);
            bilinear(ch, from, y, x)
        })
        .collect()
}

fn resize_mask(m: &[u8], from: usize, to: usize) -> Vec<u8> {
    let r = from as f64 / to as f64;
    (0..to * to)
        .map(|idx| {
            let i = (((idx / to) as f64 + 0.5) * r).floor().min((from - 1) as f64) as usize;
            let j = (((idx % to) as f64 + 0.5) * r).floor().min((from - 1) as f64) as usize;
            m[i * from + j]
        })
        .collect()
}

fn rescale(sample: &TaskSample, factor: f64) -> Result<TaskSample> {
    let size = sample.size();
    let mid = ((size as f64 * factor).round() as usize).max(2);
    let n = size * size;
    let mut img = Vec::with_capacity(IMAGE_CHANNELS * n);
    for c in 0..IMAGE_CHANNELS {
        let small = resize_channel(sample.image.channel(c), size, mid);
        img.extend(resize_channel(&small, mid, size));
    }
    let target = match &sample.target {
        Target::Mask(m) => Target::Mask(resize_mask(&resize_mask(m, size, mid), mid, size)),
        t => t.clone(),
    };
    let image = Signal::new(IMAGE_CHANNELS, img, sample.image.grid().clone())?;
    Ok(TaskSample { image, target, ..sample.clone() })
}

fn translate(sample: &TaskSample, fraction: f64) -> Result<TaskSample> {
    let size = sample.size();
    let shift = (fraction * size as f64).floor();
    // integer shift: bilinear and nearest both hit pixel centres exactly
    warp(sample, |i, j| (i as f64 - shift, j as f64 - shift))
}

fn rotate(sample: &TaskSample, degrees: f64) -> Result<TaskSample> {
    let c = (sample.size() as f64 - 1.0) / 2.0;
    let (s, co) = degrees.to_radians().sin_cos();
    warp(sample, |i, j| {
        let (dy, dx) = (i as f64 - c, j as f64 - c);
        (c - s * dx + co * dy, c + co * dx + s * dy)
    })
}

fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * (2.0 * p[1]
        + (-p[0] + p[2]) * t
        + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * t2
        + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * t3)
}

const CONTROL: usize = 4;

/// Bicubic (Catmull-Rom, edge-clamped) interpolation of a 4×4 control grid
/// spanning the image corners.
fn upsample_field(ctrl: &[f64], size: usize) -> Vec<f64> {
    let at = |i: isize, j: isize| -> f64 {
        let c = |v: isize| v.clamp(0, CONTROL as isize - 1) as usize;
        ctrl[c(i) * CONTROL + c(j)]
    };
    let scale = (CONTROL - 1) as f64 / (size - 1).max(1) as f64;
    (0..size * size)
        .map(|idx| {
            let u = (idx / size) as f64 * scale;
            let v = (idx % size) as f64 * scale;
            let (i0, j0) = (u.floor().min((CONTROL - 2) as f64), v.floor().min((CONTROL - 2) as f64));
            let (fu, fv) = (u - i0, v - j0);
            let (i0, j0) = (i0 as isize, j0 as isize);
            let rows: [f64; 4] = std::array::from_fn(|a| {
                let i = i0 - 1 + a as isize;
                catmull_rom(std::array::from_fn(|b| at(i, j0 - 1 + b as isize)), fv)
            });
            catmull_rom(rows, fu)
        })
        .collect()
}

fn distort(sample: &TaskSample, amplitude: f64, seed: u64) -> Result<TaskSample> {
    let size = sample.size();
    let mut rng = SeededRng::derive(seed, stream::PERTURB, 3);
    let mut draw = || (0..CONTROL * CONTROL).map(|_| amplitude * rng.normal()).collect::<Vec<_>>();
    let (cy, cx) = (draw(), draw());
    let (dy, dx) = (upsample_field(&cy, size), upsample_field(&cx, size));
    warp(sample, |i, j| {
        let k = i * size + j;
        (i as f64 + dy[k], j as f64 + dx[k])
    })
}

fn noise(sample: &TaskSample, sigma: f64, seed: u64) -> Result<TaskSample> {
    if sigma == 0.0 {
        return Ok(sample.clone());
    }
    let mut rng = SeededRng::derive(seed, stream::PERTURB, 4);
    let data = sample.image.data().iter().map(|v| (v + sigma * rng.normal()).clamp(0.0, 1.0)).collect();
    let image = Signal::new(IMAGE_CHANNELS, data, sample.image.grid().clone())?;
    Ok(TaskSample { image, ..sample.clone() })
}

/// Apply one perturbation. Labels pass through; masks move with the pixels.
pub fn apply_perturbation(sample: &TaskSample, p: Perturbation, seed: u64) -> Result<TaskSample> {
    p.validate()?;
    match p.kind {
        PerturbationKind::Rescale => rescale(sample, p.level),
        PerturbationKind::Rotate => rotate(sample, p.level),
        PerturbationKind::Translate => translate(sample, p.level),
        PerturbationKind::Distort => distort(sample, p.level, seed),
        PerturbationKind::Noise => noise(sample, p.level, seed),
    }
}

/// All five kinds at severity `tier` (0..3), in the order rescale, rotate,
/// translate, distort, noise.
pub fn apply_combined(sample: &TaskSample, tier: usize, seed: u64) -> Result<TaskSample> {
    if tier >= 3 {
        return invalid(format!("severity tier must be 0, 1 or 2, got {tier}"));
    }
    let mut out = sample.clone();
    for (kind, levels) in SEVERITY_GRID {
        out = apply_perturbation(&out, Perturbation::new(kind, levels[tier])?, seed)?;
    }
    Ok(out)
}

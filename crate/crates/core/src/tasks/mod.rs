//! Seeded synthetic benchmarks.
//!
//! SynthShape is a segmentation task: a handful of non-overlapping
//! primitives on a black background, one class per primitive type.
//! HalliGalli is a classification task: four corner shapes, exactly one
//! type appears twice, and the label names that type. The central patch
//! is noise and carries no signal.

mod io;
mod perturb;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{FrequencyGrid, Signal};
use crate::rng::{stream, SeededRng};

pub use io::{read_samples, write_samples, write_mask_pgm};
pub use perturb::{apply_perturbation, apply_combined, Perturbation, PerturbationKind, SEVERITY_GRID};

/// Image channels of every generated sample.
pub const IMAGE_CHANNELS: usize = 3;
/// Background plus five primitive classes.
pub const SEGMENTATION_CLASSES: usize = 6;
pub const HALLIGALLI_CLASSES: usize = 3;
/// Side of the noise patch at the HalliGalli centre.
pub const HALLIGALLI_PATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    SynthShape,
    HalliGalli,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SynthShape => "synthshape",
            TaskKind::HalliGalli => "halligalli",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            TaskKind::SynthShape => SEGMENTATION_CLASSES,
            TaskKind::HalliGalli => HALLIGALLI_CLASSES,
        }
    }

    pub fn min_size(self) -> usize {
        match self {
            TaskKind::SynthShape => 16,
            TaskKind::HalliGalli => 32,
        }
    }

    pub fn generate(self, seed: u64, size: usize) -> Result<TaskSample> {
        match self {
            TaskKind::SynthShape => gen_synthshape(seed, size),
            TaskKind::HalliGalli => gen_halligalli(seed, size),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = crate::SonicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthshape" => Ok(TaskKind::SynthShape),
            "halligalli" => Ok(TaskKind::HalliGalli),
            other => invalid(format!("unknown task '{other}' (expected synthshape or halligalli)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Circle = 1,
    Square = 2,
    Triangle = 3,
    Cross = 4,
    Star = 5,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] =
        [ShapeClass::Circle, ShapeClass::Square, ShapeClass::Triangle, ShapeClass::Cross, ShapeClass::Star];

    pub fn id(self) -> u8 {
        self as u8
    }

    fn base_color(self) -> [f64; 3] {
        match self {
            ShapeClass::Circle => [0.90, 0.20, 0.20],
            ShapeClass::Square => [0.20, 0.80, 0.25],
            ShapeClass::Triangle => [0.20, 0.35, 0.90],
            ShapeClass::Cross => [0.90, 0.85, 0.20],
            ShapeClass::Star => [0.80, 0.25, 0.85],
        }
    }
}

/// One drawn primitive, in pixel coordinates (pixel centres at `i + 0.5`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub class: ShapeClass,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub angle: f64,
    pub color: [f64; 3],
}

impl Primitive {
    /// Whether the point `(x, y)` lies inside the shape.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        if dx * dx + dy * dy > self.radius * self.radius {
            return false;
        }
        let (s, c) = self.angle.sin_cos();
        // rotate into the shape frame
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let r = self.radius;
        match self.class {
            ShapeClass::Circle => true,
            ShapeClass::Square => lx.abs() <= 0.7 * r && ly.abs() <= 0.7 * r,
            ShapeClass::Cross => {
                let arm = 0.3 * r;
                (lx.abs() <= arm && ly.abs() <= 0.95 * r) || (ly.abs() <= arm && lx.abs() <= 0.95 * r)
            }
            ShapeClass::Triangle => in_polygon(lx, ly, &regular_polygon(3, r, r)),
            ShapeClass::Star => in_polygon(lx, ly, &regular_polygon(5, r, 0.45 * r)),
        }
    }
}

/// `n`-fold polygon alternating outer radius `r` and inner radius `inner`;
/// `inner == r` gives a plain regular polygon.
fn regular_polygon(n: usize, r: f64, inner: f64) -> Vec<(f64, f64)> {
    let star = inner != r;
    let count = if star { 2 * n } else { n };
    (0..count)
        .map(|k| {
            let theta = -std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            let rad = if star && k % 2 == 1 { inner } else { r };
            (rad * theta.cos(), rad * theta.sin())
        })
        .collect()
}

fn in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Class mask of `shapes` on a `size`×`size` grid; later shapes win.
pub fn rasterize(shapes: &[Primitive], size: usize) -> Vec<u8> {
    let mut mask = vec![0u8; size * size];
    for (idx, m) in mask.iter_mut().enumerate() {
        let (x, y) = ((idx % size) as f64 + 0.5, (idx / size) as f64 + 0.5);
        for s in shapes {
            if s.contains(x, y) {
                *m = s.class.id();
            }
        }
    }
    mask
}

fn paint(shapes: &[Primitive], size: usize) -> Vec<f64> {
    let n = size * size;
    let mut img = vec![0.0; IMAGE_CHANNELS * n];
    for idx in 0..n {
        let (x, y) = ((idx % size) as f64 + 0.5, (idx / size) as f64 + 0.5);
        for s in shapes {
            if s.contains(x, y) {
                for c in 0..IMAGE_CHANNELS {
                    img[c * n + idx] = s.color[c];
                }
            }
        }
    }
    img
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Mask(Vec<u8>),
    Label(usize),
}

/// A generated image with its segmentation mask or class label.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample {
    /// 3 channels in `[0, 1]` on a unit-extent grid.
    pub image: Signal,
    pub target: Target,
    pub seed: u64,
    pub kind: TaskKind,
    /// Primitives as drawn, before any perturbation.
    pub shapes: Vec<Primitive>,
}

impl TaskSample {
    pub fn size(&self) -> usize {
        self.image.grid().dims()[0]
    }

    pub fn mask(&self) -> Option<&[u8]> {
        match &self.target {
            Target::Mask(m) => Some(m),
            Target::Label(_) => None,
        }
    }

    pub fn label(&self) -> Option<usize> {
        match self.target {
            Target::Label(l) => Some(l),
            Target::Mask(_) => None,
        }
    }

    /// Keep only the first `channels` image channels.
    pub fn with_channels(&self, channels: usize) -> Result<TaskSample> {
        if channels == 0 || channels > self.image.channels() {
            return invalid(format!("cannot keep {channels} of {} channels", self.image.channels()));
        }
        let n = self.image.grid().len();
        let image = Signal::new(channels, self.image.data()[..channels * n].to_vec(), self.image.grid().clone())?;
        Ok(TaskSample { image, ..self.clone() })
    }
}

fn image_grid(size: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::unit_extent(&[size, size])
}

fn perturbed_color(class: ShapeClass, rng: &mut SeededRng) -> [f64; 3] {
    let base = class.base_color();
    std::array::from_fn(|c| (base[c] + rng.uniform_range(-COLOR_JITTER, COLOR_JITTER)).clamp(0.0, 1.0))
}

/// Half-width of the uniform per-channel colour jitter.
pub const COLOR_JITTER: f64 = 0.08;
const PLACEMENT_TRIES: usize = 200;

/// 2–6 non-overlapping primitives of random class, position, size and
/// orientation. If placement keeps colliding the sample has fewer shapes.
pub fn gen_synthshape(seed: u64, size: usize) -> Result<TaskSample> {
    if size < TaskKind::SynthShape.min_size() {
        return invalid(format!("synthshape needs size >= 16, got {size}"));
    }
    let mut rng = SeededRng::new(seed, stream::SYNTHSHAPE);
    let target_count = rng.int_range(2, 7);
    let s = size as f64;
    let mut shapes: Vec<Primitive> = Vec::with_capacity(target_count);
    for _ in 0..target_count {
        let class = ShapeClass::ALL[rng.int_range(0, 5)];
        let color = perturbed_color(class, &mut rng);
        let angle = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
        for _ in 0..PLACEMENT_TRIES {
            let radius = rng.uniform_range(0.10 * s, 0.20 * s);
            let cx = rng.uniform_range(radius, s - radius);
            let cy = rng.uniform_range(radius, s - radius);
            // bounding circles plus a one-pixel gap
            let clear = shapes.iter().all(|o| {
                let d = ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt();
                d > o.radius + radius + 1.0
            });
            if clear {
                shapes.push(Primitive { class, cx, cy, radius, angle, color });
                break;
            }
        }
    }
    let image = Signal::new(IMAGE_CHANNELS, paint(&shapes, size), image_grid(size)?)?;
    let mask = rasterize(&shapes, size);
    Ok(TaskSample { image, target: Target::Mask(mask), seed, kind: TaskKind::SynthShape, shapes })
}

/// The three-shape HalliGalli vocabulary, indexed by label.
pub const HALLIGALLI_SHAPES: [ShapeClass; 3] = [ShapeClass::Circle, ShapeClass::Square, ShapeClass::Triangle];

/// Label of a corner assignment: the vocabulary index of the type that
/// appears exactly twice, when exactly one does.
pub fn halligalli_label(corners: &[ShapeClass; 4]) -> Option<usize> {
    let counts: Vec<usize> =
        HALLIGALLI_SHAPES.iter().map(|s| corners.iter().filter(|c| *c == s).count()).collect();
    let pairs: Vec<usize> = (0..3).filter(|&i| counts[i] == 2).collect();
    match pairs.as_slice() {
        [i] => Some(*i),
        _ => None,
    }
}

/// Four equal-size corner shapes `{X, X, Y, Z}` in random corner order and
/// an 8×8 uniform-noise patch in the centre. Label = index of `X`.
pub fn gen_halligalli(seed: u64, size: usize) -> Result<TaskSample> {
    if size < TaskKind::HalliGalli.min_size() {
        return invalid(format!("halligalli needs size >= 32, got {size}"));
    }
    let mut rng = SeededRng::new(seed, stream::HALLIGALLI);
    let label = rng.int_range(0, 3);
    let others: Vec<usize> = (0..3).filter(|&i| i != label).collect();
    let mut corners = [label, label, others[0], others[1]].map(|i| HALLIGALLI_SHAPES[i]);
    rng.shuffle(&mut corners);

    let s = size as f64;
    let radius = 0.1 * s;
    let near = 0.17 * s;
    let far = s - near;
    let centres = [(near, near), (far, near), (near, far), (far, far)];
    let shapes: Vec<Primitive> = corners
        .iter()
        .zip(centres)
        .map(|(&class, (cx, cy))| {
            let jx = rng.uniform_range(-1.0, 1.0);
            let jy = rng.uniform_range(-1.0, 1.0);
            let angle = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
            let color = perturbed_color(class, &mut rng);
            Primitive { class, cx: cx + jx, cy: cy + jy, radius, angle, color }
        })
        .collect();
    let mut img = paint(&shapes, size);

    // the noise patch draws from its own stream so corners and centre are independent
    let mut noise = SeededRng::derive(seed, stream::HALLIGALLI, 1);
    let n = size * size;
    let lo = (size - HALLIGALLI_PATCH) / 2;
    for c in 0..IMAGE_CHANNELS {
        for i in lo..lo + HALLIGALLI_PATCH {
            for j in lo..lo + HALLIGALLI_PATCH {
                img[c * n + i * size + j] = noise.uniform();
            }
        }
    }
    debug_assert_eq!(halligalli_label(&corners), Some(label));
    let image = Signal::new(IMAGE_CHANNELS, img, image_grid(size)?)?;
    Ok(TaskSample { image, target: Target::Label(label), seed, kind: TaskKind::HalliGalli, shapes })
}

#[cfg(test)]
mod tests;

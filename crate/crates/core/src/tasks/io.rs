//! Flat little-endian dataset files.
//!
//! Layout: magic `SONICDS1`, then u32 kind (0 synthshape, 1 halligalli),
//! count, channels, height, width. Each record is a u64 seed, the image as
//! f32 (channel-major) and the target as f32: a full mask or one label.

use std::io::{Read, Write};
use std::path::Path;

use super::{TaskKind, TaskSample, Target, IMAGE_CHANNELS};
use crate::error::{invalid, Result};
use crate::grid::{FrequencyGrid, Signal};

const MAGIC: &[u8; 8] = b"SONICDS1";

pub fn write_samples(path: &Path, samples: &[TaskSample]) -> Result<()> {
    let Some(first) = samples.first() else {
        return invalid("no samples to write");
    };
    let size = first.size();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let kind = match first.kind {
        TaskKind::SynthShape => 0u32,
        TaskKind::HalliGalli => 1,
    };
    for v in [kind, samples.len() as u32, IMAGE_CHANNELS as u32, size as u32, size as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in samples {
        if s.kind != first.kind || s.size() != size {
            return invalid("all samples in a file must share kind and size");
        }
        buf.extend_from_slice(&s.seed.to_le_bytes());
        for v in s.image.data() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        match &s.target {
            Target::Mask(m) => m.iter().for_each(|v| buf.extend_from_slice(&(*v as f32).to_le_bytes())),
            Target::Label(l) => buf.extend_from_slice(&(*l as f32).to_le_bytes()),
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Read a dataset file. Images come back at f32 precision and without
/// the primitive list.
pub fn read_samples(path: &Path) -> Result<Vec<TaskSample>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 28 || &bytes[..8] != MAGIC {
        return invalid(format!("{} is not a sample file", path.display()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (kind, count, channels, h, w) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20), u32_at(24));
    let kind = match kind {
        0 => TaskKind::SynthShape,
        1 => TaskKind::HalliGalli,
        k => return invalid(format!("unknown kind tag {k}")),
    };
    let target_len = if kind == TaskKind::SynthShape { h * w } else { 1 };
    let record = 8 + 4 * (channels * h * w + target_len);
    if channels != IMAGE_CHANNELS || h != w || bytes.len() != 28 + count * record {
        return invalid("sample file header does not match its length");
    }
    let grid = FrequencyGrid::unit_extent(&[h, w])?;
    let mut out = Vec::with_capacity(count);
    for r in 0..count {
        let base = 28 + r * record;
        let seed = u64::from_le_bytes(bytes[base..base + 8].try_into().unwrap());
        let f = |i: usize| {
            let o = base + 8 + 4 * i;
            f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap())
        };
        let n_img = channels * h * w;
        let image = Signal::new(channels, (0..n_img).map(|i| f(i) as f64).collect(), grid.clone())?;
        let target = match kind {
            TaskKind::SynthShape => Target::Mask((0..h * w).map(|i| f(n_img + i) as u8).collect()),
            TaskKind::HalliGalli => Target::Label(f(n_img) as usize),
        };
        out.push(TaskSample { image, target, seed, kind, shapes: Vec::new() });
    }
    Ok(out)
}

/// Binary PGM of a label mask, labels spread over 0..255 for viewing.
pub fn write_mask_pgm(path: &Path, mask: &[u8], width: usize, height: usize, classes: usize) -> Result<()> {
    if mask.len() != width * height {
        return invalid("mask size does not match the given shape");
    }
    let step = 255 / (classes.max(2) - 1);
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend(mask.iter().map(|&v| (v as usize * step).min(255) as u8));
    std::fs::write(path, buf)?;
    Ok(())
}

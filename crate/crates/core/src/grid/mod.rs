//! Discretization: frequency lattices, real signals, half spectra and the
//! transforms between them.

mod fft;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SonicError};
use crate::rng::{stream, SeededRng};

pub(crate) use fft::{complex_nd, plans_for};

/// Variance floor for [`standardize_input`].
pub const STD_FLOOR: f64 = 1e-6;

/// Angular DFT frequencies of a uniformly sampled box.
///
/// `freqs[d][i]` is `2π k / (N_d Δ_d)` where `k = i` for `i < ⌈N_d/2⌉` and
/// `k = i - N_d` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    dims: Vec<usize>,
    spacings: Vec<f64>,
    #[serde(skip)]
    freqs: Vec<Vec<f64>>,
}

impl FrequencyGrid {
    pub fn new(dims: &[usize], spacings: &[f64]) -> Result<Self> {
        if dims.is_empty() {
            return invalid("grid needs at least one axis");
        }
        if dims.len() != spacings.len() {
            return invalid(format!(
                "{} dims but {} spacings",
                dims.len(),
                spacings.len()
            ));
        }
        if let Some(d) = dims.iter().find(|&&d| d == 0) {
            return invalid(format!("dimension must be positive, got {d}"));
        }
        if let Some(s) = spacings.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return invalid(format!("spacing must be positive and finite, got {s}"));
        }
        let freqs = dims
            .iter()
            .zip(spacings)
            .map(|(&n, &delta)| axis_frequencies(n, delta))
            .collect();
        Ok(Self { dims: dims.to_vec(), spacings: spacings.to_vec(), freqs })
    }

    /// Unit spacing along every axis.
    pub fn unit(dims: &[usize]) -> Result<Self> {
        Self::new(dims, &vec![1.0; dims.len()])
    }

    /// Grid covering a box of physical extent 1 along every axis.
    pub fn unit_extent(dims: &[usize]) -> Result<Self> {
        let spacings: Vec<f64> = dims.iter().map(|&n| 1.0 / n.max(1) as f64).collect();
        Self::new(dims, &spacings)
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn freqs(&self, axis: usize) -> &[f64] {
        &self.freqs[axis]
    }

    /// Total number of samples `N = Π N_d`.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Shape of the half spectrum (last axis reduced to `N_D/2 + 1`).
    pub fn half_dims(&self) -> Vec<usize> {
        let mut h = self.dims.clone();
        let last = h.last_mut().unwrap();
        *last = *last / 2 + 1;
        h
    }

    pub fn half_len(&self) -> usize {
        self.half_dims().iter().product()
    }

    /// Length of one half-spectrum row (the reduced last axis).
    pub fn half_row_len(&self) -> usize {
        self.dims[self.ndim() - 1] / 2 + 1
    }

    /// Number of half-spectrum rows, i.e. `half_len / half_row_len`.
    pub fn half_rows(&self) -> usize {
        self.dims[..self.ndim() - 1].iter().product()
    }

    /// Frequency vector at a flat half-spectrum index.
    pub fn half_frequency(&self, index: usize, omega: &mut [f64]) {
        let hd = self.half_dims();
        let mut rem = index;
        for axis in (0..self.ndim()).rev() {
            let i = rem % hd[axis];
            rem /= hd[axis];
            omega[axis] = self.freqs[axis][i];
        }
    }

    /// Multiplicity of a half-spectrum bin in the full spectrum: 1 for the
    /// self-conjugate columns (0 and, for even lengths, `N_D/2`), else 2.
    pub fn half_weight(&self, index: usize) -> f64 {
        let n = self.dims[self.ndim() - 1];
        let i = index % self.half_row_len();
        if i == 0 || 2 * i == n {
            1.0
        } else {
            2.0
        }
    }

    /// Half-spectrum weights for every bin.
    pub fn half_weights(&self) -> Vec<f64> {
        (0..self.half_len()).map(|i| self.half_weight(i)).collect()
    }

    /// Restores derived state after deserialization.
    pub fn rebuild(self) -> Result<Self> {
        Self::new(&self.dims, &self.spacings)
    }
}

fn axis_frequencies(n: usize, delta: f64) -> Vec<f64> {
    let positive = n.div_ceil(2);
    let extent = n as f64 * delta;
    (0..n)
        .map(|i| {
            let k = if i < positive { i as f64 } else { i as f64 - n as f64 };
            2.0 * PI * k / extent
        })
        .collect()
}

/// Real multichannel field, channel-major then row-major over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    channels: usize,
    data: Vec<f64>,
    grid: FrequencyGrid,
}

impl Signal {
    pub fn new(channels: usize, data: Vec<f64>, grid: FrequencyGrid) -> Result<Self> {
        if channels == 0 {
            return invalid("signal needs at least one channel");
        }
        if data.len() != channels * grid.len() {
            return invalid(format!(
                "signal data has {} values, expected {} x {}",
                data.len(),
                channels,
                grid.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SonicError::NonFinite {
                block: "signal".into(),
                detail: format!("entry {i} is {}", data[i]),
            });
        }
        Ok(Self { channels, data, grid })
    }

    pub fn zeros(channels: usize, grid: FrequencyGrid) -> Self {
        let data = vec![0.0; channels * grid.len()];
        Self { channels, data, grid }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Half spectrum of a real signal (see [`FrequencyGrid::half_dims`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    channels: usize,
    data: Vec<Complex64>,
    grid: FrequencyGrid,
}

impl Spectrum {
    pub fn new(channels: usize, data: Vec<Complex64>, grid: FrequencyGrid) -> Result<Self> {
        if channels == 0 {
            return invalid("spectrum needs at least one channel");
        }
        if data.len() != channels * grid.half_len() {
            return invalid(format!(
                "spectrum has {} bins, expected {} x {}",
                data.len(),
                channels,
                grid.half_len()
            ));
        }
        Ok(Self { channels, data, grid })
    }

    pub fn zeros(channels: usize, grid: FrequencyGrid) -> Self {
        let data = vec![Complex64::new(0.0, 0.0); channels * grid.half_len()];
        Self { channels, data, grid }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.grid.half_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.half_len();
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Unnormalized forward DFT of every channel, stored as a half spectrum.
pub fn dft_forward(x: &Signal) -> Spectrum {
    let plan = plans_for(x.grid.dims());
    let h = x.grid.half_len();
    let mut data = vec![Complex64::new(0.0, 0.0); x.channels * h];
    for (c, out) in data.chunks_exact_mut(h).enumerate() {
        plan.forward(x.channel(c), out);
    }
    Spectrum { channels: x.channels, data, grid: x.grid.clone() }
}

/// Inverse DFT with `1/N` normalization.
pub fn dft_inverse(spec: &Spectrum) -> Signal {
    let plan = plans_for(spec.grid.dims());
    let n = spec.grid.len();
    let mut data = vec![0.0; spec.channels * n];
    for (c, out) in data.chunks_exact_mut(n).enumerate() {
        plan.inverse(spec.channel(c), out);
    }
    Signal { channels: spec.channels, data, grid: spec.grid.clone() }
}

/// Zero the imaginary part of the DC bin of every channel.
pub fn enforce_dc_real(mut spec: Spectrum) -> Spectrum {
    let h = spec.grid.half_len();
    for c in spec.data.chunks_exact_mut(h) {
        c[0].im = 0.0;
    }
    spec
}

/// Per-channel zero-mean, unit-variance standardization followed by
/// seeded Gaussian noise of scale `noise_scale`.
///
/// Variance uses the population convention; the standard deviation is
/// floored at [`STD_FLOOR`] so constant channels map to zero.
pub fn standardize_input(x: &Signal, noise_scale: f64, seed: u64) -> Result<Signal> {
    if !(noise_scale >= 0.0) {
        return invalid(format!("noise scale must be non-negative, got {noise_scale}"));
    }
    let n = x.grid.len();
    if n < 2 {
        return invalid("standardization needs more than one sample per channel");
    }
    let mut out = x.clone();
    for c in 0..x.channels {
        let ch = out.channel_mut(c);
        let mean = ch.iter().sum::<f64>() / n as f64;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(STD_FLOOR);
        for v in ch.iter_mut() {
            *v = (*v - mean) / std;
        }
    }
    if noise_scale > 0.0 {
        let mut rng = SeededRng::new(seed, stream::STANDARDIZE);
        for v in out.data.iter_mut() {
            *v += noise_scale * rng.normal();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;

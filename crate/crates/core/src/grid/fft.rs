//! N-dimensional real FFT over row-major buffers.
//!
//! The last axis is transformed real-to-complex and stored as a half
//! spectrum of `n_last / 2 + 1` bins; all other axes are full complex
//! transforms applied afterwards on that half array.

use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

fn complex_planner() -> &'static Mutex<FftPlanner<f64>> {
    static P: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    P.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn real_planner() -> &'static Mutex<RealFftPlanner<f64>> {
    static P: OnceLock<Mutex<RealFftPlanner<f64>>> = OnceLock::new();
    P.get_or_init(|| Mutex::new(RealFftPlanner::new()))
}

/// Plans for one spatial shape.
pub(crate) struct RealFftNd {
    dims: Vec<usize>,
    half_dims: Vec<usize>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl RealFftNd {
    pub fn new(dims: &[usize]) -> Self {
        let last = *dims.last().expect("at least one axis");
        let mut half_dims = dims.to_vec();
        *half_dims.last_mut().unwrap() = last / 2 + 1;
        let (r2c, c2r) = {
            let mut p = real_planner().lock().unwrap();
            (p.plan_fft_forward(last), p.plan_fft_inverse(last))
        };
        let (forward, inverse) = {
            let mut p = complex_planner().lock().unwrap();
            let f = dims[..dims.len() - 1].iter().map(|&n| p.plan_fft_forward(n)).collect();
            let i = dims[..dims.len() - 1].iter().map(|&n| p.plan_fft_inverse(n)).collect();
            (f, i)
        };
        Self { dims: dims.to_vec(), half_dims, r2c, c2r, forward, inverse }
    }

    pub fn spatial_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn half_len(&self) -> usize {
        self.half_dims.iter().product()
    }

    /// Unnormalized forward transform of one real channel.
    pub fn forward(&self, input: &[f64], out: &mut [Complex64]) {
        let last = *self.dims.last().unwrap();
        let hlast = *self.half_dims.last().unwrap();
        debug_assert_eq!(input.len(), self.spatial_len());
        debug_assert_eq!(out.len(), self.half_len());
        let mut line = self.r2c.make_input_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for (src, dst) in input.chunks_exact(last).zip(out.chunks_exact_mut(hlast)) {
            line.copy_from_slice(src);
            self.r2c
                .process_with_scratch(&mut line, dst, &mut scratch)
                .expect("r2c buffer sizes");
        }
        for (axis, plan) in self.forward.iter().enumerate() {
            along_axis(out, &self.half_dims, axis, plan.as_ref());
        }
    }

    /// Inverse transform including the `1/N` factor.
    ///
    /// Imaginary parts of the self-conjugate bins on the last axis are
    /// discarded, so the result is the real part of the full inverse DFT of
    /// the Hermitian extension.
    pub fn inverse(&self, input: &[Complex64], out: &mut [f64]) {
        let last = *self.dims.last().unwrap();
        let hlast = *self.half_dims.last().unwrap();
        debug_assert_eq!(input.len(), self.half_len());
        debug_assert_eq!(out.len(), self.spatial_len());
        let mut work = input.to_vec();
        for (axis, plan) in self.inverse.iter().enumerate() {
            along_axis(&mut work, &self.half_dims, axis, plan.as_ref());
        }
        let scale = 1.0 / self.spatial_len() as f64;
        let mut scratch = self.c2r.make_scratch_vec();
        for (src, dst) in work.chunks_exact_mut(hlast).zip(out.chunks_exact_mut(last)) {
            src[0].im = 0.0;
            if last % 2 == 0 {
                src[hlast - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(src, dst, &mut scratch)
                .expect("c2r buffer sizes");
            for v in dst.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// Columns gathered per batch in [`along_axis`]; contiguous tiles keep
/// strided axes cache friendly.
const TILE: usize = 16;

/// In-place 1-D transform of every line along `axis` of a row-major array.
fn along_axis(data: &mut [Complex64], shape: &[usize], axis: usize, plan: &dyn Fft<f64>) {
    let n = shape[axis];
    if n == 1 {
        return;
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    if inner == 1 {
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(&mut data[..outer * n], &mut scratch);
        return;
    }
    let mut tile = vec![Complex64::new(0.0, 0.0); n * TILE.min(inner)];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    for o in 0..outer {
        let base = o * n * inner;
        for i0 in (0..inner).step_by(TILE) {
            let w = TILE.min(inner - i0);
            let lines = &mut tile[..n * w];
            for k in 0..n {
                let row = &data[base + k * inner + i0..][..w];
                for (b, v) in row.iter().enumerate() {
                    lines[b * n + k] = *v;
                }
            }
            plan.process_with_scratch(lines, &mut scratch);
            for k in 0..n {
                let row = &mut data[base + k * inner + i0..][..w];
                for (b, v) in row.iter_mut().enumerate() {
                    *v = lines[b * n + k];
                }
            }
        }
    }
}

/// Full complex N-D transform in place (unnormalized both ways).
pub(crate) fn complex_nd(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    for (axis, &n) in dims.iter().enumerate() {
        let plan = {
            let mut p = complex_planner().lock().unwrap();
            if inverse {
                p.plan_fft_inverse(n)
            } else {
                p.plan_fft_forward(n)
            }
        };
        along_axis(data, dims, axis, plan.as_ref());
    }
}

/// Shared plan cache keyed by spatial shape.
pub(crate) fn plans_for(dims: &[usize]) -> Arc<RealFftNd> {
    use std::collections::HashMap;
    static CACHE: OnceLock<Mutex<HashMap<Vec<usize>, Arc<RealFftNd>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().unwrap().get(dims) {
        return Arc::clone(p);
    }
    let plan = Arc::new(RealFftNd::new(dims));
    cache
        .lock()
        .unwrap()
        .entry(dims.to_vec())
        .or_insert(plan)
        .clone()
}

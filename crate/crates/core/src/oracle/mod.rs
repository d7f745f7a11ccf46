//! Brute-force reference implementations.
//!
//! Nothing here touches the FFT, the symbol assembly or any other fast
//! path. These routines exist to check the rest of the crate.

pub mod linalg;
pub mod suite;

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::grid::{FrequencyGrid, Signal};
use crate::modes::Mode;

pub use linalg::{expm, CMatrix};
pub use suite::{run_suite, Check};

fn unravel(mut index: usize, dims: &[usize], out: &mut [usize]) {
    for axis in (0..dims.len()).rev() {
        out[axis] = index % dims[axis];
        index /= dims[axis];
    }
}

/// Full (not half) unnormalized DFT of a real field by direct summation.
/// Output is row-major in DFT index order.
pub fn dft_direct(x: &[f64], dims: &[usize]) -> Vec<Complex64> {
    let n: usize = dims.iter().product();
    assert_eq!(x.len(), n);
    let mut k_idx = vec![0usize; dims.len()];
    let mut n_idx = vec![0usize; dims.len()];
    (0..n)
        .map(|k| {
            unravel(k, dims, &mut k_idx);
            let mut acc = Complex64::new(0.0, 0.0);
            for (p, &v) in x.iter().enumerate() {
                unravel(p, dims, &mut n_idx);
                let phase: f64 = (0..dims.len())
                    .map(|d| ((k_idx[d] * n_idx[d]) % dims[d]) as f64 / dims[d] as f64)
                    .sum();
                acc += v * Complex64::from_polar(1.0, -2.0 * PI * phase);
            }
            acc
        })
        .collect()
}

/// Inverse of [`dft_direct`] with `1/N` normalization, returning complex values.
pub fn idft_direct(spec: &[Complex64], dims: &[usize]) -> Vec<Complex64> {
    let n: usize = dims.iter().product();
    assert_eq!(spec.len(), n);
    let mut k_idx = vec![0usize; dims.len()];
    let mut n_idx = vec![0usize; dims.len()];
    (0..n)
        .map(|p| {
            unravel(p, dims, &mut n_idx);
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &v) in spec.iter().enumerate() {
                unravel(k, dims, &mut k_idx);
                let phase: f64 = (0..dims.len())
                    .map(|d| ((k_idx[d] * n_idx[d]) % dims[d]) as f64 / dims[d] as f64)
                    .sum();
                acc += v * Complex64::from_polar(1.0, 2.0 * PI * phase);
            }
            acc / n as f64
        })
        .collect()
}

/// Direct circular convolution.
///
/// `kernel` carries `K·C` channels ordered `[k][c]`; `x` carries `C`
/// channels. Returns `y_k[n] = Σ_c Σ_τ kernel_kc[τ] x_c[(n − τ) mod N]`.
pub fn circular_convolve_direct(kernel: &Signal, x: &Signal) -> Result<Signal> {
    if kernel.grid().dims() != x.grid().dims() {
        return invalid("kernel and input must share a grid");
    }
    let c_in = x.channels();
    if kernel.channels() % c_in != 0 {
        return invalid(format!(
            "kernel has {} channels, not a multiple of {} input channels",
            kernel.channels(),
            c_in
        ));
    }
    let k_out = kernel.channels() / c_in;
    let dims = x.grid().dims();
    let n = x.grid().len();
    let mut out = vec![0.0; k_out * n];
    let mut n_idx = vec![0usize; dims.len()];
    let mut t_idx = vec![0usize; dims.len()];
    for k in 0..k_out {
        for p in 0..n {
            unravel(p, dims, &mut n_idx);
            let mut acc = 0.0;
            for c in 0..c_in {
                let ker = kernel.channel(k * c_in + c);
                let xc = x.channel(c);
                for (tau, &kv) in ker.iter().enumerate() {
                    unravel(tau, dims, &mut t_idx);
                    let mut src = 0usize;
                    for d in 0..dims.len() {
                        src = src * dims[d] + (n_idx[d] + dims[d] - t_idx[d]) % dims[d];
                    }
                    acc += kv * xc[src];
                }
            }
            out[k * n + p] = acc;
        }
    }
    Signal::new(k_out, out, x.grid().clone())
}

/// Linear time-invariant state-space system `ẋ = A x + B u`, `y = C x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    pub a: CMatrix,
    pub b: CMatrix,
    pub c: CMatrix,
}

impl LtiSystem {
    pub fn new(a: CMatrix, b: CMatrix, c: CMatrix) -> Result<Self> {
        if a.rows != a.cols || b.rows != a.rows || c.cols != a.rows {
            return invalid("inconsistent state-space dimensions");
        }
        Ok(Self { a, b, c })
    }

    /// Single-state system with real scalars.
    pub fn scalar(a: Complex64, b: Complex64, c: Complex64) -> Self {
        let m = |v| CMatrix { rows: 1, cols: 1, data: vec![v] };
        Self { a: m(a), b: m(b), c: m(c) }
    }
}

/// `H(s) = C (sI − A)⁻¹ B` by a direct linear solve.
pub fn resolvent_transfer(sys: &LtiSystem, s: Complex64) -> Result<CMatrix> {
    let n = sys.a.rows;
    let shifted = CMatrix::identity(n).scale(s).add(&sys.a.scale(Complex64::new(-1.0, 0.0)));
    let x = shifted.solve(&sys.b)?;
    Ok(sys.c.mul(&x))
}

/// Samples of `K(t) = C e^{At} B` at `t = 0, dt, 2dt, …, ≤ t_max`.
pub fn impulse_response_numeric(sys: &LtiSystem, t_max: f64, dt: f64) -> Result<Vec<CMatrix>> {
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return invalid("need dt > 0 and t_max >= 0");
    }
    let steps = (t_max / dt).round() as usize;
    Ok((0..=steps)
        .map(|i| {
            let t = i as f64 * dt;
            let e = expm(&sys.a.scale(Complex64::new(t, 0.0)));
            sys.c.mul(&e).mul(&sys.b)
        })
        .collect())
}

/// Trapezoidal Laplace transform `∫₀^{t_max} K(t) e^{−st} dt` of sampled kernels.
pub fn laplace_numeric(samples: &[CMatrix], dt: f64, s: Complex64) -> CMatrix {
    let (rows, cols) = (samples[0].rows, samples[0].cols);
    let mut acc = CMatrix::zeros(rows, cols);
    let last = samples.len() - 1;
    for (i, k) in samples.iter().enumerate() {
        let w = if i == 0 || i == last { 0.5 * dt } else { dt };
        let f = (-s * (i as f64 * dt)).exp() * w;
        acc = acc.add(&k.scale(f));
    }
    acc
}

/// Max deviation between an axis-aligned, transverse-free mode and the
/// scalar resolvent `1/(i s ω_axis − a)` over the half spectrum of `grid`.
pub fn s4nd_reduction_check(mode: &Mode, axis: usize, grid: &FrequencyGrid) -> Result<f64> {
    if axis >= grid.ndim() || mode.dim() != grid.ndim() {
        return invalid("axis or mode dimension does not match the grid");
    }
    let phys = mode.in_physical_units(grid.spacings());
    let aligned = phys
        .direction()
        .iter()
        .enumerate()
        .all(|(d, &v)| if d == axis { v == 1.0 } else { v == 0.0 });
    if !aligned {
        return invalid(format!("mode direction is not e_{axis} in physical units"));
    }
    if mode.transverse() != 0.0 {
        return invalid("mode has a non-zero transverse penalty");
    }
    let (s, a) = (mode.scale(), mode.pole());
    let field = crate::modes::transfer_field(mode, grid);
    let mut omega = vec![0.0; grid.ndim()];
    let mut worst = 0.0f64;
    for (i, t) in field.iter().enumerate() {
        grid.half_frequency(i, &mut omega);
        let reference = Complex64::new(1.0, 0.0) / (Complex64::i() * s * omega[axis] - a);
        worst = worst.max((t - reference).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;

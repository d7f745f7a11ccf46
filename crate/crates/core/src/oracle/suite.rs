//! The verification battery behind the `verify` subcommand and the
//! acceptance harness. Every check is seeded, so reruns are identical.

use std::collections::HashMap;
use std::time::Instant;

use num_complex::Complex64;

use super::{
    circular_convolve_direct, dft_direct, impulse_response_numeric, laplace_numeric, resolvent_transfer,
    s4nd_reduction_check, CMatrix, LtiSystem,
};
use crate::error::Result;
use crate::grid::{dft_forward, dft_inverse, FrequencyGrid, Signal};
use crate::modes::{constrain_mode, transfer_at, Mode, ModeRaw, StabilityConfig};
use crate::operator::{
    apply_symbol, assemble_symbol, count_parameters, mode_responses, network_from_json, network_to_json,
    spatial_kernel, Head, NetworkConfig, SonicBlock, SonicNetwork, SpectralSymbol,
};
use crate::rng::{stream, SeededRng};

/// Outcome of one property.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub measured: f64,
    /// Pass threshold for `measured`.
    pub bound: f64,
    pub seconds: f64,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e} bound {:.3e} ({:.2}s){}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.bound,
            self.seconds,
            if self.detail.is_empty() { String::new() } else { format!(" {}", self.detail) }
        )
    }
}

fn timed(name: &'static str, bound: f64, f: impl FnOnce() -> Result<(f64, String)>) -> Check {
    let t = Instant::now();
    let (measured, detail, ok) = match f() {
        Ok((m, d)) => (m, d, m <= bound),
        Err(e) => (f64::NAN, format!("error: {e}"), false),
    };
    Check { name, passed: ok, measured, bound, seconds: t.elapsed().as_secs_f64(), detail }
}

fn rng(salt: u64) -> SeededRng {
    SeededRng::new(0x5EED ^ salt, stream::TEST)
}

fn random_signal(channels: usize, grid: &FrequencyGrid, r: &mut SeededRng) -> Result<Signal> {
    Signal::new(channels, (0..channels * grid.len()).map(|_| r.normal()).collect(), grid.clone())
}

/// Fast half-spectrum transform against the direct sum, sizes up to 16.
pub fn check_dft() -> Check {
    timed("direct DFT equals fast transform", 1e-10, || {
        let mut r = rng(1);
        let mut worst = 0.0f64;
        for dims in [vec![16, 16], vec![7, 9], vec![15, 4], vec![13], vec![5, 3, 6], vec![1, 11]] {
            let grid = FrequencyGrid::unit(&dims)?;
            let x = random_signal(1, &grid, &mut r)?;
            let fast = dft_forward(&x);
            let full = dft_direct(x.channel(0), &dims);
            let last = *dims.last().unwrap();
            let hl = last / 2 + 1;
            let scale = full.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (i, v) in fast.channel(0).iter().enumerate() {
                let (row, col) = (i / hl, i % hl);
                worst = worst.max((v - full[row * last + col]).norm() / scale);
            }
        }
        Ok((worst, String::new()))
    })
}

/// `F(f ⊛ g) = F(f)·F(g)` through direct convolution and direct DFT.
pub fn check_convolution_theorem() -> Check {
    timed("convolution theorem (direct)", 1e-9, || {
        let mut r = rng(2);
        let mut worst = 0.0f64;
        for dims in [vec![4, 4], vec![3, 5], vec![8, 8], vec![7], vec![2, 3, 4]] {
            let grid = FrequencyGrid::unit(&dims)?;
            let f = random_signal(1, &grid, &mut r)?;
            let g = random_signal(1, &grid, &mut r)?;
            let lhs = dft_direct(circular_convolve_direct(&f, &g)?.channel(0), &dims);
            let (ff, fg) = (dft_direct(f.channel(0), &dims), dft_direct(g.channel(0), &dims));
            let scale = lhs.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for i in 0..lhs.len() {
                worst = worst.max((lhs[i] - ff[i] * fg[i]).norm() / scale);
            }
        }
        Ok((worst, String::new()))
    })
}

fn kernels(symbol: &SpectralSymbol) -> Result<Signal> {
    let mut data = Vec::new();
    for k in 0..symbol.outputs() {
        for c in 0..symbol.inputs() {
            data.extend_from_slice(spatial_kernel(symbol, k, c)?.kernel.data());
        }
    }
    Signal::new(symbol.outputs() * symbol.inputs(), data, symbol.grid().clone())
}

/// Spectral multiplication against direct circular convolution with the
/// symbol's spatial kernel, on `pairs` random cases up to 8×8.
pub fn check_symbol_convolution(pairs: usize) -> Check {
    timed("spectral product equals direct convolution", 1e-9, || {
        let mut r = rng(3);
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let dims = [r.int_range(1, 9), r.int_range(1, 9)];
            let grid = FrequencyGrid::unit(&dims)?;
            let (k, c) = (r.int_range(1, 4), r.int_range(1, 4));
            let symbol = SpectralSymbol::from_fn(k, c, &grid, |_, _, _| Complex64::new(r.normal(), r.normal()));
            let x = random_signal(c, &grid, &mut r)?;
            let spectral = dft_inverse(&apply_symbol(&symbol, &dft_forward(&x))?);
            let direct = circular_convolve_direct(&kernels(&symbol)?, &x)?;
            let scale = direct.data().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
            let diff = spectral.data().iter().zip(direct.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(diff / scale);
        }
        Ok((worst, format!("{pairs} pairs")))
    })
}

/// Closed-form resolvent values and quadrature convergence of the impulse response.
pub fn check_resolvent() -> Check {
    timed("resolvent examples and Laplace quadrature", 1e-3, || {
        let one = Complex64::new(1.0, 0.0);
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let sys = LtiSystem::scalar(c(-1.0, 0.0), one, one);
        let a = CMatrix::from_real(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let diag = LtiSystem::new(a, CMatrix::from_real(2, 1, &[1.0, 1.0]), CMatrix::from_real(1, 2, &[1.0, 1.0]))?;
        let exact = [
            ((resolvent_transfer(&sys, c(0.0, 0.0))?.data[0] - one).norm()),
            ((resolvent_transfer(&diag, c(0.0, 0.0))?.data[0] - c(1.5, 0.0)).norm()),
            ((resolvent_transfer(&sys, c(0.0, 1.0))?.data[0] - c(0.5, -0.5)).norm()),
        ];
        if exact.iter().any(|e| *e > 1e-15) {
            return Ok((f64::INFINITY, format!("closed-form mismatch {exact:?}")));
        }
        let dt = 1e-3;
        let k = impulse_response_numeric(&sys, 40.0, dt)?;
        let s = c(0.0, 1.0);
        let err = (laplace_numeric(&k, dt, s).data[0] - resolvent_transfer(&sys, s)?.data[0]).norm();
        Ok((err, "t_max=40 dt=1e-3".into()))
    })
}

/// Axis-aligned, transverse-free modes against `1/(i s ω_d − a)` on 16×16.
pub fn check_s4nd_reduction() -> Check {
    timed("axis-aligned modes reduce to the scalar resolvent", 1e-15, || {
        let mut r = rng(4);
        let mut worst = 0.0f64;
        for spacing in [[1.0, 1.0], [0.5, 2.0]] {
            let grid = FrequencyGrid::new(&[16, 16], &spacing)?;
            for axis in 0..2 {
                for _ in 0..5 {
                    let mut dir = [0.0; 2];
                    dir[axis] = 1.0;
                    let a = Complex64::new(-r.uniform_range(0.01, 3.0), r.uniform_range(-3.0, 3.0));
                    let m = Mode::new(&dir, r.uniform_range(0.05, 5.0), a, 0.0)?;
                    worst = worst.max(s4nd_reduction_check(&m, axis, &grid)?);
                }
            }
        }
        Ok((worst, "16x16".into()))
    })
}

/// `T(ω; s, a) = (1/s)·C(iω − A)⁻¹B` with `A = a/s`, `B = C = 1`.
pub fn check_absorbed_identity(pairs: usize) -> Check {
    timed("absorbed-parameter resolvent identity", 1e-12, || {
        let mut r = rng(5);
        let one = Complex64::new(1.0, 0.0);
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let s = r.uniform_range(0.05, 5.0);
            let a = Complex64::new(-r.uniform_range(0.01, 3.0), r.uniform_range(-3.0, 3.0));
            let w = r.uniform_range(-20.0, 20.0);
            let m = Mode::new(&[0.0, 1.0], s, a, 0.0)?;
            let t = transfer_at(&m, &[r.normal(), w]);
            let h = resolvent_transfer(&LtiSystem::scalar(a / s, one, one), Complex64::new(0.0, w))?.data[0] / s;
            worst = worst.max((t - h).norm() / t.norm().max(1.0));
        }
        Ok((worst, format!("{pairs} pairs")))
    })
}

/// `|T_m(ω)|·|Re a_m| ≤ 1` over random constrained modes and frequencies.
pub fn check_stability_bound(evaluations: usize) -> Check {
    timed("transfer magnitude bound", 1.0 + 1e-12, || {
        let mut r = rng(6);
        let mut worst = 0.0f64;
        for i in 0..evaluations {
            let dim = 1 + i % 3;
            let raw = ModeRaw {
                sigma: r.uniform_range(-20.0, 20.0),
                alpha: r.uniform_range(-20.0, 20.0),
                beta: r.uniform_range(-20.0, 20.0),
                t: r.uniform_range(-20.0, 20.0),
                u: (0..dim).map(|_| r.normal()).collect(),
            };
            let cfg = StabilityConfig { rho: r.uniform_range(0.1, 10.0), epsilon: 1e-4 };
            let m = constrain_mode(&raw, &cfg)?;
            let omega: Vec<f64> = (0..dim).map(|_| r.uniform_range(-100.0, 100.0)).collect();
            worst = worst.max(transfer_at(&m, &omega).norm() * m.pole().re.abs());
        }
        Ok((worst, format!("{evaluations} evaluations")))
    })
}

/// Closed-form scalar count against enumeration of constructed blocks.
pub fn check_parameter_count(configs: usize) -> Check {
    timed("parameter count matches enumeration", 0.0, || {
        let mut r = rng(7);
        let mut mismatches = 0.0;
        for _ in 0..configs {
            let (m, c, k, d) = (r.int_range(1, 9), r.int_range(1, 6), r.int_range(1, 6), r.int_range(1, 4));
            let block = SonicBlock::init(m, c, k, d, true, &mut r);
            let net = SonicNetwork::new(vec![block], Head::identity(k))?;
            // trained spectral tensors plus the single shared rho
            let enumerated: usize = net
                .params()
                .iter()
                .filter(|(key, _)| key.starts_with("block0.") && !key.ends_with("W_s"))
                .map(|(_, v)| v.len())
                .sum::<usize>()
                + 1;
            if enumerated != count_parameters(m, c, k, d) {
                mismatches += 1.0;
            }
        }
        Ok((mismatches, format!("{configs} configurations")))
    })
}

/// Save a model, reload it, and sample its modes on 32² and 64²: shared
/// frequencies must agree bitwise and the DC symbol must not depend on the grid.
pub fn check_resolution_invariance() -> Check {
    timed("resolution invariance", 0.0, || {
        let cfg = NetworkConfig {
            in_channels: 3,
            width: 4,
            modes: 4,
            depth: 2,
            out_channels: 3,
            dim: 2,
            gain_normalize: false,
            mode_dropout_rate: 0.0,
        };
        let net = network_from_json(&network_to_json(&SonicNetwork::init(&cfg, 11)?)?)?;
        let mut mismatches = 0usize;
        let mut shared = 0usize;
        for unit_extent in [true, false] {
            let grid = |n: usize| if unit_extent { FrequencyGrid::unit_extent(&[n, n]) } else { FrequencyGrid::unit(&[n, n]) };
            let (g32, g64) = (grid(32)?, grid(64)?);
            let mut coarse = HashMap::new();
            let mut w = [0.0; 2];
            for j in 0..g32.half_len() {
                g32.half_frequency(j, &mut w);
                coarse.insert((w[0].to_bits(), w[1].to_bits()), j);
            }
            for block in &net.blocks {
                let (a, b) = (mode_responses(block, &g32)?, mode_responses(block, &g64)?);
                for i in 0..g64.half_len() {
                    g64.half_frequency(i, &mut w);
                    if let Some(&j) = coarse.get(&(w[0].to_bits(), w[1].to_bits())) {
                        shared += 1;
                        mismatches += a.iter().zip(&b).filter(|(fa, fb)| fa[j] != fb[i]).count();
                    }
                }
            }
        }
        let mut dc_mismatch = 0usize;
        for block in &net.blocks {
            let reference = assemble_symbol(block, &FrequencyGrid::unit(&[32, 32])?)?;
            for (dims, sp) in [([64, 64], [1.0, 1.0]), ([7, 9], [0.3, 2.0]), ([16, 48], [0.25, 1.5])] {
                let s = assemble_symbol(block, &FrequencyGrid::new(&dims, &sp)?)?;
                for k in 0..s.outputs() {
                    for c in 0..s.inputs() {
                        dc_mismatch += usize::from(s.get(k, c, 0) != reference.get(k, c, 0));
                    }
                }
            }
        }
        if shared == 0 {
            return Ok((f64::INFINITY, "no shared frequencies".into()));
        }
        Ok(((mismatches + dc_mismatch) as f64, format!("{shared} shared bins, {dc_mismatch} DC mismatches")))
    })
}

/// The full battery in a fixed order.
pub fn run_suite() -> Vec<Check> {
    vec![
        check_dft(),
        check_convolution_theorem(),
        check_symbol_convolution(50),
        check_resolvent(),
        check_s4nd_reduction(),
        check_absorbed_identity(100),
        check_stability_bound(100_000),
        check_parameter_count(10),
        check_resolution_invariance(),
    ]
}

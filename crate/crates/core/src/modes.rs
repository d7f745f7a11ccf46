//! Oriented spectral modes.
//!
//! A mode is the rational frequency response
//!
//! ```text
//! T(ω) = 1 / ( i s (ω·v) − a + τ ‖(I − v vᵀ) ω‖² )
//! ```
//!
//! with unit direction `v`, scale `s > 0`, pole `a` (`Re a < 0`) and
//! transverse penalty `τ ≥ 0`. The real part of the denominator is at least
//! `−Re a`, so `|T| ≤ 1/|Re a|` everywhere.
//!
//! Unconstrained parameters live in [`ModeRaw`]; [`constrain_mode`] maps them
//! onto a valid [`Mode`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::grid::FrequencyGrid;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    /// Bound on `|Im a|`.
    pub rho: f64,
    /// Floor added to the softplus scale.
    pub epsilon: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { rho: std::f64::consts::PI, epsilon: 1e-4 }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return invalid(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Unconstrained mode parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRaw {
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub t: f64,
    pub u: Vec<f64>,
}

impl ModeRaw {
    /// Default initialization for a `dim`-dimensional mode.
    ///
    /// In 2-D the direction angle is uniform on `[0, π)`; in other
    /// dimensions the direction is an isotropic Gaussian draw.
    pub fn init(dim: usize, rng: &mut SeededRng) -> Self {
        let u = if dim == 2 {
            let theta = rng.uniform_range(0.0, std::f64::consts::PI);
            vec![theta.cos(), theta.sin()]
        } else {
            loop {
                let u: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                if norm(&u) > 1e-3 {
                    break u;
                }
            }
        };
        Self {
            sigma: 0.0,
            alpha: 0.0,
            beta: rng.uniform_range(-0.5, 0.5),
            t: -2.0,
            u,
        }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }
}

/// Constrained mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    direction: Vec<f64>,
    scale: f64,
    pole: Complex64,
    transverse: f64,
}

impl Mode {
    /// Builds a mode from constrained values, normalizing the direction.
    pub fn new(direction: &[f64], scale: f64, pole: Complex64, transverse: f64) -> Result<Self> {
        let n = norm(direction);
        if !(n > 0.0 && n.is_finite()) {
            return invalid("mode direction must be non-zero and finite");
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return invalid(format!("scale must be positive, got {scale}"));
        }
        if !(pole.re < 0.0 && pole.im.is_finite()) {
            return invalid(format!("pole must have negative real part, got {pole}"));
        }
        if !(transverse >= 0.0 && transverse.is_finite()) {
            return invalid(format!("transverse penalty must be non-negative, got {transverse}"));
        }
        Ok(Self {
            direction: direction.iter().map(|v| v / n).collect(),
            scale,
            pole,
            transverse,
        })
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn pole(&self) -> Complex64 {
        self.pole
    }

    pub fn transverse(&self) -> f64 {
        self.transverse
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// The same mode with its direction mapped into physical units.
    pub fn in_physical_units(&self, spacings: &[f64]) -> Mode {
        Mode { direction: physical_direction(&self.direction, spacings), ..self.clone() }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Map unconstrained parameters onto a valid mode.
pub fn constrain_mode(raw: &ModeRaw, cfg: &StabilityConfig) -> Result<Mode> {
    cfg.validate()?;
    let n = norm(&raw.u);
    if !(n > 0.0 && n.is_finite()) {
        return invalid("mode direction parameter u must be non-zero and finite");
    }
    let scalars = [raw.sigma, raw.alpha, raw.beta, raw.t];
    if scalars.iter().any(|v| !v.is_finite()) {
        return invalid("mode parameters must be finite");
    }
    let pole_re = -softplus(raw.alpha);
    // softplus underflows to 0 for very negative alpha; keep the pole stable.
    let pole_re = if pole_re < 0.0 { pole_re } else { -f64::MIN_POSITIVE };
    Ok(Mode {
        direction: raw.u.iter().map(|v| v / n).collect(),
        scale: softplus(raw.sigma) + cfg.epsilon,
        pole: Complex64::new(pole_re, cfg.rho * raw.beta.tanh()),
        transverse: softplus(raw.t),
    })
}

/// Rescale a unit direction by `diag(Δ)⁻¹` and renormalize.
pub fn physical_direction(v: &[f64], spacings: &[f64]) -> Vec<f64> {
    debug_assert_eq!(v.len(), spacings.len());
    let scaled: Vec<f64> = v.iter().zip(spacings).map(|(x, d)| x / d).collect();
    let n = norm(&scaled);
    scaled.iter().map(|x| x / n).collect()
}

/// Evaluate the mode's transfer function at one angular frequency vector.
/// The direction is used as stored; see [`transfer_field`] for grid sampling.
pub fn transfer_at(mode: &Mode, omega: &[f64]) -> Complex64 {
    denominator(mode, omega).0.inv()
}

/// Returns the denominator together with `ω·v` and `‖ω_⊥‖²`.
#[inline]
fn denominator(mode: &Mode, omega: &[f64]) -> (Complex64, f64, f64) {
    let v = &mode.direction;
    let along: f64 = omega.iter().zip(v).map(|(w, d)| w * d).sum();
    let across: f64 = omega
        .iter()
        .zip(v)
        .map(|(w, d)| {
            let r = w - along * d;
            r * r
        })
        .sum();
    let den = Complex64::new(
        -mode.pole.re + mode.transverse * across,
        mode.scale * along - mode.pole.im,
    );
    (den, along, across)
}

/// Sample the mode over the half spectrum of `grid`, with the direction
/// first mapped into physical units.
pub fn transfer_field(mode: &Mode, grid: &FrequencyGrid) -> Vec<Complex64> {
    transfer_field_slabbed(mode, grid, grid.half_rows(), Execution::Sequential)
}

/// Slab-wise evaluation over blocks of `slab_rows` half-spectrum rows.
/// Produces exactly the same values as [`transfer_field`].
pub fn transfer_field_slabbed(
    mode: &Mode,
    grid: &FrequencyGrid,
    slab_rows: usize,
    exec: Execution,
) -> Vec<Complex64> {
    let phys = mode.in_physical_units(grid.spacings());
    let row = grid.half_row_len();
    let mut out = vec![Complex64::new(0.0, 0.0); grid.half_len()];
    let chunk = slab_rows.max(1) * row;
    exec.for_each_chunk_mut(&mut out, chunk, |slab, values| {
        let mut omega = vec![0.0; grid.ndim()];
        let start = slab * chunk;
        for (i, v) in values.iter_mut().enumerate() {
            grid.half_frequency(start + i, &mut omega);
            *v = transfer_at(&phys, &omega);
        }
    });
    out
}

/// Gradient of a real loss with respect to one mode's raw parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeGradient {
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub t: f64,
    pub u: Vec<f64>,
}

/// Backpropagate `grad_field` (∂L/∂Re T + i ∂L/∂Im T per half-spectrum bin)
/// through [`transfer_field`] and [`constrain_mode`].
pub fn transfer_field_backward(
    raw: &ModeRaw,
    cfg: &StabilityConfig,
    grid: &FrequencyGrid,
    grad_field: &[Complex64],
) -> Result<ModeGradient> {
    let mode = constrain_mode(raw, cfg)?;
    let phys = mode.in_physical_units(grid.spacings());
    let dim = grid.ndim();
    let mut omega = vec![0.0; dim];
    let (mut g_re, mut g_im, mut g_s, mut g_tau) = (0.0, 0.0, 0.0, 0.0);
    let mut g_dir = vec![0.0; dim];
    for (idx, g) in grad_field.iter().enumerate() {
        if g.re == 0.0 && g.im == 0.0 {
            continue;
        }
        grid.half_frequency(idx, &mut omega);
        let (den, along, across) = denominator(&phys, &omega);
        let t = den.inv();
        let gd = -(t * t).conj() * g;
        g_re -= gd.re;
        g_im -= gd.im;
        g_s += gd.im * along;
        g_tau += gd.re * across;
        let c_along = gd.im * phys.scale;
        let c_across = -2.0 * gd.re * phys.transverse * along;
        for d in 0..dim {
            let perp = omega[d] - along * phys.direction[d];
            g_dir[d] += c_along * omega[d] + c_across * perp;
        }
    }
    // v̂ = w/‖w‖ with w = diag(Δ)⁻¹ u
    let w: Vec<f64> = raw.u.iter().zip(grid.spacings()).map(|(u, d)| u / d).collect();
    let wn = norm(&w);
    let radial: f64 = g_dir.iter().zip(&phys.direction).map(|(g, v)| g * v).sum();
    let u = g_dir
        .iter()
        .zip(&phys.direction)
        .zip(grid.spacings())
        .map(|((g, v), d)| (g - radial * v) / wn / d)
        .collect();
    let tb = raw.beta.tanh();
    Ok(ModeGradient {
        sigma: g_s * sigmoid(raw.sigma),
        alpha: -g_re * sigmoid(raw.alpha),
        beta: g_im * cfg.rho * (1.0 - tb * tb),
        t: g_tau * sigmoid(raw.t),
        u,
    })
}

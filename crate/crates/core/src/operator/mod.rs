//! The SONIC operator: rank-M spectral symbols, blocks and stacked networks.
//!
//! A block maps `C` input channels to `K` output channels through
//!
//! ```text
//! Ĥ_kc(ω) = Σ_m C_km T_m(ω) B_mc
//! x⁺      = GELU( F⁻¹[ Ĥ · F[x] ] + W_s x )
//! ```
//!
//! Symbols are stored frequency-major (`[n][k][c]`) over the half spectrum.

mod serial;

use num_complex::Complex64;

use crate::error::{invalid, Result, SonicError};
use crate::exec::Execution;
use crate::grid::{complex_nd, dft_forward, dft_inverse, FrequencyGrid, Signal, Spectrum};
use crate::modes::{constrain_mode, transfer_field_slabbed, Mode, ModeRaw, StabilityConfig};
use crate::params::ParamMap;
use crate::rng::{stream, SeededRng};

pub use serial::{load_network, network_from_json, network_to_json, save_network};

/// Floor on the per-output-channel RMS gain.
pub const GAIN_FLOOR: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Complex input mixing `B` (M×C) and output mixing `C` (K×M), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrices {
    modes: usize,
    inputs: usize,
    outputs: usize,
    pub b: Vec<Complex64>,
    pub c: Vec<Complex64>,
}

impl MixingMatrices {
    pub fn new(
        modes: usize,
        inputs: usize,
        outputs: usize,
        b: Vec<Complex64>,
        c: Vec<Complex64>,
    ) -> Result<Self> {
        if b.len() != modes * inputs || c.len() != outputs * modes {
            return invalid(format!(
                "mixing shapes: B has {} entries (want {}x{}), C has {} (want {}x{})",
                b.len(),
                modes,
                inputs,
                c.len(),
                outputs,
                modes
            ));
        }
        if b.iter().chain(&c).any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return invalid("mixing matrices must be finite");
        }
        Ok(Self { modes, inputs, outputs, b, c })
    }

    pub fn zeros(modes: usize, inputs: usize, outputs: usize) -> Self {
        Self {
            modes,
            inputs,
            outputs,
            b: vec![ZERO; modes * inputs],
            c: vec![ZERO; outputs * modes],
        }
    }

    pub fn b_at(&self, m: usize, c: usize) -> Complex64 {
        self.b[m * self.inputs + c]
    }

    pub fn c_at(&self, k: usize, m: usize) -> Complex64 {
        self.c[k * self.modes + m]
    }
}

/// One SONIC layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SonicBlock {
    pub modes: Vec<ModeRaw>,
    pub stability: StabilityConfig,
    pub mixing: MixingMatrices,
    /// Pointwise skip projection `W_s`, K×C row-major.
    pub skip: Vec<f64>,
    pub gain_normalize: bool,
    pub mode_dropout_rate: f64,
    /// Half-spectrum rows per evaluation slab; `None` evaluates the whole grid at once.
    pub slab_rows: Option<usize>,
}

impl SonicBlock {
    pub fn new(
        modes: Vec<ModeRaw>,
        stability: StabilityConfig,
        mixing: MixingMatrices,
        skip: Vec<f64>,
        gain_normalize: bool,
        mode_dropout_rate: f64,
    ) -> Result<Self> {
        let block = Self {
            modes,
            stability,
            mixing,
            skip,
            gain_normalize,
            mode_dropout_rate,
            slab_rows: None,
        };
        block.validate()?;
        Ok(block)
    }

    /// Random initialization.
    pub fn init(
        modes: usize,
        inputs: usize,
        outputs: usize,
        dim: usize,
        gain_normalize: bool,
        rng: &mut SeededRng,
    ) -> Self {
        let raw = (0..modes).map(|_| ModeRaw::init(dim, rng)).collect();
        let bs = (0.5 / inputs as f64).sqrt();
        let cs = (0.5 / modes as f64).sqrt();
        let b = (0..modes * inputs)
            .map(|_| Complex64::new(bs * rng.normal(), bs * rng.normal()))
            .collect();
        let c = (0..outputs * modes)
            .map(|_| Complex64::new(cs * rng.normal(), cs * rng.normal()))
            .collect();
        let ws = (1.0 / inputs as f64).sqrt();
        let skip = (0..outputs * inputs).map(|_| ws * rng.normal()).collect();
        Self {
            modes: raw,
            stability: StabilityConfig::default(),
            mixing: MixingMatrices { modes, inputs, outputs, b, c },
            skip,
            gain_normalize,
            mode_dropout_rate: 0.0,
            slab_rows: None,
        }
    }

    /// Block with zero mixing and zero skip; modes point along the first axis.
    pub fn zeros(modes: usize, inputs: usize, outputs: usize, dim: usize) -> Self {
        let mut u = vec![0.0; dim];
        u[0] = 1.0;
        let raw = ModeRaw { sigma: 0.0, alpha: 0.0, beta: 0.0, t: -2.0, u };
        Self {
            modes: vec![raw; modes],
            stability: StabilityConfig::default(),
            mixing: MixingMatrices::zeros(modes, inputs, outputs),
            skip: vec![0.0; outputs * inputs],
            gain_normalize: false,
            mode_dropout_rate: 0.0,
            slab_rows: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, c, k) = (self.num_modes(), self.in_channels(), self.out_channels());
        if m == 0 || c == 0 || k == 0 {
            return Err(SonicError::Config(format!("block needs M, C, K >= 1 (got {m}, {c}, {k})")));
        }
        if self.modes.len() != m {
            return Err(SonicError::Config("mode list does not match mixing rank".into()));
        }
        let dim = self.dim();
        if dim == 0 || self.modes.iter().any(|r| r.u.len() != dim) {
            return Err(SonicError::Config("all modes need the same positive dimension".into()));
        }
        if self.skip.len() != k * c {
            return Err(SonicError::Config(format!(
                "skip projection has {} entries, expected {k}x{c}",
                self.skip.len()
            )));
        }
        if !(0.0..1.0).contains(&self.mode_dropout_rate) {
            return Err(SonicError::Config(format!(
                "mode dropout rate must be in [0, 1), got {}",
                self.mode_dropout_rate
            )));
        }
        self.stability.validate()?;
        for raw in &self.modes {
            constrain_mode(raw, &self.stability)?;
        }
        MixingMatrices::new(m, c, k, self.mixing.b.clone(), self.mixing.c.clone())?;
        Ok(())
    }

    pub fn num_modes(&self) -> usize {
        self.mixing.modes
    }

    pub fn in_channels(&self) -> usize {
        self.mixing.inputs
    }

    pub fn out_channels(&self) -> usize {
        self.mixing.outputs
    }

    pub fn dim(&self) -> usize {
        self.modes.first().map_or(0, |r| r.u.len())
    }

    pub fn constrained_modes(&self) -> Result<Vec<Mode>> {
        self.modes.iter().map(|r| constrain_mode(r, &self.stability)).collect()
    }

    /// Scalars of the spectral operator, tensor by tensor. The oscillation
    /// bound `rho` is one shared scalar of the layer and is held fixed
    /// during training.
    pub fn spectral_tensors(&self) -> Vec<(&'static str, usize)> {
        let m = self.num_modes();
        let (c, k, d) = (self.in_channels(), self.out_channels(), self.dim());
        vec![
            ("C_re", k * m),
            ("C_im", k * m),
            ("B_re", m * c),
            ("B_im", m * c),
            ("alpha", m),
            ("beta", m),
            ("sigma", m),
            ("t", m),
            ("u", m * d),
            ("rho", 1),
        ]
    }

    pub fn spectral_scalar_count(&self) -> usize {
        self.spectral_tensors().iter().map(|(_, n)| n).sum()
    }

    pub(crate) fn mode_scales(&self, training: bool, seed: u64) -> Vec<f64> {
        let m = self.num_modes();
        let p = self.mode_dropout_rate;
        if !training || p == 0.0 {
            return vec![1.0; m];
        }
        let mut rng = SeededRng::new(seed, stream::DROPOUT);
        (0..m)
            .map(|_| if rng.bernoulli(p) { 0.0 } else { 1.0 / (1.0 - p) })
            .collect()
    }
}

/// `2KM + 2MC + (4 + D)M + 1` learnable real scalars of one spectral operator.
pub fn count_parameters(modes: usize, inputs: usize, outputs: usize, dim: usize) -> usize {
    2 * outputs * modes + 2 * modes * inputs + (4 + dim) * modes + 1
}

/// Sampled spectral operator `Ĥ_kc(ω_n)` over a half spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSymbol {
    outputs: usize,
    inputs: usize,
    values: Vec<Complex64>,
    grid: FrequencyGrid,
}

impl SpectralSymbol {
    pub fn from_fn(
        outputs: usize,
        inputs: usize,
        grid: &FrequencyGrid,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let h = grid.half_len();
        let mut values = Vec::with_capacity(h * outputs * inputs);
        for n in 0..h {
            for k in 0..outputs {
                for c in 0..inputs {
                    values.push(f(k, c, n));
                }
            }
        }
        Self { outputs, inputs, values, grid: grid.clone() }
    }

    pub fn identity(channels: usize, grid: &FrequencyGrid) -> Self {
        Self::from_fn(channels, channels, grid, |k, c, _| {
            if k == c {
                Complex64::new(1.0, 0.0)
            } else {
                ZERO
            }
        })
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, k: usize, c: usize, n: usize) -> Complex64 {
        self.values[(n * self.outputs + k) * self.inputs + c]
    }

    /// `Ĥ_kc` over every half-spectrum bin.
    pub fn pair(&self, k: usize, c: usize) -> Vec<Complex64> {
        (0..self.grid.half_len()).map(|n| self.get(k, c, n)).collect()
    }

    fn stride(&self) -> usize {
        self.outputs * self.inputs
    }
}

/// Everything the backward pass needs from symbol assembly.
#[derive(Clone, Debug)]
pub(crate) struct SymbolAssembly {
    /// Per-mode transfer fields, unscaled.
    pub fields: Vec<Vec<Complex64>>,
    /// Dropout multipliers per mode.
    pub scales: Vec<f64>,
    /// Symbol before gain normalization.
    pub raw: SpectralSymbol,
    /// Unfloored RMS gain per output channel, when normalization is on.
    pub gains: Option<Vec<f64>>,
    pub symbol: SpectralSymbol,
}

fn slab_len(block: &SonicBlock, grid: &FrequencyGrid) -> usize {
    block.slab_rows.unwrap_or(grid.half_rows()).max(1) * grid.half_row_len()
}

fn mode_fields(block: &SonicBlock, grid: &FrequencyGrid, exec: Execution) -> Result<Vec<Vec<Complex64>>> {
    let slab = block.slab_rows.unwrap_or(grid.half_rows()).max(1);
    Ok(block
        .constrained_modes()?
        .iter()
        .map(|m| transfer_field_slabbed(m, grid, slab, exec))
        .collect())
}

/// `Ĥ(ω_n)` before normalization into `hk` (K×C); `q` is M×C scratch.
#[inline]
fn mix_bin(
    block: &SonicBlock,
    fields: &[Vec<Complex64>],
    scales: &[f64],
    n: usize,
    q: &mut [Complex64],
    hk: &mut [Complex64],
) {
    let (m_count, c_in, k_out) = (block.num_modes(), block.in_channels(), block.out_channels());
    let mix = &block.mixing;
    for m in 0..m_count {
        let t = fields[m][n] * scales[m];
        for c in 0..c_in {
            q[m * c_in + c] = t * mix.b_at(m, c);
        }
    }
    for k in 0..k_out {
        for c in 0..c_in {
            let mut acc = ZERO;
            for m in 0..m_count {
                acc += mix.c_at(k, m) * q[m * c_in + c];
            }
            hk[k * c_in + c] = acc;
        }
    }
}

fn row_energy(row: &[Complex64]) -> f64 {
    row.iter().map(|v| v.norm_sqr()).sum::<f64>()
}

pub(crate) fn assemble(
    block: &SonicBlock,
    grid: &FrequencyGrid,
    scales: Vec<f64>,
    exec: Execution,
) -> Result<SymbolAssembly> {
    if block.dim() != grid.ndim() {
        return invalid(format!(
            "block modes are {}-dimensional but the grid has {} axes",
            block.dim(),
            grid.ndim()
        ));
    }
    let fields = mode_fields(block, grid, exec)?;
    let (c_in, k_out) = (block.in_channels(), block.out_channels());
    let stride = k_out * c_in;
    let mut values = vec![ZERO; grid.half_len() * stride];
    let chunk = slab_len(block, grid);
    exec.for_each_chunk_mut(&mut values, chunk * stride, |slab_idx, out| {
        let mut q = vec![ZERO; block.num_modes() * c_in];
        for (local, hk) in out.chunks_exact_mut(stride).enumerate() {
            mix_bin(block, &fields, &scales, slab_idx * chunk + local, &mut q, hk);
        }
    });
    let raw = SpectralSymbol { outputs: k_out, inputs: c_in, values, grid: grid.clone() };
    let (symbol, gains) = if block.gain_normalize {
        let gains = rms_gains(&raw);
        (divide_by_gains(&raw, &gains), Some(gains))
    } else {
        (raw.clone(), None)
    };
    Ok(SymbolAssembly { fields, scales, raw, gains, symbol })
}

/// Assemble `Ĥ` on `grid`, normalized when the block asks for it.
pub fn assemble_symbol(block: &SonicBlock, grid: &FrequencyGrid) -> Result<SpectralSymbol> {
    let scales = vec![1.0; block.num_modes()];
    Ok(assemble(block, grid, scales, Execution::default())?.symbol)
}

/// Per-mode responses `T_m` sampled on `grid`, before mixing and normalization.
pub fn mode_responses(block: &SonicBlock, grid: &FrequencyGrid) -> Result<Vec<Vec<Complex64>>> {
    let scales = vec![1.0; block.num_modes()];
    Ok(assemble(block, grid, scales, Execution::default())?.fields)
}

/// Evaluate the unchanged block parameters on a different grid.
pub fn resample_to_grid(block: &SonicBlock, new_grid: &FrequencyGrid) -> Result<SpectralSymbol> {
    assemble_symbol(block, new_grid)
}

/// RMS over `(c, n)` of `|Ĥ_kc(ω_n)|` for each output channel.
pub(crate) fn rms_gains(symbol: &SpectralSymbol) -> Vec<f64> {
    let (k_out, c_in) = (symbol.outputs, symbol.inputs);
    let mut sums = vec![0.0; k_out];
    for hk in symbol.values.chunks_exact(symbol.stride()) {
        for k in 0..k_out {
            sums[k] += row_energy(&hk[k * c_in..(k + 1) * c_in]);
        }
    }
    let count = (c_in * symbol.grid.half_len()) as f64;
    sums.iter().map(|s| (s / count).sqrt()).collect()
}

fn divide_by_gains(symbol: &SpectralSymbol, gains: &[f64]) -> SpectralSymbol {
    let c_in = symbol.inputs;
    let mut out = symbol.clone();
    for hk in out.values.chunks_exact_mut(symbol.stride()) {
        for (k, &g) in gains.iter().enumerate() {
            let d = g.max(GAIN_FLOOR);
            for v in &mut hk[k * c_in..(k + 1) * c_in] {
                *v /= d;
            }
        }
    }
    out
}

/// Divide every output channel by its RMS gain over the half spectrum.
pub fn rms_gain_normalize(symbol: &SpectralSymbol) -> SpectralSymbol {
    divide_by_gains(symbol, &rms_gains(symbol))
}

/// `Σ_{k,c} |Ĥ_kc(ω)|²` over the full (not half) grid, row-major in DFT
/// index order. The missing half follows from Hermitian symmetry.
pub fn spectral_energy(block: &SonicBlock, grid: &FrequencyGrid) -> Result<Vec<f64>> {
    let symbol = assemble_symbol(block, grid)?;
    let half: Vec<f64> = (0..grid.half_len())
        .map(|n| {
            let mut e = 0.0;
            for k in 0..symbol.outputs() {
                for c in 0..symbol.inputs() {
                    e += symbol.get(k, c, n).norm_sqr();
                }
            }
            e
        })
        .collect();
    let dims = grid.dims();
    let d = dims.len();
    let (last, hl) = (dims[d - 1], grid.half_row_len());
    let mut idx = vec![0usize; d];
    Ok((0..grid.len())
        .map(|flat| {
            let mut rem = flat;
            for a in (0..d).rev() {
                idx[a] = rem % dims[a];
                rem /= dims[a];
            }
            let mirror = idx[d - 1] >= hl;
            let mut h = 0;
            for a in 0..d - 1 {
                let i = if mirror { (dims[a] - idx[a]) % dims[a] } else { idx[a] };
                h = h * dims[a] + i;
            }
            let j = if mirror { last - idx[d - 1] } else { idx[d - 1] };
            half[h * hl + j]
        })
        .collect())
}

/// Frequency-wise filtering `ŷ_k = Σ_c Ĥ_kc x̂_c`, DC forced real.
pub fn apply_symbol(symbol: &SpectralSymbol, x: &Spectrum) -> Result<Spectrum> {
    if x.channels() != symbol.inputs {
        return invalid(format!(
            "spectrum has {} channels, symbol expects {}",
            x.channels(),
            symbol.inputs
        ));
    }
    if x.grid().dims() != symbol.grid.dims() || x.grid().spacings() != symbol.grid.spacings() {
        return invalid("spectrum and symbol live on different grids");
    }
    let h = symbol.grid.half_len();
    let mut out = Spectrum::zeros(symbol.outputs, symbol.grid.clone());
    apply_into(symbol, x.data(), out.data_mut(), h);
    Ok(out)
}

fn apply_into(symbol: &SpectralSymbol, x: &[Complex64], out: &mut [Complex64], h: usize) {
    let (k_out, c_in) = (symbol.outputs, symbol.inputs);
    for n in 0..h {
        let hk = &symbol.values[n * k_out * c_in..(n + 1) * k_out * c_in];
        for k in 0..k_out {
            let mut acc = ZERO;
            for c in 0..c_in {
                acc += hk[k * c_in + c] * x[c * h + n];
            }
            out[k * h + n] = acc;
        }
    }
    for k in 0..k_out {
        out[k * h].im = 0.0;
    }
}

pub fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_grad(z: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(z * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + z * pdf
}

/// Intermediate values of one block application, kept for backprop.
#[derive(Clone, Debug)]
pub(crate) struct BlockTape {
    pub input: Signal,
    pub spectrum: Spectrum,
    pub pre: Vec<f64>,
}

/// Pre-activation `F⁻¹[Ĥ F[x]] + W_s x`.
pub(crate) fn block_linear_with(
    block: &SonicBlock,
    symbol: &SpectralSymbol,
    x: &Signal,
) -> Result<(Vec<f64>, Spectrum)> {
    if x.channels() != block.in_channels() {
        return invalid(format!(
            "input has {} channels, block expects {}",
            x.channels(),
            block.in_channels()
        ));
    }
    let spec = dft_forward(x);
    let filtered = apply_symbol(symbol, &spec)?;
    let mut pre = dft_inverse(&filtered).into_data();
    add_skip(block, x, &mut pre);
    Ok((pre, spec))
}

pub(crate) fn block_apply(
    block: &SonicBlock,
    symbol: &SpectralSymbol,
    x: &Signal,
) -> Result<(Signal, BlockTape)> {
    let (pre, spectrum) = block_linear_with(block, symbol, x)?;
    let out: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
    let out = Signal::new(block.out_channels(), out, x.grid().clone())?;
    Ok((out, BlockTape { input: x.clone(), spectrum, pre }))
}

/// The linear part of [`block_forward`], before the nonlinearity.
pub fn block_linear(block: &SonicBlock, x: &Signal, training: bool, seed: u64) -> Result<Signal> {
    Signal::new(block.out_channels(), fused_linear(block, x, training, seed)?, x.grid().clone())
}

/// Inference path: the symbol is recomputed bin by bin instead of being
/// stored, which keeps the working set small on large grids. Bitwise equal
/// to assembling the symbol and applying it.
fn fused_linear(block: &SonicBlock, x: &Signal, training: bool, seed: u64) -> Result<Vec<f64>> {
    if block.dim() != x.grid().ndim() {
        return invalid(format!(
            "block modes are {}-dimensional but the grid has {} axes",
            block.dim(),
            x.grid().ndim()
        ));
    }
    if x.channels() != block.in_channels() {
        return invalid(format!(
            "input has {} channels, block expects {}",
            x.channels(),
            block.in_channels()
        ));
    }
    let grid = x.grid();
    let scales = block.mode_scales(training, seed);
    let fields = mode_fields(block, grid, Execution::default())?;
    let (c_in, k_out) = (block.in_channels(), block.out_channels());
    let h = grid.half_len();
    let mut q = vec![ZERO; block.num_modes() * c_in];
    let mut hk = vec![ZERO; k_out * c_in];
    let divisors: Vec<f64> = if block.gain_normalize {
        let mut sums = vec![0.0; k_out];
        for n in 0..h {
            mix_bin(block, &fields, &scales, n, &mut q, &mut hk);
            for k in 0..k_out {
                sums[k] += row_energy(&hk[k * c_in..(k + 1) * c_in]);
            }
        }
        let count = (c_in * h) as f64;
        sums.iter().map(|s| (s / count).sqrt().max(GAIN_FLOOR)).collect()
    } else {
        vec![]
    };
    let spec = dft_forward(x);
    let xs = spec.data();
    let mut filtered = Spectrum::zeros(k_out, grid.clone());
    let out = filtered.data_mut();
    for n in 0..h {
        mix_bin(block, &fields, &scales, n, &mut q, &mut hk);
        for k in 0..k_out {
            let row = &mut hk[k * c_in..(k + 1) * c_in];
            if let Some(&d) = divisors.get(k) {
                for v in row.iter_mut() {
                    *v /= d;
                }
            }
            let mut acc = ZERO;
            for c in 0..c_in {
                acc += row[c] * xs[c * h + n];
            }
            out[k * h + n] = acc;
        }
    }
    for k in 0..k_out {
        out[k * h].im = 0.0;
    }
    let mut pre = dft_inverse(&filtered).into_data();
    add_skip(block, x, &mut pre);
    Ok(pre)
}

fn add_skip(block: &SonicBlock, x: &Signal, pre: &mut [f64]) {
    let n = x.grid().len();
    let c_in = block.in_channels();
    for k in 0..block.out_channels() {
        let row = &mut pre[k * n..(k + 1) * n];
        for c in 0..c_in {
            let w = block.skip[k * c_in + c];
            if w == 0.0 {
                continue;
            }
            for (r, xv) in row.iter_mut().zip(x.channel(c)) {
                *r += w * xv;
            }
        }
    }
}

/// `GELU(F⁻¹[Ĥ F[x]] + W_s x)`; with `training` set, modes are dropped at
/// the block's dropout rate using `seed`.
pub fn block_forward(block: &SonicBlock, x: &Signal, training: bool, seed: u64) -> Result<Signal> {
    let pre = fused_linear(block, x, training, seed)?;
    Signal::new(block.out_channels(), pre.into_iter().map(gelu).collect(), x.grid().clone())
}

/// Pointwise affine projection applied after the last block.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Head {
    pub inputs: usize,
    pub outputs: usize,
    /// outputs×inputs, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn identity(channels: usize) -> Self {
        let mut weight = vec![0.0; channels * channels];
        for i in 0..channels {
            weight[i * channels + i] = 1.0;
        }
        Self { inputs: channels, outputs: channels, weight, bias: vec![0.0; channels] }
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let s = (1.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| s * rng.normal()).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn apply(&self, x: &Signal) -> Result<Signal> {
        if x.channels() != self.inputs {
            return invalid(format!("head expects {} channels, got {}", self.inputs, x.channels()));
        }
        let n = x.grid().len();
        let mut out = vec![0.0; self.outputs * n];
        pointwise_affine(&self.weight, Some(&self.bias), self.inputs, x.data(), &mut out, n);
        Signal::new(self.outputs, out, x.grid().clone())
    }
}

/// `out[o] = Σ_i W[o,i] x[i] (+ b[o])` pixelwise.
pub(crate) fn pointwise_affine(
    weight: &[f64],
    bias: Option<&[f64]>,
    inputs: usize,
    x: &[f64],
    out: &mut [f64],
    n: usize,
) {
    let outputs = weight.len() / inputs;
    for o in 0..outputs {
        let row = &mut out[o * n..(o + 1) * n];
        row.fill(bias.map_or(0.0, |b| b[o]));
        for i in 0..inputs {
            let w = weight[o * inputs + i];
            for (r, v) in row.iter_mut().zip(&x[i * n..(i + 1) * n]) {
                *r += w * v;
            }
        }
    }
}

/// Shape of a randomly initialized network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub width: usize,
    pub modes: usize,
    pub depth: usize,
    pub out_channels: usize,
    pub dim: usize,
    pub gain_normalize: bool,
    pub mode_dropout_rate: f64,
}

/// Stacked blocks followed by a pointwise head.
#[derive(Clone, Debug, PartialEq)]
pub struct SonicNetwork {
    pub blocks: Vec<SonicBlock>,
    pub head: Head,
}

impl SonicNetwork {
    pub fn new(blocks: Vec<SonicBlock>, head: Head) -> Result<Self> {
        let net = Self { blocks, head };
        net.validate()?;
        Ok(net)
    }

    pub fn init(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        if cfg.depth == 0 {
            return Err(SonicError::Config("network needs at least one block".into()));
        }
        let mut rng = SeededRng::new(seed, stream::INIT);
        let blocks = (0..cfg.depth)
            .map(|i| {
                let inputs = if i == 0 { cfg.in_channels } else { cfg.width };
                let mut b =
                    SonicBlock::init(cfg.modes, inputs, cfg.width, cfg.dim, cfg.gain_normalize, &mut rng);
                b.mode_dropout_rate = cfg.mode_dropout_rate;
                b
            })
            .collect();
        let head = Head::init(cfg.width, cfg.out_channels, &mut rng);
        Self::new(blocks, head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(SonicError::Config("network needs at least one block".into()));
        }
        for b in &self.blocks {
            b.validate()?;
        }
        for (i, pair) in self.blocks.windows(2).enumerate() {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(SonicError::Config(format!(
                    "block {i} emits {} channels but block {} expects {}",
                    pair[0].out_channels(),
                    i + 1,
                    pair[1].in_channels()
                )));
            }
            if pair[0].dim() != pair[1].dim() {
                return Err(SonicError::Config("blocks disagree on dimension".into()));
            }
        }
        let last = self.blocks.last().unwrap().out_channels();
        if self.head.inputs != last
            || self.head.weight.len() != self.head.inputs * self.head.outputs
            || self.head.bias.len() != self.head.outputs
        {
            return Err(SonicError::Config(format!(
                "head shape does not match the last block's {last} channels"
            )));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.head.outputs
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].dim()
    }

    /// Trainable parameters keyed `block{i}.{name}` and `head.{weight,bias}`.
    pub fn params(&self) -> ParamMap {
        let mut p = ParamMap::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let key = |name: &str| format!("block{i}.{name}");
            p.insert(key("sigma"), b.modes.iter().map(|r| r.sigma).collect());
            p.insert(key("alpha"), b.modes.iter().map(|r| r.alpha).collect());
            p.insert(key("beta"), b.modes.iter().map(|r| r.beta).collect());
            p.insert(key("t"), b.modes.iter().map(|r| r.t).collect());
            p.insert(key("u"), b.modes.iter().flat_map(|r| r.u.iter().copied()).collect());
            p.insert(key("B_re"), b.mixing.b.iter().map(|v| v.re).collect());
            p.insert(key("B_im"), b.mixing.b.iter().map(|v| v.im).collect());
            p.insert(key("C_re"), b.mixing.c.iter().map(|v| v.re).collect());
            p.insert(key("C_im"), b.mixing.c.iter().map(|v| v.im).collect());
            p.insert(key("W_s"), b.skip.clone());
        }
        p.insert("head.weight", self.head.weight.clone());
        p.insert("head.bias", self.head.bias.clone());
        p
    }

    pub fn set_params(&mut self, p: &ParamMap) -> Result<()> {
        if !p.same_layout(&self.params()) {
            return invalid("parameter map does not match the network layout");
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let get = |name: &str| p.require(&format!("block{i}.{name}"));
            let dim = b.dim();
            let (sigma, alpha, beta, t, u) = (get("sigma")?, get("alpha")?, get("beta")?, get("t")?, get("u")?);
            for (m, r) in b.modes.iter_mut().enumerate() {
                r.sigma = sigma[m];
                r.alpha = alpha[m];
                r.beta = beta[m];
                r.t = t[m];
                r.u.copy_from_slice(&u[m * dim..(m + 1) * dim]);
            }
            for (v, (re, im)) in b.mixing.b.iter_mut().zip(get("B_re")?.iter().zip(get("B_im")?)) {
                *v = Complex64::new(*re, *im);
            }
            for (v, (re, im)) in b.mixing.c.iter_mut().zip(get("C_re")?.iter().zip(get("C_im")?)) {
                *v = Complex64::new(*re, *im);
            }
            b.skip.copy_from_slice(get("W_s")?);
        }
        self.head.weight.copy_from_slice(p.require("head.weight")?);
        self.head.bias.copy_from_slice(p.require("head.bias")?);
        Ok(())
    }
}

/// Dropout seed of block `index` within a network pass seeded by `seed`.
pub(crate) fn block_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Inference-mode forward pass through every block and the head.
pub fn network_forward(net: &SonicNetwork, x: &Signal) -> Result<Signal> {
    network_forward_with(net, x, false, 0)
}

/// Forward pass with optional mode dropout, seeded per block.
pub fn network_forward_with(net: &SonicNetwork, x: &Signal, training: bool, seed: u64) -> Result<Signal> {
    let mut h = x.clone();
    for (i, b) in net.blocks.iter().enumerate() {
        h = block_forward(b, &h, training, block_seed(seed, i))?;
    }
    net.head.apply(&h)
}

/// Real spatial kernel of one channel pair.
#[derive(Clone, Debug)]
pub struct KernelReport {
    pub kernel: Signal,
    /// `‖Im‖ / ‖Re‖` of the inverse DFT of the Hermitian-symmetrized full spectrum.
    pub imag_residual: f64,
}

/// Inverse DFT of `Ĥ_kc` as a real field.
pub fn spatial_kernel(symbol: &SpectralSymbol, k: usize, c: usize) -> Result<KernelReport> {
    if k >= symbol.outputs || c >= symbol.inputs {
        return invalid(format!(
            "channel pair ({k}, {c}) outside {}x{} symbol",
            symbol.outputs, symbol.inputs
        ));
    }
    let grid = &symbol.grid;
    let half = symbol.pair(k, c);
    let spec = Spectrum::new(1, half.clone(), grid.clone())?;
    let kernel = dft_inverse(&spec);

    let dims = grid.dims();
    let hd = grid.half_dims();
    let full_len = grid.len();
    let nd = dims.len();
    let mut idx = vec![0usize; nd];
    let lookup = |idx: &[usize]| -> Complex64 {
        let last = idx[nd - 1];
        if last < hd[nd - 1] {
            let flat = idx.iter().zip(&hd).fold(0, |a, (i, d)| a * d + i);
            half[flat]
        } else {
            let flat = idx
                .iter()
                .zip(dims)
                .zip(&hd)
                .fold(0, |a, ((i, n), d)| a * d + (n - i) % n);
            half[flat].conj()
        }
    };
    let mut full = vec![ZERO; full_len];
    for (flat, v) in full.iter_mut().enumerate() {
        let mut rem = flat;
        for a in (0..nd).rev() {
            idx[a] = rem % dims[a];
            rem /= dims[a];
        }
        let here = lookup(&idx);
        let mirror: Vec<usize> = idx.iter().zip(dims).map(|(i, n)| (n - i) % n).collect();
        *v = (here + lookup(&mirror).conj()) * 0.5;
    }
    complex_nd(&mut full, dims, true);
    let re: f64 = full.iter().map(|v| v.re * v.re).sum::<f64>().sqrt();
    let im: f64 = full.iter().map(|v| v.im * v.im).sum::<f64>().sqrt();
    let imag_residual = if re > 0.0 { im / re } else { im };
    Ok(KernelReport { kernel, imag_residual })
}

#[cfg(test)]
mod tests;

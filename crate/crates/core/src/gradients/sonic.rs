//! Reverse mode for [`SonicNetwork`].
//!
//! Per block, with `X = rfft(x)`, `Y = Ĥ X`, `z = irfft(Y) + W_s x`:
//!
//! ```text
//! g_z  = g_out ⊙ gelu'(z)
//! g_Y  = (w/N) · rfft(g_z)          w = half-spectrum multiplicity
//! g_Ĥ  = Σ_batch g_Y conj(X)
//! g_X  = Ĥᴴ g_Y
//! g_x  = N · irfft(g_X / w) + W_sᵀ g_z
//! ```

use num_complex::Complex64;

use super::{Model, OutputGrad, PassOptions};
use crate::error::{invalid, Result, SonicError};
use crate::exec::Execution;
use crate::grid::{dft_forward, dft_inverse, FrequencyGrid, Signal, Spectrum};
use crate::modes::transfer_field_backward;
use crate::operator::{
    assemble, block_apply, block_seed, gelu_grad, network_forward, pointwise_affine, BlockTape, SonicBlock,
    SonicNetwork, SymbolAssembly, GAIN_FLOOR,
};
use crate::params::{GradientVector, ParamMap};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Bins per partial sum; fixed so sequential and parallel runs agree bitwise.
const BIN_CHUNK: usize = 256;

struct BlockPass {
    asm: SymbolAssembly,
    tapes: Vec<BlockTape>,
}

/// Raw-parameter gradient of one block.
struct BlockGrad {
    sigma: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    t: Vec<f64>,
    u: Vec<f64>,
    b: Vec<Complex64>,
    c: Vec<Complex64>,
    skip: Vec<f64>,
}

fn shared_grid(inputs: &[&Signal]) -> Result<FrequencyGrid> {
    let Some(first) = inputs.first() else {
        return invalid("batch is empty");
    };
    let g = first.grid();
    if inputs.iter().any(|x| x.grid().dims() != g.dims() || x.grid().spacings() != g.spacings()) {
        return invalid("all samples in a batch must share one grid");
    }
    Ok(g.clone())
}

/// Adjoint of the half-spectrum inverse transform: `(w/N)·rfft(g)`.
fn irfft_adjoint(g: Signal, weights: &[f64]) -> Spectrum {
    let n = g.grid().len() as f64;
    let mut spec = dft_forward(&g);
    let h = weights.len();
    for ch in spec.data_mut().chunks_exact_mut(h) {
        for (v, w) in ch.iter_mut().zip(weights) {
            *v *= w / n;
        }
    }
    spec
}

/// Adjoint of the unnormalized forward transform: `N·irfft(g/w)`.
fn rfft_adjoint(mut g: Spectrum, weights: &[f64]) -> Signal {
    let n = g.grid().len() as f64;
    let h = weights.len();
    for ch in g.data_mut().chunks_exact_mut(h) {
        for (v, w) in ch.iter_mut().zip(weights) {
            *v *= n / w;
        }
    }
    dft_inverse(&g)
}

/// Backprop through gain normalization: `Ĥ = H / g_k` with `g_k` the RMS of row `k`.
fn gain_backward(asm: &SymbolAssembly, mut gh: Vec<Complex64>) -> Vec<Complex64> {
    let Some(gains) = &asm.gains else {
        return gh;
    };
    let raw = asm.raw.values();
    let (k_out, c_in) = (asm.raw.outputs(), asm.raw.inputs());
    let stride = k_out * c_in;
    let count = (c_in * asm.raw.grid().half_len()) as f64;
    let mut dots = vec![0.0; k_out];
    for (gn, hn) in gh.chunks_exact(stride).zip(raw.chunks_exact(stride)) {
        for k in 0..k_out {
            for c in 0..c_in {
                let i = k * c_in + c;
                dots[k] += (gn[i].conj() * hn[i]).re;
            }
        }
    }
    for (gn, hn) in gh.chunks_exact_mut(stride).zip(raw.chunks_exact(stride)) {
        for k in 0..k_out {
            let g = gains[k];
            for c in 0..c_in {
                let i = k * c_in + c;
                gn[i] = if g > GAIN_FLOOR {
                    gn[i] / g - hn[i] * (dots[k] / (g * g * g * count))
                } else {
                    gn[i] / GAIN_FLOOR
                };
            }
        }
    }
    gh
}

/// Symbol gradient (`[n][k][c]`) to raw block parameters.
fn symbol_backward(
    block: &SonicBlock,
    asm: &SymbolAssembly,
    grid: &FrequencyGrid,
    gh: Vec<Complex64>,
    exec: Execution,
) -> Result<(Vec<Complex64>, Vec<Complex64>, Vec<Vec<Complex64>>)> {
    let gh = gain_backward(asm, gh);
    let (m_count, c_in, k_out) = (block.num_modes(), block.in_channels(), block.out_channels());
    let stride = k_out * c_in;
    let h = grid.half_len();
    let mix = &block.mixing;
    let chunks = h.div_ceil(BIN_CHUNK);
    // per chunk: partial gB, partial gC and the gT slice
    let parts = exec.map_range(chunks, |ci| {
        let lo = ci * BIN_CHUNK;
        let hi = (lo + BIN_CHUNK).min(h);
        let mut gb = vec![ZERO; m_count * c_in];
        let mut gc = vec![ZERO; k_out * m_count];
        let mut gt = vec![ZERO; m_count * (hi - lo)];
        let mut p = vec![ZERO; k_out];
        for n in lo..hi {
            let g = &gh[n * stride..(n + 1) * stride];
            for m in 0..m_count {
                let st = asm.fields[m][n] * asm.scales[m];
                let st_conj = st.conj();
                for (k, pk) in p.iter_mut().enumerate() {
                    let mut acc = ZERO;
                    for c in 0..c_in {
                        acc += g[k * c_in + c] * mix.b_at(m, c).conj();
                    }
                    *pk = acc;
                    gc[k * m_count + m] += st_conj * acc;
                }
                let mut acc_t = ZERO;
                for (k, pk) in p.iter().enumerate() {
                    acc_t += mix.c_at(k, m).conj() * pk;
                }
                gt[m * (hi - lo) + n - lo] = acc_t * asm.scales[m];
                for c in 0..c_in {
                    let mut acc = ZERO;
                    for k in 0..k_out {
                        acc += mix.c_at(k, m).conj() * g[k * c_in + c];
                    }
                    gb[m * c_in + c] += st_conj * acc;
                }
            }
        }
        (gb, gc, gt)
    });
    let mut gb = vec![ZERO; m_count * c_in];
    let mut gc = vec![ZERO; k_out * m_count];
    let mut gt = vec![Vec::with_capacity(h); m_count];
    for (pb, pc, pt) in parts {
        gb.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
        gc.iter_mut().zip(&pc).for_each(|(a, b)| *a += b);
        let len = pt.len() / m_count.max(1);
        for (m, field) in gt.iter_mut().enumerate() {
            field.extend_from_slice(&pt[m * len..(m + 1) * len]);
        }
    }
    Ok((gb, gc, gt))
}

fn block_backward(
    block: &SonicBlock,
    pass: &BlockPass,
    grid: &FrequencyGrid,
    g_out: &[Vec<f64>],
    exec: Execution,
) -> Result<(BlockGrad, Vec<Vec<f64>>)> {
    let (c_in, k_out) = (block.in_channels(), block.out_channels());
    let weights = grid.half_weights();
    let h = grid.half_len();
    let n = grid.len();
    let symbol = &pass.asm.symbol;

    // per sample: g_Y, g_x, and the skip partial
    let per_sample = exec.map_range(pass.tapes.len(), |b| -> Result<(Spectrum, Vec<f64>, Vec<f64>)> {
        let tape = &pass.tapes[b];
        let gz: Vec<f64> = g_out[b].iter().zip(&tape.pre).map(|(g, z)| g * gelu_grad(*z)).collect();
        let mut gws = vec![0.0; k_out * c_in];
        for k in 0..k_out {
            let gk = &gz[k * n..(k + 1) * n];
            for c in 0..c_in {
                gws[k * c_in + c] = gk.iter().zip(tape.input.channel(c)).map(|(a, x)| a * x).sum();
            }
        }
        let mut gy = irfft_adjoint(Signal::new(k_out, gz.clone(), grid.clone())?, &weights);
        for k in 0..k_out {
            gy.channel_mut(k)[0].im = 0.0;
        }
        let mut gx_spec = Spectrum::zeros(c_in, grid.clone());
        {
            let gyd = gy.data();
            let out = gx_spec.data_mut();
            for idx in 0..h {
                let hn = &symbol.values()[idx * k_out * c_in..(idx + 1) * k_out * c_in];
                for c in 0..c_in {
                    let mut acc = ZERO;
                    for k in 0..k_out {
                        acc += hn[k * c_in + c].conj() * gyd[k * h + idx];
                    }
                    out[c * h + idx] = acc;
                }
            }
        }
        let mut gx = rfft_adjoint(gx_spec, &weights).into_data();
        let mut skip_in = vec![0.0; c_in * n];
        let skip_t: Vec<f64> = (0..c_in * k_out).map(|i| block.skip[(i % k_out) * c_in + i / k_out]).collect();
        pointwise_affine(&skip_t, None, k_out, &gz, &mut skip_in, n);
        gx.iter_mut().zip(&skip_in).for_each(|(a, b)| *a += b);
        Ok((gy, gx, gws))
    });
    let mut gys = Vec::with_capacity(per_sample.len());
    let mut gxs = Vec::with_capacity(per_sample.len());
    let mut skip = vec![0.0; k_out * c_in];
    for r in per_sample {
        let (gy, gx, gws) = r?;
        skip.iter_mut().zip(&gws).for_each(|(a, b)| *a += b);
        gys.push(gy);
        gxs.push(gx);
    }

    // g_Ĥ[n][k][c] = Σ_b g_Y[b][k][n] conj(X[b][c][n]); batch summed in order
    let stride = k_out * c_in;
    let mut gh = vec![ZERO; h * stride];
    exec.for_each_chunk_mut(&mut gh, BIN_CHUNK * stride, |ci, out| {
        for (local, cell) in out.chunks_exact_mut(stride).enumerate() {
            let idx = ci * BIN_CHUNK + local;
            for (gy, tape) in gys.iter().zip(&pass.tapes) {
                let (gyd, xd) = (gy.data(), tape.spectrum.data());
                for k in 0..k_out {
                    let g = gyd[k * h + idx];
                    for c in 0..c_in {
                        cell[k * c_in + c] += g * xd[c * h + idx].conj();
                    }
                }
            }
        }
    });

    let (b, c, gt) = symbol_backward(block, &pass.asm, grid, gh, exec)?;
    let mode_grads = exec.map_range(block.num_modes(), |m| {
        transfer_field_backward(&block.modes[m], &block.stability, grid, &gt[m])
    });
    let mut grad = BlockGrad {
        sigma: Vec::new(),
        alpha: Vec::new(),
        beta: Vec::new(),
        t: Vec::new(),
        u: Vec::new(),
        b,
        c,
        skip,
    };
    for mg in mode_grads {
        let mg = mg?;
        grad.sigma.push(mg.sigma);
        grad.alpha.push(mg.alpha);
        grad.beta.push(mg.beta);
        grad.t.push(mg.t);
        grad.u.extend(mg.u);
    }
    Ok((grad, gxs))
}

impl Model for SonicNetwork {
    fn params(&self) -> ParamMap {
        SonicNetwork::params(self)
    }

    fn set_params(&mut self, p: &ParamMap) -> Result<()> {
        SonicNetwork::set_params(self, p)
    }

    fn forward(&self, x: &Signal) -> Result<Signal> {
        network_forward(self, x)
    }

    fn batch_backward(
        &self,
        inputs: &[&Signal],
        out_grad: &OutputGrad<'_>,
        opts: PassOptions,
    ) -> Result<(Vec<f64>, GradientVector)> {
        let grid = shared_grid(inputs)?;
        let exec = opts.exec;
        let mut passes: Vec<BlockPass> = Vec::with_capacity(self.blocks.len());
        let mut acts: Vec<Signal> = inputs.iter().map(|x| (*x).clone()).collect();
        for (i, block) in self.blocks.iter().enumerate() {
            let scales = block.mode_scales(opts.training, block_seed(opts.seed, i));
            let asm = assemble(block, &grid, scales, exec)?;
            let results = exec.map(&acts, |x| block_apply(block, &asm.symbol, x));
            let mut tapes = Vec::with_capacity(acts.len());
            let mut next = Vec::with_capacity(acts.len());
            for r in results {
                let (y, tape) = r.map_err(|e| tag_block(e, i))?;
                next.push(y);
                tapes.push(tape);
            }
            acts = next;
            passes.push(BlockPass { asm, tapes });
        }

        let head = &self.head;
        let n = grid.len();
        let heads = exec.map_range(acts.len(), |b| -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
            let logits = head.apply(&acts[b])?;
            let (loss, gl) = out_grad(b, &logits)?;
            if gl.len() != logits.data().len() {
                return invalid("loss gradient has the wrong length");
            }
            let h = acts[b].data();
            let mut gw = vec![0.0; head.outputs * head.inputs];
            let mut gb = vec![0.0; head.outputs];
            for o in 0..head.outputs {
                let go = &gl[o * n..(o + 1) * n];
                gb[o] = go.iter().sum();
                for i in 0..head.inputs {
                    gw[o * head.inputs + i] = go.iter().zip(&h[i * n..(i + 1) * n]).map(|(a, b)| a * b).sum();
                }
            }
            let wt: Vec<f64> =
                (0..head.inputs * head.outputs).map(|j| head.weight[(j % head.outputs) * head.inputs + j / head.outputs]).collect();
            let mut gh = vec![0.0; head.inputs * n];
            pointwise_affine(&wt, None, head.outputs, &gl, &mut gh, n);
            Ok((loss, gw, gb, gh))
        });
        let mut losses = Vec::with_capacity(heads.len());
        let mut g_head_w = vec![0.0; head.weight.len()];
        let mut g_head_b = vec![0.0; head.bias.len()];
        let mut g = Vec::with_capacity(heads.len());
        for r in heads {
            let (l, gw, gb, gh) = r?;
            losses.push(l);
            g_head_w.iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
            g_head_b.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
            g.push(gh);
        }

        let mut out = ParamMap::new();
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let (bg, gx) = block_backward(block, &passes[i], &grid, &g, exec).map_err(|e| tag_block(e, i))?;
            let key = |name: &str| format!("block{i}.{name}");
            out.insert(key("sigma"), bg.sigma);
            out.insert(key("alpha"), bg.alpha);
            out.insert(key("beta"), bg.beta);
            out.insert(key("t"), bg.t);
            out.insert(key("u"), bg.u);
            out.insert(key("B_re"), bg.b.iter().map(|v| v.re).collect());
            out.insert(key("B_im"), bg.b.iter().map(|v| v.im).collect());
            out.insert(key("C_re"), bg.c.iter().map(|v| v.re).collect());
            out.insert(key("C_im"), bg.c.iter().map(|v| v.im).collect());
            out.insert(key("W_s"), bg.skip);
            g = gx;
        }
        out.insert("head.weight", g_head_w);
        out.insert("head.bias", g_head_b);
        Ok((losses, out))
    }

    fn post_step(&mut self) -> Result<()> {
        // the loss only sees u/‖u‖, so rescaling is free and keeps u well conditioned
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for raw in &mut b.modes {
                let norm = crate::modes::norm(&raw.u);
                if !(norm.is_finite() && norm > 1e-12) {
                    return Err(SonicError::NonFinite { block: format!("block{i}.u"), detail: format!("norm {norm}") });
                }
                raw.u.iter_mut().for_each(|v| *v /= norm);
            }
        }
        self.validate()
    }

    fn locate_non_finite(&self, x: &Signal) -> Option<String> {
        let mut h = x.clone();
        for (i, b) in self.blocks.iter().enumerate() {
            match crate::operator::block_forward(b, &h, false, 0) {
                Ok(y) => h = y,
                Err(_) => return Some(format!("block{i}")),
            }
        }
        self.head.apply(&h).err().map(|_| "head".into())
    }
}

fn tag_block(e: SonicError, i: usize) -> SonicError {
    match e {
        SonicError::NonFinite { detail, .. } => SonicError::NonFinite { block: format!("block{i}"), detail },
        other => other,
    }
}

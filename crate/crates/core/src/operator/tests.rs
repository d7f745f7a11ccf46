use num_complex::Complex64;
use proptest::prelude::*;

use super::*;
use crate::grid::{dft_forward, dft_inverse, FrequencyGrid, Signal};
use crate::modes::{transfer_field, ModeRaw};
use crate::oracle::circular_convolve_direct;
use crate::rng::{stream, SeededRng};

fn rng(seed: u64) -> SeededRng {
    SeededRng::new(seed, stream::TEST)
}

fn random_signal(channels: usize, grid: &FrequencyGrid, r: &mut SeededRng) -> Signal {
    let data = (0..channels * grid.len()).map(|_| r.normal()).collect();
    Signal::new(channels, data, grid.clone()).unwrap()
}

fn random_symbol(k: usize, c: usize, grid: &FrequencyGrid, r: &mut SeededRng) -> SpectralSymbol {
    SpectralSymbol::from_fn(k, c, grid, |_, _, _| Complex64::new(r.normal(), r.normal()))
}

fn kernels(symbol: &SpectralSymbol) -> Signal {
    let (k_out, c_in) = (symbol.outputs(), symbol.inputs());
    let mut data = Vec::new();
    for k in 0..k_out {
        for c in 0..c_in {
            let rep = spatial_kernel(symbol, k, c).unwrap();
            assert!(rep.imag_residual < 1e-8);
            data.extend_from_slice(rep.kernel.data());
        }
    }
    Signal::new(k_out * c_in, data, symbol.grid().clone()).unwrap()
}

fn spectral_path(symbol: &SpectralSymbol, x: &Signal) -> Signal {
    dft_inverse(&apply_symbol(symbol, &dft_forward(x)).unwrap())
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn unit_mix_block(raw: ModeRaw) -> SonicBlock {
    let mixing = MixingMatrices::new(1, 1, 1, vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(1.0, 0.0)]).unwrap();
    SonicBlock::new(vec![raw], StabilityConfig::default(), mixing, vec![0.0], false, 0.0).unwrap()
}

fn sample_raw(r: &mut SeededRng) -> ModeRaw {
    ModeRaw { sigma: r.normal(), alpha: r.normal(), beta: r.normal(), t: r.normal(), u: vec![r.normal(), r.normal()] }
}

#[test]
fn rank_one_unit_mixing_is_the_mode_field() {
    let mut r = rng(1);
    let raw = sample_raw(&mut r);
    let block = unit_mix_block(raw.clone());
    let grid = FrequencyGrid::new(&[6, 8], &[1.0, 0.5]).unwrap();
    let s = assemble_symbol(&block, &grid).unwrap();
    let m = constrain_mode(&raw, &StabilityConfig::default()).unwrap();
    assert_eq!(s.pair(0, 0), transfer_field(&m, &grid));
}

#[test]
fn zero_input_mixing_annihilates() {
    let mut r = rng(2);
    let mut block = SonicBlock::init(3, 2, 2, 2, false, &mut r);
    block.mixing.b.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    let grid = FrequencyGrid::unit(&[5, 5]).unwrap();
    let s = assemble_symbol(&block, &grid).unwrap();
    assert!(s.values().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
}

#[test]
fn two_modes_superpose() {
    let mut r = rng(3);
    let (a, b) = (sample_raw(&mut r), sample_raw(&mut r));
    let one = Complex64::new(1.0, 0.0);
    let mixing = MixingMatrices::new(2, 1, 1, vec![one, one], vec![one, one]).unwrap();
    let block = SonicBlock::new(vec![a.clone(), b.clone()], StabilityConfig::default(), mixing, vec![0.0], false, 0.0).unwrap();
    let grid = FrequencyGrid::unit(&[4, 6]).unwrap();
    let s = assemble_symbol(&block, &grid).unwrap();
    let cfg = StabilityConfig::default();
    let ta = transfer_field(&constrain_mode(&a, &cfg).unwrap(), &grid);
    let tb = transfer_field(&constrain_mode(&b, &cfg).unwrap(), &grid);
    for (n, v) in s.pair(0, 0).iter().enumerate() {
        assert!((v - (ta[n] + tb[n])).norm() < 1e-15);
    }
}

#[test]
fn assembly_is_deterministic_and_slab_invariant() {
    let mut r = rng(4);
    let mut block = SonicBlock::init(4, 3, 2, 2, true, &mut r);
    let grid = FrequencyGrid::unit(&[8, 8]).unwrap();
    let a = assemble_symbol(&block, &grid).unwrap();
    assert_eq!(a, assemble_symbol(&block, &grid).unwrap());
    block.slab_rows = Some(2);
    assert_eq!(a, assemble_symbol(&block, &grid).unwrap());
    let seq = super::assemble(&block, &grid, vec![1.0; 4], Execution::Sequential).unwrap();
    assert_eq!(a, seq.symbol);
}

#[test]
fn gain_normalization_examples() {
    let grid = FrequencyGrid::unit(&[4, 4]).unwrap();
    let s = SpectralSymbol::from_fn(2, 3, &grid, |k, c, n| Complex64::from_polar(4.0, (k + c + n) as f64));
    let out = rms_gain_normalize(&s);
    assert!(out.values().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    let again = rms_gain_normalize(&out);
    for (a, b) in out.values().iter().zip(again.values()) {
        assert!((a - b).norm() < 1e-12);
    }
    let z = SpectralSymbol::from_fn(1, 1, &grid, |_, _, _| Complex64::new(0.0, 0.0));
    assert_eq!(rms_gain_normalize(&z), z);

    let mut r = rng(5);
    let s = random_symbol(3, 2, &grid, &mut r);
    for g in super::rms_gains(&rms_gain_normalize(&s)) {
        assert!((g - 1.0).abs() < 1e-10);
    }
}

#[test]
fn apply_symbol_examples_and_errors() {
    let grid = FrequencyGrid::unit(&[4, 4]).unwrap();
    let mut r = rng(6);
    let x = random_signal(2, &grid, &mut r);
    let id = SpectralSymbol::identity(2, &grid);
    let y = spectral_path(&id, &x);
    assert!(max_rel(y.data(), x.data()) < 1e-14);

    let s = random_symbol(3, 2, &grid, &mut r);
    let zero = Spectrum::zeros(2, grid.clone());
    assert!(apply_symbol(&s, &zero).unwrap().data().iter().all(|v| v.norm() == 0.0));
    assert!(apply_symbol(&s, &Spectrum::zeros(3, grid.clone())).is_err());
    let other = FrequencyGrid::unit(&[4, 5]).unwrap();
    assert!(apply_symbol(&s, &Spectrum::zeros(2, other)).is_err());
    let out = apply_symbol(&s, &dft_forward(&x)).unwrap();
    for k in 0..3 {
        assert_eq!(out.channel(k)[0].im, 0.0);
    }
}

#[test]
fn spectral_path_equals_direct_convolution() {
    let mut r = rng(7);
    for dims in [[4usize, 4], [6, 6], [5, 3], [8, 7]] {
        let grid = FrequencyGrid::unit(&dims).unwrap();
        let s = random_symbol(2, 3, &grid, &mut r);
        let x = random_signal(3, &grid, &mut r);
        let direct = circular_convolve_direct(&kernels(&s), &x).unwrap();
        assert!(max_rel(spectral_path(&s, &x).data(), direct.data()) < 1e-9, "{dims:?}");
    }
}

#[test]
fn kernel_examples() {
    let grid = FrequencyGrid::unit(&[4, 6]).unwrap();
    let one = SpectralSymbol::from_fn(1, 1, &grid, |_, _, _| Complex64::new(1.0, 0.0));
    let k = spatial_kernel(&one, 0, 0).unwrap().kernel;
    assert!((k.data()[0] - 1.0).abs() < 1e-15);
    assert!(k.data()[1..].iter().all(|v| v.abs() < 1e-15));
    let zero = SpectralSymbol::from_fn(1, 1, &grid, |_, _, _| Complex64::new(0.0, 0.0));
    assert!(spatial_kernel(&zero, 0, 0).unwrap().kernel.data().iter().all(|v| *v == 0.0));
    assert!(spatial_kernel(&zero, 1, 0).is_err());
}

#[test]
fn count_parameters_examples() {
    assert_eq!(count_parameters(4, 3, 5, 2), 89);
    assert_eq!(count_parameters(1, 1, 1, 2), 11);
    assert_eq!(count_parameters(2, 2, 2, 3), 31);
}

#[test]
fn count_parameters_matches_enumeration() {
    let mut r = rng(8);
    for _ in 0..10 {
        let (m, c, k, d) = (r.int_range(1, 9), r.int_range(1, 6), r.int_range(1, 6), r.int_range(1, 4));
        let block = SonicBlock::init(m, c, k, d, true, &mut r);
        assert_eq!(block.spectral_scalar_count(), count_parameters(m, c, k, d));
        let net = SonicNetwork::new(vec![block], Head::identity(k)).unwrap();
        let p = net.params();
        let spectral: usize = p
            .iter()
            .filter(|(key, _)| key.starts_with("block0.") && !key.ends_with("W_s"))
            .map(|(_, v)| v.len())
            .sum();
        // rho is the one shared, non-trained scalar
        assert_eq!(spectral + 1, count_parameters(m, c, k, d));
    }
}

#[test]
fn block_forward_examples() {
    let grid = FrequencyGrid::unit(&[8, 8]).unwrap();
    let mut r = rng(9);
    let x = random_signal(2, &grid, &mut r);
    let zero = SonicBlock::zeros(2, 2, 3, 2);
    let y = block_forward(&zero, &x, false, 0).unwrap();
    assert!(y.data().iter().all(|v| *v == 0.0));

    let block = SonicBlock::init(3, 2, 3, 2, true, &mut r);
    let a = block_forward(&block, &x, false, 1).unwrap();
    let b = block_forward(&block, &x, false, 2).unwrap();
    assert_eq!(a, b);
    assert!(block_forward(&block, &random_signal(3, &grid, &mut r), false, 0).is_err());
}

#[test]
fn streamed_forward_matches_stored_symbol_bitwise() {
    let grid = FrequencyGrid::unit(&[12, 10]).unwrap();
    let mut r = rng(31);
    let x = random_signal(3, &grid, &mut r);
    for gain in [true, false] {
        let mut block = SonicBlock::init(4, 3, 5, 2, gain, &mut r);
        block.mode_dropout_rate = 0.3;
        for training in [false, true] {
            let scales = block.mode_scales(training, 7);
            let asm = assemble(&block, &grid, scales, Execution::Sequential).unwrap();
            let (stored, _) = block_apply(&block, &asm.symbol, &x).unwrap();
            assert_eq!(stored, block_forward(&block, &x, training, 7).unwrap());
        }
    }
}

#[test]
fn mode_dropout_is_seeded_and_off_at_inference() {
    let grid = FrequencyGrid::unit(&[8, 8]).unwrap();
    let mut r = rng(10);
    let x = random_signal(2, &grid, &mut r);
    let mut block = SonicBlock::init(6, 2, 2, 2, false, &mut r);
    block.mode_dropout_rate = 0.5;
    let eval = block_forward(&block, &x, false, 3).unwrap();
    let t1 = block_forward(&block, &x, true, 3).unwrap();
    let t2 = block_forward(&block, &x, true, 3).unwrap();
    assert_eq!(t1, t2);
    assert_ne!(t1, eval);
    let scales = block.mode_scales(true, 3);
    assert!(scales.iter().all(|s| *s == 0.0 || *s == 2.0));
}

#[test]
fn pre_activation_is_linear() {
    let grid = FrequencyGrid::unit(&[8, 8]).unwrap();
    let mut r = rng(11);
    let block = SonicBlock::init(4, 2, 3, 2, true, &mut r);
    let (x1, x2) = (random_signal(2, &grid, &mut r), random_signal(2, &grid, &mut r));
    let (a, b) = (1.7, -0.4);
    let mix: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect();
    let lhs = block_linear(&block, &Signal::new(2, mix, grid.clone()).unwrap(), false, 0).unwrap();
    let l1 = block_linear(&block, &x1, false, 0).unwrap();
    let l2 = block_linear(&block, &x2, false, 0).unwrap();
    let rhs: Vec<f64> = l1.data().iter().zip(l2.data()).map(|(p, q)| a * p + b * q).collect();
    assert!(max_rel(lhs.data(), &rhs) < 1e-9);
}

fn circshift(x: &Signal, dr: usize, dc: usize) -> Signal {
    let dims = x.grid().dims();
    let (h, w) = (dims[0], dims[1]);
    let mut out = x.clone();
    for c in 0..x.channels() {
        for i in 0..h {
            for j in 0..w {
                out.channel_mut(c)[((i + dr) % h) * w + (j + dc) % w] = x.channel(c)[i * w + j];
            }
        }
    }
    out
}

#[test]
fn pre_activation_is_shift_equivariant() {
    let grid = FrequencyGrid::unit(&[6, 8]).unwrap();
    let mut r = rng(12);
    let block = SonicBlock::init(3, 2, 2, 2, true, &mut r);
    let x = random_signal(2, &grid, &mut r);
    let base = block_linear(&block, &x, false, 0).unwrap();
    for (dr, dc) in [(1, 0), (0, 3), (5, 7), (2, 2)] {
        let shifted = block_linear(&block, &circshift(&x, dr, dc), false, 0).unwrap();
        assert!(max_rel(shifted.data(), circshift(&base, dr, dc).data()) < 1e-9);
    }
}

#[test]
fn network_forward_examples() {
    let grid = FrequencyGrid::unit(&[8, 8]).unwrap();
    let mut r = rng(13);
    let x = random_signal(2, &grid, &mut r);
    let block = SonicBlock::init(3, 2, 4, 2, true, &mut r);
    let net = SonicNetwork::new(vec![block.clone()], Head::identity(4)).unwrap();
    let y = network_forward(&net, &x).unwrap();
    assert!(max_rel(y.data(), block_forward(&block, &x, false, 0).unwrap().data()) < 1e-15);

    let head = Head::init(4, 3, &mut r);
    let net = SonicNetwork::new(vec![block, SonicBlock::zeros(2, 4, 4, 2)], head.clone()).unwrap();
    let y = network_forward(&net, &x).unwrap();
    for (o, b) in head.bias.iter().enumerate() {
        assert!(y.channel(o).iter().all(|v| v == b));
    }

    let bad = SonicNetwork::new(vec![SonicBlock::zeros(1, 2, 3, 2), SonicBlock::zeros(1, 4, 3, 2)], Head::identity(3));
    assert!(matches!(bad, Err(SonicError::Config(_))));
}

#[test]
fn resampling_preserves_mode_responses() {
    let mut r = rng(14);
    let block = SonicBlock::init(3, 2, 2, 2, true, &mut r);
    let g32 = FrequencyGrid::unit(&[32, 32]).unwrap();
    let g64 = FrequencyGrid::unit(&[64, 64]).unwrap();
    assert_eq!(resample_to_grid(&block, &g32).unwrap(), assemble_symbol(&block, &g32).unwrap());
    let f32s = mode_responses(&block, &g32).unwrap();
    let f64s = mode_responses(&block, &g64).unwrap();
    let mut coarse = std::collections::HashMap::new();
    let mut w = [0.0; 2];
    for j in 0..g32.half_len() {
        g32.half_frequency(j, &mut w);
        coarse.insert((w[0].to_bits(), w[1].to_bits()), j);
    }
    let mut shared = 0;
    for i in 0..g64.half_len() {
        g64.half_frequency(i, &mut w);
        let Some(&j) = coarse.get(&(w[0].to_bits(), w[1].to_bits())) else { continue };
        shared += 1;
        for m in 0..3 {
            assert_eq!(f32s[m][j], f64s[m][i]);
        }
    }
    assert!(shared > 200);
    assert!(resample_to_grid(&block, &FrequencyGrid::unit(&[8]).unwrap()).is_err());
}

#[test]
fn dc_symbol_is_grid_independent() {
    let mut r = rng(15);
    let mut block = SonicBlock::init(3, 2, 2, 2, false, &mut r);
    block.gain_normalize = false;
    let a = assemble_symbol(&block, &FrequencyGrid::new(&[16, 16], &[1.0, 1.0]).unwrap()).unwrap();
    let b = assemble_symbol(&block, &FrequencyGrid::new(&[32, 32], &[0.5, 0.5]).unwrap()).unwrap();
    let c = assemble_symbol(&block, &FrequencyGrid::new(&[7, 9], &[0.3, 2.0]).unwrap()).unwrap();
    for k in 0..2 {
        for ch in 0..2 {
            assert_eq!(a.get(k, ch, 0), b.get(k, ch, 0));
            assert_eq!(a.get(k, ch, 0), c.get(k, ch, 0));
        }
    }
}

#[test]
fn real_output_residual_is_small() {
    let mut r = rng(16);
    let block = SonicBlock::init(4, 2, 2, 2, true, &mut r);
    let grid = FrequencyGrid::unit(&[8, 6]).unwrap();
    let s = assemble_symbol(&block, &grid).unwrap();
    for k in 0..2 {
        for c in 0..2 {
            assert!(spatial_kernel(&s, k, c).unwrap().imag_residual < 1e-10);
        }
    }
}

#[test]
fn json_round_trip_is_bit_exact() {
    let mut r = rng(17);
    let cfg = NetworkConfig {
        in_channels: 3,
        width: 4,
        modes: 3,
        depth: 2,
        out_channels: 6,
        dim: 2,
        gain_normalize: true,
        mode_dropout_rate: 0.1,
    };
    let mut net = SonicNetwork::init(&cfg, 5).unwrap();
    net.blocks[0].modes[0].sigma = 0.1 + 0.2;
    net.blocks[1].skip[0] = -0.0;
    net.head.bias[2] = 1e-300;
    let _ = r.normal();
    let text = network_to_json(&net).unwrap();
    let back = network_from_json(&text).unwrap();
    assert_eq!(back.params(), net.params());
    let bits = |p: &crate::params::ParamMap| -> Vec<u64> { p.iter().flat_map(|(_, v)| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect() };
    assert_eq!(bits(&back.params()), bits(&net.params()));
    assert_eq!(network_to_json(&back).unwrap(), text);
    assert!(text.contains("\"W_s\""));
    assert!(network_from_json("{\"format\":\"x\"}").is_err());
}

#[test]
fn spectral_energy_mirrors_the_half_spectrum() {
    let mut r = rng(17);
    let block = SonicBlock::init(3, 2, 2, 2, false, &mut r);
    let grid = FrequencyGrid::unit(&[6, 8]).unwrap();
    let e = spectral_energy(&block, &grid).unwrap();
    assert_eq!(e.len(), 48);
    let s = assemble_symbol(&block, &grid).unwrap();
    let at = |n: usize| (0..2).flat_map(|k| (0..2).map(move |c| (k, c))).map(|(k, c)| s.get(k, c, n).norm_sqr()).sum::<f64>();
    assert_eq!(e[0], at(0));
    assert_eq!(e[8 + 3], at(5 + 3));
    // only the columns missing from the half spectrum are mirrored
    for i in 0..6 {
        for j in 5..8 {
            assert_eq!(e[i * 8 + j], e[((6 - i) % 6) * 8 + 8 - j]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convolution_theorem_for_random_symbols(seed in any::<u64>(), h in 1usize..=8, w in 1usize..=8) {
        let mut r = rng(seed);
        let grid = FrequencyGrid::unit(&[h, w]).unwrap();
        let s = random_symbol(2, 2, &grid, &mut r);
        let x = random_signal(2, &grid, &mut r);
        let direct = circular_convolve_direct(&kernels(&s), &x).unwrap();
        prop_assert!(max_rel(spectral_path(&s, &x).data(), direct.data()) < 1e-9);
    }

    #[test]
    fn params_round_trip(seed in any::<u64>()) {
        let cfg = NetworkConfig { in_channels: 2, width: 3, modes: 2, depth: 2, out_channels: 2, dim: 2, gain_normalize: false, mode_dropout_rate: 0.0 };
        let net = SonicNetwork::init(&cfg, seed).unwrap();
        let mut other = SonicNetwork::init(&cfg, seed.wrapping_add(1)).unwrap();
        other.set_params(&net.params()).unwrap();
        prop_assert_eq!(other, net);
    }
}

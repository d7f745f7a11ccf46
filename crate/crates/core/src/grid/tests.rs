use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use super::*;
use crate::oracle::dft_direct;
use crate::rng::SeededRng;

fn random_signal(channels: usize, dims: &[usize], seed: u64) -> Signal {
    let grid = FrequencyGrid::unit(dims).unwrap();
    let mut rng = SeededRng::new(seed, crate::rng::stream::TEST);
    let data = (0..channels * grid.len()).map(|_| rng.normal()).collect();
    Signal::new(channels, data, grid).unwrap()
}

/// Index of a half-spectrum bin inside the full row-major spectrum.
fn half_to_full(grid: &FrequencyGrid, h: usize) -> usize {
    let hd = grid.half_dims();
    let dims = grid.dims();
    let mut rem = h;
    let mut idx = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        idx[a] = rem % hd[a];
        rem /= hd[a];
    }
    idx.iter().zip(dims).fold(0, |acc, (i, d)| acc * d + i)
}

#[test]
fn grid_examples() {
    let g = FrequencyGrid::new(&[4], &[1.0]).unwrap();
    assert_eq!(g.freqs(0), &[0.0, PI / 2.0, -PI, -PI / 2.0]);
    let g = FrequencyGrid::new(&[1], &[1.0]).unwrap();
    assert_eq!(g.freqs(0), &[0.0]);
    let g = FrequencyGrid::new(&[3], &[0.5]).unwrap();
    let f = g.freqs(0);
    assert_eq!(f[0], 0.0);
    assert!((f[1] - 4.0 * PI / 3.0).abs() < 1e-15);
    assert!((f[2] + 4.0 * PI / 3.0).abs() < 1e-15);
}

#[test]
fn grid_rejects_bad_arguments() {
    assert!(FrequencyGrid::new(&[0, 4], &[1.0, 1.0]).is_err());
    assert!(FrequencyGrid::new(&[4], &[0.0]).is_err());
    assert!(FrequencyGrid::new(&[4], &[-1.0]).is_err());
    assert!(FrequencyGrid::new(&[4, 4], &[1.0]).is_err());
}

#[test]
fn doubled_grid_contains_original_frequencies_bitwise() {
    for n in [3usize, 4, 5, 8, 17] {
        let g = FrequencyGrid::new(&[n], &[0.37]).unwrap();
        let g2 = FrequencyGrid::new(&[2 * n], &[0.37]).unwrap();
        for &w in g.freqs(0) {
            assert!(g2.freqs(0).iter().any(|&v| v.to_bits() == w.to_bits()), "n={n} w={w}");
        }
    }
}

#[test]
fn constant_and_impulse_spectra() {
    let grid = FrequencyGrid::unit(&[6]).unwrap();
    let x = Signal::new(1, vec![2.5; 6], grid.clone()).unwrap();
    let s = dft_forward(&x);
    assert!((s.data()[0] - Complex64::new(15.0, 0.0)).norm() < 1e-12);
    assert!(s.data()[1..].iter().all(|v| v.norm() < 1e-12));

    let grid = FrequencyGrid::unit(&[4, 5]).unwrap();
    let mut d = vec![0.0; 20];
    d[0] = 1.0;
    let s = dft_forward(&Signal::new(1, d, grid).unwrap());
    assert!(s.data().iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-14));
}

#[test]
fn fast_transform_matches_direct_sum() {
    for dims in [vec![4, 4], vec![5, 7], vec![16, 16], vec![3, 8], vec![9], vec![2, 3, 5]] {
        let x = random_signal(1, &dims, dims.iter().product::<usize>() as u64);
        let fast = dft_forward(&x);
        let direct = dft_direct(x.channel(0), &dims);
        let scale = direct.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (h, v) in fast.channel(0).iter().enumerate() {
            let e = direct[half_to_full(x.grid(), h)];
            assert!((v - e).norm() <= 1e-10 * scale, "dims {dims:?} bin {h}");
        }
    }
}

#[test]
fn round_trip_4x4_below_1e12() {
    let x = random_signal(2, &[4, 4], 11);
    let back = dft_inverse(&dft_forward(&x));
    let err = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12, "{err}");
}

#[test]
fn dc_is_real_and_hermitian_pairs_match() {
    let x = random_signal(1, &[6, 8], 5);
    let s = dft_forward(&x);
    assert_eq!(s.data()[0].im.abs() < 1e-12, true);
    // column 0 of the half spectrum holds both k and -k along axis 0
    let row = x.grid().half_row_len();
    for k in 1..6 {
        let a = s.data()[k * row];
        let b = s.data()[(6 - k) * row];
        assert!((a - b.conj()).norm() <= 1e-12 * a.norm().max(1.0));
    }
}

#[test]
fn enforce_dc_real_examples() {
    let grid = FrequencyGrid::unit(&[4]).unwrap();
    let mut s = Spectrum::zeros(1, grid.clone());
    s.data_mut()[0] = Complex64::new(3.0, 2.0);
    s.data_mut()[1] = Complex64::new(1.0, -1.0);
    let out = enforce_dc_real(s);
    assert_eq!(out.data()[0], Complex64::new(3.0, 0.0));
    assert_eq!(out.data()[1], Complex64::new(1.0, -1.0));
    let again = enforce_dc_real(out.clone());
    assert_eq!(again, out);
    let z = Spectrum::zeros(2, grid);
    assert_eq!(enforce_dc_real(z.clone()), z);
}

#[test]
fn standardize_examples() {
    let grid = FrequencyGrid::unit(&[2]).unwrap();
    let x = Signal::new(1, vec![1.0, 3.0], grid).unwrap();
    assert_eq!(standardize_input(&x, 0.0, 0).unwrap().data(), &[-1.0, 1.0]);

    let grid = FrequencyGrid::unit(&[4]).unwrap();
    let x = Signal::new(1, vec![5.0; 4], grid).unwrap();
    assert_eq!(standardize_input(&x, 0.0, 0).unwrap().data(), &[0.0; 4]);

    let x = random_signal(3, &[8, 8], 2);
    let once = standardize_input(&x, 0.0, 0).unwrap();
    let twice = standardize_input(&once, 0.0, 0).unwrap();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    for c in 0..3 {
        let ch = once.channel(c);
        let mean = ch.iter().sum::<f64>() / 64.0;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}

#[test]
fn standardize_noise_is_seeded() {
    let x = random_signal(1, &[8, 8], 3);
    let a = standardize_input(&x, 0.1, 42).unwrap();
    let b = standardize_input(&x, 0.1, 42).unwrap();
    let c = standardize_input(&x, 0.1, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(standardize_input(&x, -1.0, 0).is_err());
}

#[test]
fn signal_shape_is_checked() {
    let grid = FrequencyGrid::unit(&[4]).unwrap();
    assert!(Signal::new(1, vec![0.0; 3], grid.clone()).is_err());
    assert!(Signal::new(1, vec![0.0, f64::NAN, 0.0, 0.0], grid.clone()).is_err());
    assert!(Spectrum::new(1, vec![Complex64::new(0.0, 0.0); 4], grid).is_err());
}

proptest! {
    #[test]
    fn parseval_holds(rows in 1usize..=16, cols in 1usize..=16, seed in any::<u64>()) {
        let x = random_signal(1, &[rows, cols], seed);
        let s = dft_forward(&x);
        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = s.data().iter().enumerate()
            .map(|(i, v)| x.grid().half_weight(i) * v.norm_sqr()).sum::<f64>() / x.grid().len() as f64;
        prop_assert!((spatial - spectral).abs() <= 1e-9 * spatial.max(1e-300));
    }

    #[test]
    fn round_trip_any_size(rows in 1usize..=12, cols in 1usize..=12, seed in any::<u64>()) {
        let x = random_signal(2, &[rows, cols], seed);
        let back = dft_inverse(&dft_forward(&x));
        let norm = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-10 * norm.max(1e-300));
    }
}

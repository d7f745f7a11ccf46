use num_complex::Complex64;

use super::*;
use crate::grid::{dft_forward, FrequencyGrid, Signal};
use crate::modes::{transfer_at, Mode};
use crate::rng::{stream, SeededRng};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_signal(channels: usize, dims: &[usize], rng: &mut SeededRng) -> Signal {
    let grid = FrequencyGrid::unit(dims).unwrap();
    let data = (0..channels * grid.len()).map(|_| rng.normal()).collect();
    Signal::new(channels, data, grid).unwrap()
}

#[test]
fn impulse_kernel_is_identity_and_shift_kernel_shifts() {
    let mut rng = SeededRng::new(1, stream::TEST);
    let x = random_signal(1, &[5, 6], &mut rng);
    let mut k = Signal::zeros(1, x.grid().clone());
    k.data_mut()[0] = 1.0;
    assert_eq!(circular_convolve_direct(&k, &x).unwrap(), x);

    // impulse at (1, 2) shifts by (1, 2)
    let mut k = Signal::zeros(1, x.grid().clone());
    k.data_mut()[6 + 2] = 1.0;
    let y = circular_convolve_direct(&k, &x).unwrap();
    for r in 0..5 {
        for col in 0..6 {
            let src = ((r + 5 - 1) % 5) * 6 + (col + 6 - 2) % 6;
            assert_eq!(y.data()[r * 6 + col], x.data()[src]);
        }
    }
}

#[test]
fn convolution_theorem_on_random_signals() {
    let mut rng = SeededRng::new(2, stream::TEST);
    for dims in [vec![4, 4], vec![3, 5], vec![7]] {
        let f = random_signal(1, &dims, &mut rng);
        let g = random_signal(1, &dims, &mut rng);
        let conv = circular_convolve_direct(&f, &g).unwrap();
        let lhs = dft_direct(conv.channel(0), &dims);
        let ff = dft_direct(f.channel(0), &dims);
        let fg = dft_direct(g.channel(0), &dims);
        let scale = lhs.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..lhs.len() {
            assert!((lhs[i] - ff[i] * fg[i]).norm() <= 1e-9 * scale);
        }
    }
}

#[test]
fn direct_and_fast_dft_agree_on_odd_sizes() {
    let mut rng = SeededRng::new(3, stream::TEST);
    let x = random_signal(1, &[7, 9], &mut rng);
    let fast = dft_forward(&x);
    let full = dft_direct(x.channel(0), &[7, 9]);
    for r in 0..7 {
        for col in 0..5 {
            assert!((fast.channel(0)[r * 5 + col] - full[r * 9 + col]).norm() < 1e-10 * 10.0);
        }
    }
    let back = idft_direct(&full, &[7, 9]);
    for (a, b) in back.iter().zip(x.data()) {
        assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
    }
}

#[test]
fn resolvent_examples() {
    let sys = LtiSystem::scalar(c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
    assert!((resolvent_transfer(&sys, c(0.0, 0.0)).unwrap().data[0] - c(1.0, 0.0)).norm() < 1e-15);
    assert!((resolvent_transfer(&sys, c(0.0, 1.0)).unwrap().data[0] - c(0.5, -0.5)).norm() < 1e-15);

    let a = CMatrix::from_real(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
    let b = CMatrix::from_real(2, 1, &[1.0, 1.0]);
    let cm = CMatrix::from_real(1, 2, &[1.0, 1.0]);
    let sys = LtiSystem::new(a, b, cm).unwrap();
    assert!((resolvent_transfer(&sys, c(0.0, 0.0)).unwrap().data[0] - c(1.5, 0.0)).norm() < 1e-15);

    let sing = LtiSystem::scalar(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
    assert!(resolvent_transfer(&sing, c(0.0, 0.0)).is_err());
}

#[test]
fn impulse_response_examples() {
    let sys = LtiSystem::scalar(c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
    let k = impulse_response_numeric(&sys, 2f64.ln(), 2f64.ln()).unwrap();
    assert_eq!(k[0].data[0], c(1.0, 0.0));
    assert!((k[1].data[0].re - 0.5).abs() < 1e-14);

    let a = CMatrix::from_real(2, 2, &[-1.0, 0.3, 0.0, -2.0]);
    let b = CMatrix::from_real(2, 1, &[1.0, 2.0]);
    let cm = CMatrix::from_real(1, 2, &[0.5, -1.0]);
    let sys = LtiSystem::new(a, b.clone(), cm.clone()).unwrap();
    let k0 = impulse_response_numeric(&sys, 0.0, 0.1).unwrap();
    assert_eq!(k0[0], cm.mul(&b));
}

#[test]
fn numeric_laplace_converges_to_resolvent() {
    let sys = LtiSystem::scalar(c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
    let dt = 1e-3;
    let k = impulse_response_numeric(&sys, 40.0, dt).unwrap();
    let s = c(0.0, 1.0);
    let numeric = laplace_numeric(&k, dt, s).data[0];
    let exact = resolvent_transfer(&sys, s).unwrap().data[0];
    assert!((numeric - exact).norm() < 1e-3, "{numeric} vs {exact}");
}

#[test]
fn s4nd_reduction_is_exact_on_grid() {
    let grid = FrequencyGrid::unit(&[16, 16]).unwrap();
    let m = Mode::new(&[1.0, 0.0], 1.0, c(-1.0, 0.0), 0.0).unwrap();
    assert!(s4nd_reduction_check(&m, 0, &grid).unwrap() < 1e-15);
    let t = transfer_at(&m, &[1.0, 5.0]);
    assert!((t - c(0.5, -0.5)).norm() < 1e-15);
    let t0 = transfer_at(&m, &[0.0, 3.0]);
    assert_eq!(t0, c(1.0, 0.0));

    let tilted = Mode::new(&[1.0, 0.1], 1.0, c(-1.0, 0.0), 0.0).unwrap();
    assert!(s4nd_reduction_check(&tilted, 0, &grid).is_err());
    let penalized = Mode::new(&[0.0, 1.0], 1.0, c(-1.0, 0.0), 0.2).unwrap();
    assert!(s4nd_reduction_check(&penalized, 1, &grid).is_err());
}

#[test]
fn absorbed_parameter_identity() {
    let mut rng = SeededRng::new(4, stream::TEST);
    for _ in 0..100 {
        let s = rng.uniform_range(0.05, 5.0);
        let a = c(-rng.uniform_range(0.01, 3.0), rng.uniform_range(-3.0, 3.0));
        let w = rng.uniform_range(-20.0, 20.0);
        let m = Mode::new(&[0.0, 1.0], s, a, 0.0).unwrap();
        let t = transfer_at(&m, &[0.7, w]);
        let sys = LtiSystem::scalar(a / s, c(1.0, 0.0), c(1.0, 0.0));
        let h = resolvent_transfer(&sys, c(0.0, w)).unwrap().data[0] / s;
        assert!((t - h).norm() <= 1e-12 * t.norm().max(1.0));
    }
}

#[test]
fn verification_suite_passes() {
    for check in crate::oracle::run_suite() {
        assert!(check.passed, "{check}");
    }
}

use super::*;
use crate::rng::{stream, SeededRng};

#[test]
fn synthshape_is_deterministic_and_in_range() {
    for seed in 0..20 {
        let a = gen_synthshape(seed, 32).unwrap();
        let b = gen_synthshape(seed, 32).unwrap();
        assert_eq!(a, b);
        assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.mask().unwrap().iter().all(|&v| v <= 5));
        assert!((2..=6).contains(&a.shapes.len()));
    }
    assert!(gen_synthshape(0, 15).is_err());
}

#[test]
fn synthshape_mask_matches_rerasterized_shapes() {
    for seed in 0..20 {
        let s = gen_synthshape(seed, 48).unwrap();
        let size = 48;
        let mask = s.mask().unwrap();
        for class in ShapeClass::ALL {
            // independent per-pixel test against the stored list
            for idx in 0..size * size {
                let (x, y) = ((idx % size) as f64 + 0.5, (idx / size) as f64 + 0.5);
                let hit = s.shapes.iter().any(|p| p.class == class && p.contains(x, y));
                assert_eq!(mask[idx] == class.id(), hit, "seed {seed} idx {idx}");
            }
        }
    }
}

#[test]
fn synthshape_primitives_do_not_overlap() {
    for seed in 0..30 {
        let s = gen_synthshape(seed, 32).unwrap();
        for idx in 0..32 * 32 {
            let (x, y) = ((idx % 32) as f64 + 0.5, (idx / 32) as f64 + 0.5);
            assert!(s.shapes.iter().filter(|p| p.contains(x, y)).count() <= 1);
        }
    }
}

#[test]
fn every_class_is_drawn_somewhere() {
    let mut seen = [false; 6];
    for seed in 0..50 {
        for &v in gen_synthshape(seed, 32).unwrap().mask().unwrap() {
            seen[v as usize] = true;
        }
    }
    assert!(seen.iter().all(|s| *s));
}

#[test]
fn halligalli_rule_examples() {
    use ShapeClass::*;
    assert_eq!(halligalli_label(&[Circle, Circle, Square, Triangle]), Some(0));
    assert_eq!(halligalli_label(&[Square, Triangle, Triangle, Circle]), Some(2));
    assert_eq!(halligalli_label(&[Square, Square, Circle, Circle]), None);
    assert_eq!(halligalli_label(&[Square, Square, Square, Circle]), None);
}

#[test]
fn halligalli_is_deterministic_and_consistent() {
    for seed in 0..50 {
        let a = gen_halligalli(seed, 32).unwrap();
        assert_eq!(a, gen_halligalli(seed, 32).unwrap());
        let corners: [ShapeClass; 4] = std::array::from_fn(|i| a.shapes[i].class);
        assert_eq!(halligalli_label(&corners), a.label());
        assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(gen_halligalli(0, 31).is_err());
}

#[test]
fn halligalli_labels_are_balanced() {
    let mut counts = [0usize; 3];
    for seed in 0..10_000 {
        // the label is drawn first, so generating the full image is not needed
        let mut rng = SeededRng::new(seed, stream::HALLIGALLI);
        counts[rng.int_range(0, 3)] += 1;
    }
    for seed in 0..200 {
        let l = gen_halligalli(seed, 32).unwrap().label().unwrap();
        let mut rng = SeededRng::new(seed, stream::HALLIGALLI);
        assert_eq!(l, rng.int_range(0, 3));
    }
    for c in counts {
        assert!((c as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
    }
}

#[test]
fn halligalli_corners_stay_clear_of_the_centre() {
    let s = gen_halligalli(3, 32).unwrap();
    let lo = (32 - HALLIGALLI_PATCH) / 2;
    for p in &s.shapes {
        for i in lo..lo + HALLIGALLI_PATCH {
            for j in lo..lo + HALLIGALLI_PATCH {
                assert!(!p.contains(j as f64 + 0.5, i as f64 + 0.5));
            }
        }
    }
}

fn p(kind: PerturbationKind, level: f64) -> Perturbation {
    Perturbation::new(kind, level).unwrap()
}

#[test]
fn zero_noise_is_identity() {
    let s = gen_synthshape(1, 32).unwrap();
    assert_eq!(apply_perturbation(&s, p(PerturbationKind::Noise, 0.0), 9).unwrap(), s);
}

#[test]
fn unit_rescale_is_identity() {
    let s = gen_synthshape(2, 32).unwrap();
    assert_eq!(apply_perturbation(&s, p(PerturbationKind::Rescale, 1.0), 0).unwrap(), s);
}

#[test]
fn translate_shifts_by_floor_of_fraction() {
    let s = gen_synthshape(4, 64).unwrap();
    let t = apply_perturbation(&s, p(PerturbationKind::Translate, 0.10), 0).unwrap();
    let (m, mt) = (s.mask().unwrap(), t.mask().unwrap());
    for i in 0..64 {
        for j in 0..64 {
            let expect = if i >= 6 && j >= 6 { m[(i - 6) * 64 + j - 6] } else { 0 };
            assert_eq!(mt[i * 64 + j], expect);
            for c in 0..3 {
                let e = if i >= 6 && j >= 6 { s.image.channel(c)[(i - 6) * 64 + j - 6] } else { 0.0 };
                assert_eq!(t.image.channel(c)[i * 64 + j], e);
            }
        }
    }
}

#[test]
fn full_turn_rotation_is_identity() {
    let s = gen_synthshape(5, 32).unwrap();
    let r = apply_perturbation(&s, p(PerturbationKind::Rotate, 360.0), 0).unwrap();
    let err = r.image.data().iter().zip(s.image.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
    assert_eq!(r.mask(), s.mask());
}

#[test]
fn perturbed_masks_keep_valid_labels() {
    let s = gen_synthshape(6, 32).unwrap();
    for (kind, levels) in SEVERITY_GRID {
        for l in levels {
            let out = apply_perturbation(&s, p(kind, l), 11).unwrap();
            assert!(out.mask().unwrap().iter().all(|&v| v <= 5));
            assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(out, apply_perturbation(&s, p(kind, l), 11).unwrap());
        }
    }
    for tier in 0..3 {
        apply_combined(&s, tier, 3).unwrap();
    }
    assert!(apply_combined(&s, 3, 3).is_err());
}

#[test]
fn translation_only_moves_labels() {
    let s = gen_synthshape(7, 32).unwrap();
    let t = apply_perturbation(&s, p(PerturbationKind::Translate, 0.2), 0).unwrap();
    let count = |m: &[u8], c: u8| m.iter().filter(|&&v| v == c).count();
    for c in 1..=5u8 {
        assert!(count(t.mask().unwrap(), c) <= count(s.mask().unwrap(), c));
    }
}

#[test]
fn labels_survive_perturbation() {
    let s = gen_halligalli(8, 32).unwrap();
    let out = apply_perturbation(&s, p(PerturbationKind::Rotate, 30.0), 0).unwrap();
    assert_eq!(out.label(), s.label());
}

#[test]
fn bad_levels_are_rejected() {
    assert!(Perturbation::new(PerturbationKind::Rescale, 0.0).is_err());
    assert!(Perturbation::new(PerturbationKind::Noise, -0.1).is_err());
    assert!(Perturbation::new(PerturbationKind::Translate, f64::NAN).is_err());
    assert!("shear".parse::<PerturbationKind>().is_err());
    assert!("mnist".parse::<TaskKind>().is_err());
}

#[test]
fn sample_files_round_trip() {
    let dir = std::env::temp_dir().join(format!("sonic-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    for kind in [TaskKind::SynthShape, TaskKind::HalliGalli] {
        let samples: Vec<_> = (0..3).map(|s| kind.generate(s, 32).unwrap()).collect();
        let path = dir.join(format!("{}.bin", kind.name()));
        write_samples(&path, &samples).unwrap();
        let back = read_samples(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.target, b.target);
            assert_eq!(a.seed, b.seed);
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}

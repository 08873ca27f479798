use cladnet::augment::{
    crop_and_resize, crop_and_resize_at, crop_len, random_noise, time_warp, time_warp_with, zero_masking,
    AugmentKind, AugmentSpec, WarpMap,
};
use cladnet_core::Tensor64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_window(rng: &mut ChaCha8Rng, l: usize, d: usize) -> Tensor64 {
    Tensor64::from_fn([l, d], |_| rng.random_range(-2.0..2.0))
}

/// Linear interpolation written against the definition: the value at a
/// fractional index is the weighted mean of its two neighbours.
fn interp_oracle(samples: &[f64], p: f64) -> f64 {
    let lo = p.floor();
    let hi = p.ceil();
    if lo == hi {
        return samples[lo as usize];
    }
    samples[lo as usize] * (hi - p) + samples[hi as usize] * (p - lo)
}

#[test]
fn noise_sample_std() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = Tensor64::zeros([10_000, 1]);
    let y = random_noise(&x, 0.1, &mut rng);
    let n = y.len() as f64;
    let mean = y.data().iter().sum::<f64>() / n;
    let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    assert!((0.095..=0.105).contains(&sd), "sample std {sd}");
}

#[test]
fn noise_is_reproducible() {
    let x = random_window(&mut ChaCha8Rng::seed_from_u64(1), 16, 3);
    let a = random_noise(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(9));
    let b = random_noise(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
}

#[test]
fn zero_mask_leaves_the_rest_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_window(&mut rng, 40, 4);
    let y = zero_masking(&x, 0.25, &mut ChaCha8Rng::seed_from_u64(77));
    let masked: Vec<usize> = (0..40).filter(|&r| y.row(r) != x.row(r)).collect();
    assert_eq!(masked.len(), 10);
    assert_eq!(masked[9] - masked[0], 9, "span must be contiguous");
    for r in 0..40 {
        if masked.contains(&r) {
            assert!(y.row(r).iter().all(|&v| v == 0.0));
        } else {
            assert_eq!(y.row(r), x.row(r));
        }
    }
}

#[test]
fn constant_channels_are_fixed_points() {
    let x = Tensor64::full([24, 2], 3.25);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    assert_eq!(time_warp(&x, 4, 0.5, &mut rng), x);
    assert_eq!(crop_and_resize(&x, &mut rng), x);
}

#[test]
fn vanishing_warp_strength_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_window(&mut rng, 32, 3);
    let y = time_warp(&x, 4, 1e-12, &mut rng);
    for (a, b) in x.data().iter().zip(y.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn warp_of_ramp_matches_interpolation_oracle() {
    let l = 30;
    let ramp: Vec<f64> = (0..l).map(|i| 0.5 * i as f64 - 3.0).collect();
    let x = Tensor64::new([l, 1], ramp.clone()).unwrap();
    let map = WarpMap::sample(l, 4, 0.4, &mut ChaCha8Rng::seed_from_u64(12));
    let y = time_warp_with(&x, &map);

    for t in 0..l {
        // independent evaluation of the piecewise-linear map
        let tf = t as f64;
        let k = map.out_knots.windows(2).position(|w| tf >= w[0] && tf <= w[1]).unwrap();
        let (u0, u1, s0, s1) = (map.out_knots[k], map.out_knots[k + 1], map.src_knots[k], map.src_knots[k + 1]);
        let src = s0 + (s1 - s0) * (tf - u0) / (u1 - u0);
        let expected = interp_oracle(&ramp, src);
        assert!((y.data()[t] - expected).abs() < 1e-12, "t={t}");
        // on a ramp, interpolation is exact: value is the ramp at the warped time
        assert!((y.data()[t] - (0.5 * src - 3.0)).abs() < 1e-12);
    }
}

#[test]
fn crop_of_ramp_matches_interpolation_oracle() {
    let l = 10;
    let ramp: Vec<f64> = (0..l).map(|i| i as f64).collect();
    let x = Tensor64::new([l, 1], ramp.clone()).unwrap();
    let y = crop_and_resize_at(&x, 0);
    let crop = crop_len(l);
    assert_eq!(crop, 5);
    for i in 0..l {
        let p = i as f64 * (crop - 1) as f64 / (l - 1) as f64;
        assert!((y.data()[i] - interp_oracle(&ramp, p)).abs() < 1e-12);
    }
}

#[test]
fn crop_is_shared_across_channels() {
    // channel c carries the ramp shifted by 100·c, so every output row
    // must keep the same fractional source index in all channels
    let l = 16;
    let x = Tensor64::from_fn([l, 3], |i| (i / 3) as f64 + 100.0 * (i % 3) as f64);
    for seed in 0..20 {
        let y = crop_and_resize(&x, &mut ChaCha8Rng::seed_from_u64(seed));
        for r in 0..l {
            let row = y.row(r);
            assert!((row[1] - row[0] - 100.0).abs() < 1e-12);
            assert!((row[2] - row[0] - 200.0).abs() < 1e-12);
        }
    }
}

#[test]
fn crop_start_covers_the_full_range() {
    let l = 12;
    let x = Tensor64::from_fn([l, 1], |i| i as f64);
    let mut seen = std::collections::BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..2000 {
        let y = crop_and_resize(&x, &mut rng);
        seen.insert(y.data()[0] as usize);
    }
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), (0..=l - crop_len(l)).collect::<Vec<_>>());
}

#[test]
fn distinct_seeds_give_distinct_views() {
    let x = random_window(&mut ChaCha8Rng::seed_from_u64(4), 32, 3);
    for kind in AugmentKind::ALL {
        let spec = AugmentSpec::with_kind(kind);
        let views: Vec<Tensor64> = (0..8)
            .map(|s| spec.apply(&x, &mut ChaCha8Rng::seed_from_u64(s)))
            .collect();
        let distinct = views
            .iter()
            .enumerate()
            .any(|(i, a)| views[i + 1..].iter().any(|b| a != b));
        assert!(distinct, "{kind:?} produced identical views for 8 seeds");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn shape_and_finiteness_preserved(seed in any::<u64>(), l in 4usize..40, d in 1usize..5, k in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_window(&mut rng, l, d);
        let y = AugmentSpec::with_kind(AugmentKind::ALL[k]).apply(&x, &mut rng);
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.all_finite());
    }

    #[test]
    fn determinism_per_seed(seed in any::<u64>(), k in 0usize..4) {
        let x = random_window(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), 20, 3);
        let spec = AugmentSpec::with_kind(AugmentKind::ALL[k]);
        let a = spec.apply(&x, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = spec.apply(&x, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn resampling_commutes_with_affine_maps(
        seed in any::<u64>(),
        scale in 0.1f64..5.0,
        offset in -10.0f64..10.0,
        warp in any::<bool>(),
    ) {
        let x = random_window(&mut ChaCha8Rng::seed_from_u64(seed ^ 7), 24, 3);
        let ax = x.map(|v| scale * v + offset);
        let spec = AugmentSpec::with_kind(if warp { AugmentKind::TimeWarp } else { AugmentKind::CropResize });
        let lhs = spec.apply(&ax, &mut ChaCha8Rng::seed_from_u64(seed));
        let rhs = spec.apply(&x, &mut ChaCha8Rng::seed_from_u64(seed)).map(|v| scale * v + offset);
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

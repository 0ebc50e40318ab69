//! Property tests: algebraic identities of the transform and layers,
//! metric identities, model invariants and decoder robustness.

mod common;

use common::{dyadic_conv_naive, ht2d_by_matrix, rng};
use phunet::autodiff::{Graph, Tensor};
use phunet::checkpoint::Checkpoint;
use phunet::data::{bias, dataset, nifti, raw, Volume};
use phunet::layers::{hard_threshold_composed, hard_threshold_value, soft_threshold_value};
use phunet::metrics::{cv, dice, iou};
use phunet::model::{hunet_forward, perturb, ModelConfig, ModelParams};
use phunet::train::TrainConfig;
use phunet::wht::{dyadic_conv_bruteforce, fwht_1d, ht_2d, iht_2d, sequency_permutation, Normalization};
use phunet::{Image, Mask};
use proptest::prelude::*;

fn pow2() -> impl Strategy<Value = usize> {
    (1u32..=5).prop_map(|k| 1usize << k)
}

fn image(side: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(-10.0f64..10.0, side * side).prop_map(move |d| Image::new(side, side, d).unwrap())
}

fn sized_image() -> impl Strategy<Value = Image> {
    pow2().prop_flat_map(image)
}

fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn transform_is_an_involution(x in sized_image()) {
        let back = iht_2d(&ht_2d(&x).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&back, &x) <= 1e-10);
    }

    #[test]
    fn transform_preserves_energy(x in sized_image()) {
        let s = ht_2d(&x).unwrap();
        let (a, b) = (x.frobenius_norm(), s.coeffs().frobenius_norm());
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn transform_matches_matrix_definition(x in sized_image()) {
        let s = ht_2d(&x).unwrap();
        prop_assert!(max_abs_diff(s.coeffs(), &ht2d_by_matrix(&x)) <= 1e-10);
    }

    #[test]
    fn transform_is_linear((x, y) in pow2().prop_flat_map(|m| (image(m), image(m))), a in -3.0f64..3.0) {
        let lhs = ht_2d(&x.zip_with(&y, |u, v| a * u + v).unwrap()).unwrap();
        let (sx, sy) = (ht_2d(&x).unwrap(), ht_2d(&y).unwrap());
        let rhs = sx.coeffs().zip_with(sy.coeffs(), |u, v| a * u + v).unwrap();
        prop_assert!(max_abs_diff(lhs.coeffs(), &rhs) <= 1e-10);
    }

    #[test]
    fn convolution_theorem(
        (a, b) in pow2().prop_flat_map(|m| (
            prop::collection::vec(-4.0f64..4.0, m),
            prop::collection::vec(-4.0f64..4.0, m),
        ))
    ) {
        let conv = dyadic_conv_naive(&a, &b);
        let brute = dyadic_conv_bruteforce(&a, &b).unwrap();
        prop_assert_eq!(&conv, &brute);
        let lhs = fwht_1d(&conv, Normalization::Unnormalized).unwrap();
        let fa = fwht_1d(&a, Normalization::Unnormalized).unwrap();
        let fb = fwht_1d(&b, Normalization::Unnormalized).unwrap();
        for (l, (p, q)) in lhs.iter().zip(fa.iter().zip(&fb)) {
            prop_assert!((l - p * q).abs() <= 1e-9);
        }
    }

    #[test]
    fn sequency_order_is_a_permutation(m in pow2()) {
        let mut p = sequency_permutation(m).unwrap();
        p.sort_unstable();
        prop_assert_eq!(p, (0..m).collect::<Vec<_>>());
    }

    #[test]
    fn hard_threshold_keeps_or_zeroes(x in -5.0f64..5.0, t in 0.0f64..5.0) {
        let want = if x.abs() > t { x } else { 0.0 };
        prop_assert_eq!(hard_threshold_value(x, t), want);
        prop_assert_eq!(hard_threshold_value(t, t), 0.0);
        prop_assert_eq!(hard_threshold_value(-t, t), 0.0);
        prop_assert!((hard_threshold_composed(x, t) - want).abs() <= 1e-15 * x.abs().max(1.0));
        prop_assert!(soft_threshold_value(x, t).abs() <= x.abs());
    }

    #[test]
    fn graph_hard_threshold_is_exact(
        xs in prop::collection::vec(-2.0f64..2.0, 16),
        ts in prop::collection::vec(0.0f64..2.0, 4),
    ) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[4, 1, 2, 2], xs.clone()).unwrap());
        let t = g.constant(Tensor::new(&[1, 2, 2], ts.clone()).unwrap());
        let y = g.hard_threshold(x, t).unwrap();
        for (i, (&v, &out)) in xs.iter().zip(g.value(y).data()).enumerate() {
            let th = ts[i % 4];
            prop_assert_eq!(out, if v.abs() > th { v } else { 0.0 });
        }
    }

    #[test]
    fn dice_iou_identity(bits in prop::collection::vec(any::<(bool, bool)>(), 1..200)) {
        let n = bits.len();
        let a = Mask::new(1, n, bits.iter().map(|p| p.0).collect()).unwrap();
        let b = Mask::new(1, n, bits.iter().map(|p| p.1).collect()).unwrap();
        if let (Ok(d), Ok(j)) = (dice(&a, &b), iou(&a, &b)) {
            prop_assert!((d - 2.0 * j / (1.0 + j)).abs() <= 1e-12);
        }
    }

    #[test]
    fn cv_is_scale_invariant(vals in prop::collection::vec(0.1f64..10.0, 2..64), k in 0.01f64..100.0) {
        let n = vals.len();
        let img = Image::new(1, n, vals).unwrap();
        let roi = Mask::from_fn(1, n, |_, _| true);
        let (a, b) = (cv(&img, &roi).unwrap(), cv(&img.map(|v| k * v), &roi).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn bias_stays_in_range(seed in any::<u64>()) {
        let b = bias::gen_bias(&mut rng(seed), 32, None).unwrap();
        let (lo, hi) = b.min_max();
        prop_assert!(lo >= bias::BIAS_MIN && hi <= bias::BIAS_MAX);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn field_is_positive_for_random_parameters(seed in any::<u64>(), sigma in 0.0f64..2.0) {
        let mut r = rng(seed);
        let mut p = ModelParams::init(ModelConfig::tiny(8), &mut r).unwrap();
        perturb(&mut p, &mut r, sigma);
        let x = Image::from_fn(8, 8, |y, c| ((y * 8 + c) as f64 * 0.37 + seed as f64).sin() * 5.0);
        let (u, _) = hunet_forward(&p, &x).unwrap();
        prop_assert!(u.image().data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut p = ModelParams::init(ModelConfig::tiny(4), &mut r).unwrap();
        perturb(&mut p, &mut r, 1.0);
        let ck = Checkpoint::of_params(p);
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        prop_assert_eq!(back.encode().unwrap(), ck.encode().unwrap());
    }

    #[test]
    fn volume_codecs_roundtrip(
        dims in (1usize..6, 1usize..6, 1usize..4),
        seed in any::<u64>(),
    ) {
        let n = dims.0 * dims.1 * dims.2;
        // Arbitrary bit patterns, including subnormals and NaN payloads.
        let data: Vec<f32> = (0..n as u64).map(|i| f32::from_bits(dataset::item_seed(seed, i) as u32)).collect();
        let v = Volume::new([dims.0, dims.1, dims.2], data).unwrap();
        let back = nifti::decode(&nifti::encode(&v).unwrap()).unwrap();
        prop_assert_eq!(bits(&back), bits(&v));
        let side = raw::Sidecar { dims: v.dims, dtype: raw::DTYPE.into(), seed: None };
        let back = raw::decode(&side, &raw::encode(&v)).unwrap();
        prop_assert_eq!(bits(&back), bits(&v));
    }

    #[test]
    fn decoders_reject_garbage_without_panicking(bytes in prop::collection::vec(any::<u8>(), 0..600)) {
        let _ = nifti::decode(&bytes);
        let _ = Checkpoint::decode(&bytes);
        let text = String::from_utf8_lossy(&bytes);
        let _ = raw::decode_sidecar(&text);
        let _ = dataset::DatasetManifest::from_json(&text);
        let _ = TrainConfig::from_toml(&text);
    }
}

fn bits(v: &Volume) -> (Vec<u32>, [usize; 3]) {
    (v.data.iter().map(|x| x.to_bits()).collect(), v.dims)
}

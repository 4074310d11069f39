mod common;

use common::{
    jittered_params, max_abs_diff, pad_clip, permute_within_views, random_adjacency, random_layer,
    random_stacks, small_model, small_quota,
};
use egospeed::data::{Action, CategoryQuota, Clip, SuperCategory};
use egospeed::graph::spectral::{laplacian_spectrum, spectral_cheb_conv};
use egospeed::graph::{cheb_conv, encode_clip_spatial, masked_max_pool, Activation, GraphOperator};
use egospeed::model::{argmax, forward, predict_logits, softmax_rows, Variant};
use egospeed::train::gradcheck::random_clip;
use ndarray::{s, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn chebyshev_recurrence_matches_eigendecomposition(
        seed in any::<u64>(),
        n in 1usize..=8,
        order in 0usize..=5,
        in_dim in 1usize..=4,
        out_dim in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GraphOperator::from_adjacency(random_adjacency(&mut rng, n)).unwrap();
        let p = random_layer(&mut rng, order, in_dim, out_dim);
        let x = Array2::from_shape_fn((n, in_dim), |_| rng.gen_range(-1.0..1.0));
        for act in [Activation::Identity, Activation::Relu] {
            let a = cheb_conv(x.view(), &g, &p, act).unwrap();
            let b = spectral_cheb_conv(x.view(), &g, &p, act).unwrap();
            prop_assert!(max_abs_diff(&a, &b) <= 1e-10, "diff {}", max_abs_diff(&a, &b));
        }
    }

    #[test]
    fn laplacian_is_psd_with_spectrum_in_0_2(seed in any::<u64>(), n in 1usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GraphOperator::from_adjacency(random_adjacency(&mut rng, n)).unwrap();
        let spec = laplacian_spectrum(&g);
        prop_assert!(spec[0] >= -1e-10, "{spec:?}");
        prop_assert!(spec[n - 1] <= 2.0 + 1e-10, "{spec:?}");
        let n_real = rng.gen_range(0..=n);
        let padded = GraphOperator::complete(n_real, n).unwrap();
        prop_assert!(laplacian_spectrum(&padded)[0] >= -1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pooled_features_ignore_order_of_real_objects(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let quota = small_quota();
        let stacks = random_stacks(&mut rng);
        let clip = random_clip(4, &quota, Action::FullBraking, &mut rng);
        let shuffled = permute_within_views(&clip, &quota, &mut rng);
        let a = encode_clip_spatial(&clip, &stacks, &quota, Activation::Relu).unwrap();
        let b = encode_clip_spatial(&shuffled, &stacks, &quota, Activation::Relu).unwrap();
        prop_assert!(max_abs_diff(&a.car, &b.car) <= 1e-12);
        prop_assert!(max_abs_diff(&a.pedestrian, &b.pedestrian) <= 1e-12);
        prop_assert!(max_abs_diff(&a.traffic, &b.traffic) <= 1e-12);

        let cfg = small_model(Variant::Full);
        let params = jittered_params(&cfg, seed);
        let clip3 = random_clip(cfg.history, &quota, Action::FullBraking, &mut rng);
        let shuffled3 = permute_within_views(&clip3, &quota, &mut rng);
        let la = forward(&clip3, &params).unwrap().logits;
        let lb = forward(&shuffled3, &params).unwrap().logits;
        for (x, y) in la.iter().zip(&lb) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn extra_padding_changes_nothing(seed in any::<u64>(), extra in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = random_layer(&mut rng, 3, 4, 5);
        let n_real = rng.gen_range(1..=6);
        let x = Array2::from_shape_fn((n_real, 4), |_| rng.gen_range(0.0..1.0));
        let mut xp = Array2::<f64>::zeros((n_real + extra, 4));
        xp.slice_mut(s![..n_real, ..]).assign(&x);
        let tight = cheb_conv(x.view(), &GraphOperator::complete(n_real, n_real).unwrap(), &layer, Activation::Relu).unwrap();
        let padded = cheb_conv(xp.view(), &GraphOperator::complete(n_real, n_real + extra).unwrap(), &layer, Activation::Relu).unwrap();
        let real = padded.slice(s![..n_real, ..]).to_owned();
        prop_assert!(max_abs_diff(&tight, &real) <= 1e-12);
        let mask: Vec<bool> = (0..n_real + extra).map(|i| i < n_real).collect();
        let pa = masked_max_pool(tight.view(), &vec![true; n_real]).unwrap();
        let pb = masked_max_pool(padded.view(), &mask).unwrap();
        for (a, b) in pa.iter().zip(&pb) {
            prop_assert!((a - b).abs() <= 1e-12);
        }

        let variant = Variant::ALL[rng.gen_range(0..5)];
        let cfg = small_model(variant);
        let params = jittered_params(&cfg, seed);
        let bigger = CategoryQuota::new(cfg.quota.car + extra, cfg.quota.pedestrian + 1, cfg.quota.traffic + extra).unwrap();
        let mut wide = params.clone();
        wide.config.quota = bigger;
        let clip = random_clip(cfg.history, &cfg.quota, Action::SlightBraking, &mut rng);
        let la = forward(&clip, &params).unwrap().logits;
        let lb = forward(&pad_clip(&clip, &cfg.quota, &bigger), &wide).unwrap().logits;
        for (a, b) in la.iter().zip(&lb) {
            prop_assert!((a - b).abs() <= 1e-12, "{variant}: {a} vs {b}");
        }
    }

    #[test]
    fn probabilities_lie_on_the_simplex(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Array2::from_shape_fn((8, 4), |_| rng.gen_range(-1.0..1.0) * scale);
        let p = softmax_rows(&logits);
        for row in p.rows() {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        let cfg = small_model(Variant::ALL[(seed % 5) as usize]);
        let params = jittered_params(&cfg, seed);
        let clip = random_clip(cfg.history, &cfg.quota, Action::FullAcceleration, &mut rng);
        let pred = forward(&clip, &params).unwrap();
        prop_assert!(pred.probs.iter().all(|&v| v >= 0.0));
        prop_assert!((pred.probs.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn argmax_ignores_a_common_logit_shift(seed in any::<u64>(), shift in -1e3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Array1::from_shape_fn(4, |_| rng.gen_range(-5.0..5.0));
        let shifted = &z + shift;
        prop_assert_eq!(argmax(z.view()), argmax(shifted.view()));
        let p = softmax_rows(&z.clone().insert_axis(ndarray::Axis(0)));
        let q = softmax_rows(&shifted.insert_axis(ndarray::Axis(0)));
        prop_assert_eq!(argmax(p.row(0)), argmax(z.view()));
        prop_assert!(max_abs_diff(&p, &q) <= 1e-12);
    }

    #[test]
    fn views_only_see_their_own_slots(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let quota = small_quota();
        let stacks = random_stacks(&mut rng);
        let clip = random_clip(3, &quota, Action::FullBraking, &mut rng);
        let mut other = clip.clone();
        for t in 0..3 {
            for i in quota.slots(SuperCategory::Pedestrian) {
                other.mask[[t, i]] = true;
                other.features.slice_mut(s![t, i, ..]).assign(&ndarray::arr1(&[0.1, 0.2, 0.3, 0.4]));
            }
        }
        let a = encode_clip_spatial(&clip, &stacks, &quota, Activation::Relu).unwrap();
        let b = encode_clip_spatial(&other, &stacks, &quota, Activation::Relu).unwrap();
        prop_assert_eq!(a.car, b.car);
        prop_assert_eq!(a.traffic, b.traffic);
    }

    #[test]
    fn batched_and_single_clip_logits_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_model(Variant::Full);
        let params = jittered_params(&cfg, seed);
        let clips: Vec<Clip> = (0..5)
            .map(|i| random_clip(cfg.history, &cfg.quota, Action::ALL[i % 4], &mut rng))
            .collect();
        let batch = predict_logits(&clips, &params).unwrap();
        for (i, c) in clips.iter().enumerate() {
            let single = forward(c, &params).unwrap().logits;
            for (a, b) in batch.row(i).iter().zip(&single) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

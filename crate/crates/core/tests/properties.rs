use std::sync::Arc;

use proptest::prelude::*;
use tkan::cnn::global_avg_pool;
use tkan::data::{
    decode_features, encode_features, normalize_length, resize_bilinear, synth_gait_dataset, ByteOrder,
    ClipRecord, Condition, DatasetSplit, GrayFrame, SynthConfig,
};
use tkan::numerics::ops::softmax;
use tkan::numerics::optim::{adam_step, AdamState, SchedulerState};
use tkan::numerics::{Rng, Tensor};
use tkan::spline::{Activation, KanLayer, SplineGrid};
use tkan::train::metrics::{cmc, cosine_similarity, roc_auc};
use tkan::train::{evaluate_embeddings, Embedded, EvalProtocol};

fn gallery_and_probes(seed: u64, subjects: u32, width: usize) -> Vec<Embedded> {
    let mut rng = Rng::new(seed);
    let views = ["036", "090", "144"];
    let mut out = Vec::new();
    for s in 1..=subjects {
        for (k, (cond, seq)) in [(Condition::Nm, 1), (Condition::Nm, 2), (Condition::Nm, 3), (Condition::Nm, 5), (Condition::Bg, 1), (Condition::Cl, 1)]
            .into_iter()
            .enumerate()
        {
            out.push(Embedded {
                subject: s,
                condition: cond,
                seq,
                view: views[k % 3].into(),
                embedding: (0..width).map(|_| rng.normal()).collect(),
            });
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&z).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn basis_is_a_nonnegative_partition(u in -1.0f64..=1.0, g in 1usize..9, p in 0usize..5) {
        let grid = SplineGrid::new(-1.0, 1.0, g, p).unwrap();
        let b = grid.basis(u);
        prop_assert_eq!(b.len(), g + p);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(b.iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn basis_has_local_support(u in -1.0f64..=1.0, g in 1usize..9, p in 0usize..5) {
        let grid = SplineGrid::new(-1.0, 1.0, g, p).unwrap();
        let knots = grid.knots();
        let b = grid.basis(u);
        prop_assert!(b.iter().filter(|&&v| v != 0.0).count() <= p + 1);
        for (k, &v) in b.iter().enumerate() {
            if v != 0.0 {
                prop_assert!(knots[k] <= u && u <= knots[k + p + 1]);
            }
        }
    }

    #[test]
    fn zero_coefficients_collapse_to_linear(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 4)) {
        let mut rng = Rng::new(seed);
        let mut layer = KanLayer::new(4, 3, Arc::new(SplineGrid::default()), Activation::Identity, &mut rng).unwrap();
        layer.coeffs.data_mut().iter_mut().for_each(|c| *c = 0.0);
        let (y, _) = layer.forward(&x).unwrap();
        for (j, yj) in y.iter().enumerate() {
            let lin: f64 = (0..4).map(|i| layer.alpha.data()[j * 4 + i] * x[i]).sum();
            prop_assert!((yj - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_ignores_increasing_transforms(seed in any::<u64>(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let mut rng = Rng::new(seed);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let scores: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let warped: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|&s| (scale * s + shift).exp()).collect()).collect();
        let a = roc_auc(&scores, &labels).unwrap();
        let b = roc_auc(&warped, &labels).unwrap();
        prop_assert!((a.micro - b.micro).abs() < 1e-12);
        prop_assert!((a.macro_avg - b.macro_avg).abs() < 1e-12);
    }

    #[test]
    fn rankings_ignore_positive_scaling(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let all = gallery_and_probes(seed, 5, 6);
        let scaled: Vec<Embedded> = all.iter().cloned().map(|mut e| { e.embedding.iter_mut().for_each(|v| *v *= scale); e }).collect();
        let a = evaluate_embeddings(&all, &EvalProtocol::default()).unwrap();
        let b = evaluate_embeddings(&scaled, &EvalProtocol::default()).unwrap();
        for (x, y) in a.conditions.iter().zip(&b.conditions) {
            let rx: Vec<_> = x.outcomes.iter().map(|o| o.rank).collect();
            let ry: Vec<_> = y.outcomes.iter().map(|o| o.rank).collect();
            prop_assert_eq!(rx, ry);
        }
    }

    #[test]
    fn cmc_is_monotone(seed in any::<u64>()) {
        let res = evaluate_embeddings(&gallery_and_probes(seed, 7, 4), &EvalProtocol::default()).unwrap();
        for c in &res.conditions {
            prop_assert!(c.cmc.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.rank5 >= c.rank1);
        }
    }

    #[test]
    fn cmc_of_arbitrary_ranks_is_monotone(ranks in prop::collection::vec(1usize..12, 0..30)) {
        let curve = cmc(&ranks, 12);
        prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(curve.iter().all(|&v| (0.0..=100.0).contains(&v)));
    }

    #[test]
    fn gap_ignores_spatial_permutation(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (c, h, w) = (3, 4, 5);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.normal()).collect();
        let mut perm: Vec<usize> = (0..h * w).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let mut y = vec![0.0; x.len()];
        for ch in 0..c {
            for (dst, &src) in perm.iter().enumerate() {
                y[ch * h * w + dst] = x[ch * h * w + src];
            }
        }
        let a = global_avg_pool(&Tensor::from_vec(&[c, h, w], x).unwrap()).unwrap();
        let b = global_avg_pool(&Tensor::from_vec(&[c, h, w], y).unwrap()).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn length_is_always_normalized(len in 1usize..300, target in 1usize..120) {
        let frames: Vec<usize> = (0..len).collect();
        let out = normalize_length(&frames, target).unwrap();
        prop_assert_eq!(out.len(), target);
        prop_assert!(out.iter().all(|&f| f < len));
    }

    #[test]
    fn resize_stays_in_unit_range(h in 1usize..12, w in 1usize..12, oh in 1usize..20, ow in 1usize..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let f = GrayFrame::new(h, w, (0..h * w).map(|_| rng.uniform()).collect()).unwrap();
        let g = resize_bilinear(&f, oh, ow);
        for y in 0..oh {
            for x in 0..ow {
                prop_assert!((0.0..=1.0).contains(&g.at(y, x)));
            }
        }
    }

    #[test]
    fn feature_files_round_trip(t in 1usize..20, d in 1usize..20, big in any::<bool>(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x: Vec<f64> = (0..t * d).map(|_| rng.normal() as f32 as f64).collect();
        let tensor = Tensor::from_vec(&[t, d], x).unwrap();
        let order = if big { ByteOrder::Big } else { ByteOrder::Little };
        let bytes = encode_features(&tensor, order).unwrap();
        let back = decode_features(&bytes).unwrap();
        prop_assert_eq!(back.shape(), tensor.shape());
        prop_assert!(back.data().iter().zip(tensor.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(encode_features(&back, order).unwrap(), bytes);
    }

    #[test]
    fn adam_second_moment_is_nonnegative(grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 5), 1..10)) {
        let mut params = vec![0.5; 5];
        let mut state = AdamState::new(5);
        for g in &grads {
            adam_step("p", &mut params, g, &mut state, 1e-3).unwrap();
            prop_assert!(state.v.iter().all(|&v| v >= 0.0));
            prop_assert!(params.iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn scheduler_never_raises_lr(losses in prop::collection::vec(0.0f64..10.0, 1..60)) {
        let mut s = SchedulerState::new(1e-3);
        let mut lr = s.lr;
        for l in losses {
            let d = s.step(l);
            prop_assert!(d.lr <= lr);
            prop_assert!(d.lr >= s.min_lr);
            lr = d.lr;
        }
    }

    #[test]
    fn cosine_is_bounded(a in prop::collection::vec(-1e3f64..1e3, 1..16), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.normal() * 100.0).collect();
        let c = cosine_similarity(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((cosine_similarity(&a, &a) - 1.0).abs() < 1e-12 || a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlapping_subjects_are_rejected(a in 1u32..20, b in 1u32..20) {
        let clip = |s: u32| ClipRecord::features(s, Condition::Nm, 1, "090", Tensor::zeros(&[2, 3])).unwrap();
        let split = DatasetSplit::new(vec![clip(a)], vec![clip(b)]);
        prop_assert_eq!(split.is_ok(), a != b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn synthetic_splits_are_disjoint_and_valid(subjects in 2usize..6, clips in 1usize..4, seed in any::<u64>()) {
        let mut cfg = SynthConfig::new(subjects, clips);
        cfg.side = 16;
        cfg.frames = 6;
        let split = synth_gait_dataset(&cfg, seed).unwrap();
        prop_assert!(split.train_subjects().is_disjoint(&split.test_subjects()));
        prop_assert_eq!(split.train().len() + split.test().len(), subjects * clips);
        for r in split.train().iter().chain(split.test()) {
            prop_assert_eq!(r.len(), 6);
            let t = r.frame_tensor().unwrap();
            prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

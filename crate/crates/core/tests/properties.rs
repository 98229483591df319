use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use travgrid_core::disambiguation::ops::{masked_predict, refine_label};
use travgrid_core::disambiguation::{ClassGrid, PrototypeBank, QueuePair};
use travgrid_core::encoder::{Encoder, EncoderConfig};
use travgrid_core::eval::{match_and_score, GroundTruthGrid, Level};
use travgrid_core::labeling::{
    extract_tokens, rasterize_polygon, transform_to_current, LabelGrid, PseudoLabel, TokenConfig,
    VehiclePose, CELL_VALUES,
};
use travgrid_core::terrain::{Channel, ElevationCell, ElevationGrid, FeatureMap, GridGeometry};
use travgrid_nn::{Graph, Tensor};

/// Two-pass mean and population variance.
fn batch_stats(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    (mean, z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Even-odd crossing test of a single point.
fn inside(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut odd = false;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a[1] > y) != (b[1] > y) {
            let xc = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x < xc {
                odd = !odd;
            }
        }
    }
    odd
}

fn small_encoder(seed: u64) -> Encoder<f64> {
    let cfg = EncoderConfig {
        input_len: 6,
        dim: 8,
        blocks: 2,
        heads: 2,
        mlp_ratio: 2,
        init_std: 0.5,
    };
    Encoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_merge_fusion_matches_batch_statistics(
        z in prop::collection::vec(-50.0f64..50.0, 1..60),
        cuts in prop::collection::vec(0usize..60, 0..5),
    ) {
        let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c % (z.len() + 1)).collect();
        bounds.push(0);
        bounds.push(z.len());
        bounds.sort_unstable();
        let mut merged = ElevationCell::<f64>::default();
        for w in bounds.windows(2) {
            let mut part = ElevationCell::default();
            for &v in &z[w[0]..w[1]] {
                part.push(v);
            }
            merged = merged.merge(&part);
        }
        let (mean, var) = batch_stats(&z);
        prop_assert_eq!(merged.n as usize, z.len());
        prop_assert!((merged.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        if z.len() > 1 {
            prop_assert!(rel(merged.variance().unwrap(), var) < 1e-9 || var < 1e-12);
        }
        let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(merged.spread().unwrap(), hi - lo);
    }

    #[test]
    fn grid_merge_equals_fusing_everything(
        pts in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0, -1.0f64..1.0), 1..80),
        split in 0usize..80,
    ) {
        let geom = GridGeometry::new(0.0, 0.0, 0.5, 4, 4);
        let pts: Vec<[f64; 3]> = pts.into_iter().map(|(x, y, z)| [x, y, z]).collect();
        let s = split % (pts.len() + 1);
        let mut all = ElevationGrid::<f64>::new(geom);
        all.fuse_points(&pts);
        let (mut a, mut b) = (ElevationGrid::new(geom), ElevationGrid::new(geom));
        a.fuse_points(&pts[..s]);
        b.fuse_points(&pts[s..]);
        let m = a.merge(&b).unwrap();
        for (x, y) in m.cells().iter().zip(all.cells()) {
            prop_assert_eq!(x.n, y.n);
            prop_assert!((x.mean - y.mean).abs() < 1e-12);
            prop_assert!((x.m2 - y.m2).abs() < 1e-9);
        }
    }

    #[test]
    fn rasterization_matches_point_in_polygon(
        cx in -6.0f64..6.0, cy in -6.0f64..6.0,
        ax in 0.05f64..3.0, ay in 0.05f64..3.0, rot in 0.0f64..6.3,
        mut angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 4),
    ) {
        angles.sort_by(f64::total_cmp);
        let quad: Vec<[f64; 2]> = angles
            .iter()
            .map(|t| {
                let (ex, ey) = (ax * t.cos(), ay * t.sin());
                [cx + ex * rot.cos() - ey * rot.sin(), cy + ex * rot.sin() + ey * rot.cos()]
            })
            .collect();
        let geom = GridGeometry::new(-5.0, -5.0, 0.2, 50, 50);
        let got = rasterize_polygon(&quad, &geom);
        let mut want = Vec::new();
        for r in 0..geom.height {
            for c in 0..geom.width {
                let (x, y) = geom.cell_center(r, c);
                if inside(&quad, x, y) {
                    want.push(geom.index(r, c));
                }
            }
        }
        prop_assert_eq!(got, want);
    }

    #[test]
    fn same_pose_transform_is_identity(
        x in -100.0f64..100.0, y in -100.0f64..100.0, z in -5.0f64..5.0,
        yaw in -3.2f64..3.2,
        p in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let pose = VehiclePose::from_yaw(0.0, x, y, z, yaw);
        let pt = Vector3::new(p[0], p[1], p[2]);
        let back = transform_to_current(&[pt], &pose, &pose)[0];
        prop_assert!((back - pt).norm() < 1e-9);
    }

    #[test]
    fn soft_labels_stay_on_the_simplex(
        k in 2usize..7,
        steps in prop::collection::vec((0usize..7, 0.0f32..=1.0), 0..300),
    ) {
        let mut y = PseudoLabel::Unlabeled.initial_soft(k);
        for (t, m) in steps {
            refine_label(&mut y, t % k, m);
            prop_assert!(y.iter().all(|&v| v >= 0.0));
            let s: f64 = y.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6, "sum {}", s);
        }
    }

    #[test]
    fn masked_prediction_ignores_power_of_two_scaling(
        probs in prop::collection::vec(0.0f32..1.0, 4),
        positive in any::<bool>(),
        e in -20i32..20,
    ) {
        let y = if positive { PseudoLabel::Positive } else { PseudoLabel::Unlabeled }.vector(4);
        let c = 2f32.powi(e);
        let scaled: Vec<f32> = probs.iter().map(|p| p * c).collect();
        let a = masked_predict(&probs, &y);
        prop_assert_eq!(a, masked_predict(&scaled, &y));
        if positive {
            prop_assert_eq!(a.class, 0);
        }
    }

    #[test]
    fn queue_pairs_stay_aligned(cap in 1usize..20, labels in prop::collection::vec(0usize..4, 0..80)) {
        let mut q = QueuePair::new(cap, 3).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            q.push(&[i as f32, l as f32, 0.5], l).unwrap();
        }
        prop_assert_eq!(q.len(), labels.len().min(cap));
        let mut seen: Vec<usize> = (0..q.len()).map(|i| q.embedding(i)[0] as usize).collect();
        for i in 0..q.len() {
            let e = q.embedding(i);
            prop_assert_eq!(e[1] as usize, q.label(i));
            prop_assert_eq!(labels[e[0] as usize], q.label(i));
        }
        seen.sort_unstable();
        let newest: Vec<usize> = (labels.len() - q.len()..labels.len()).collect();
        prop_assert_eq!(seen, newest);
    }

    #[test]
    fn prototypes_stay_unit(
        seed in any::<u64>(),
        updates in prop::collection::vec((0usize..4, 0.0f32..1.0), 1..100),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = PrototypeBank::random(4, 16, &mut rng);
        for (c, m) in updates {
            let mut z: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = z.iter().map(|v| v * v).sum::<f32>().sqrt();
            z.iter_mut().for_each(|v| *v /= n);
            bank.update(c, &z, m);
            for psi in bank.vectors() {
                let norm = psi.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn relabelling_classes_keeps_scores(
        gt in prop::collection::vec(0usize..3, 30),
        pred in prop::collection::vec(1u8..5, 30),
        perm in Just([2u8, 3, 4]).prop_shuffle(),
    ) {
        let geom = GridGeometry::new(0.0, 0.0, 1.0, 6, 5);
        let truth = GroundTruthGrid {
            geometry: geom,
            levels: gt.iter().map(|&l| Some(Level::ALL[l])).collect(),
        };
        let a = ClassGrid { geometry: geom, classes: pred.clone() };
        let b = ClassGrid {
            geometry: geom,
            classes: pred.iter().map(|&c| if c == 1 { 1 } else { perm[c as usize - 2] }).collect(),
        };
        let (sa, sb) = (
            match_and_score(&a, &truth, 4, None).unwrap(),
            match_and_score(&b, &truth, 4, None).unwrap(),
        );
        prop_assert_eq!(sa.pixel_accuracy, sb.pixel_accuracy);
        prop_assert_eq!(sa.mean_iou, sb.mean_iou);
        prop_assert!((0.0..=1.0).contains(&sa.pixel_accuracy) && (0.0..=1.0).contains(&sa.mean_iou));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn encoder_is_permutation_equivariant(
        seed in any::<u64>(),
        order in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let enc = small_encoder(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = Tensor::from_fn(5, 6, |_, _| rng.gen_range(-2.0..2.0));
        let px = Tensor::from_fn(5, 6, |r, c| x.get(order[r], c));
        let (z, pz) = (enc.embed_window(&x).unwrap(), enc.embed_window(&px).unwrap());
        for r in 0..5 {
            for c in 0..8 {
                // only the summation order inside attention differs
                prop_assert!((pz.get(r, c) - z.get(order[r], c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_branches_reduce_blocks_to_identity(seed in any::<u64>()) {
        let mut enc = small_encoder(seed);
        enc.zero_branch_outputs();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let x = Tensor::from_fn(4, 6, |_, _| rng.gen_range(-2.0..2.0));
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let xv = g.constant(x);
        let e = enc.embed(&mut g, &p, xv).unwrap();
        let t = enc.trunk(&mut g, &p, xv).unwrap();
        prop_assert_eq!(g.value(e).data(), g.value(t).data());
    }

    #[test]
    fn embeddings_have_unit_norm(seed in any::<u64>(), scale in 1e-3f32..1e3) {
        let cfg = EncoderConfig {
            input_len: 10,
            dim: 16,
            blocks: 2,
            heads: 4,
            mlp_ratio: 4,
            init_std: 0.02,
        };
        let enc = Encoder::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let x = Tensor::from_fn(7, 10, |_, _| rng.gen_range(-1.0f32..1.0) * scale);
        let z = enc.embed_window(&x).unwrap();
        for r in 0..7 {
            let n = z.row(r).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-6, "row {} norm {}", r, n);
        }
    }
}

#[test]
fn token_labels_follow_the_centre_cell() {
    let geom = GridGeometry::new(0.0, 0.0, 0.2, 33, 33);
    let mut map = FeatureMap::<f32>::empty(geom);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..geom.len() {
        map.plane_mut(Channel::PredictedMean)[i] = rng.gen_range(-1.0..1.0);
        map.set_known(i, rng.gen_bool(0.9));
    }
    let mut labels = LabelGrid::unlabeled(geom);
    for i in 0..geom.len() {
        labels.positive[i] = rng.gen_bool(0.3);
    }
    let cfg = TokenConfig {
        window: 1,
        channel_center: [0.0; CELL_VALUES],
        ..TokenConfig::default()
    };
    let tokens = extract_tokens(&map, &labels, &cfg, 0).unwrap();
    assert!(!tokens.is_empty());
    for t in &tokens {
        let (r, c) = t.center;
        assert!(map.is_known(r, c));
        let want = if labels.is_positive(r, c) {
            PseudoLabel::Positive
        } else {
            PseudoLabel::Unlabeled
        };
        assert_eq!(t.label, want);
        assert_eq!(t.soft, want.initial_soft(cfg.classes));
    }
}

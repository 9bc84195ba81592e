//! Property tests for the invariants of each module.

use std::path::Path;

use proptest::prelude::*;

use detfuse::calibration::{fit_platt, platt_gradient, platt_objective, smoothed_targets, PlattParams};
use detfuse::corpus::{format_detections, parse_detections, DetectionCorpus, Roster};
use detfuse::eval::ap::{average_precision, ApProtocol};
use detfuse::eval::bound::maximal_map;
use detfuse::eval::evaluate;
use detfuse::features::{image_features, FeatureConfig};
use detfuse::fusion::{cross_nms, naive_merge, NaiveMode, NmsConfig, ScoredDetection};
use detfuse::rankers::problem::Problem;
use detfuse::rankers::{build_problem, optimize, train, Init, LossKind, RankerModel, TrainConfig, TrainingSet};
use detfuse::synth::{DetectorProfile, Scenario};
use detfuse::{BoundingBox, Detection, GroundTruthObject};

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0u32..60, 0u32..60, 2u32..30, 2u32..30)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap())
}

/// Detections of up to two images, `n_det` detectors and `n_cls` classes,
/// on a coarse grid so overlaps and score ties are common.
fn arb_dets(n_det: usize, n_cls: usize, max: usize) -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((0usize..2, 0..n_cls, 0..n_det, arb_box(), 0u32..20), 1..max).prop_map(|v| {
        v.into_iter()
            .map(|(im, c, d, b, s)| {
                let score = (s as f64 + 1.0) / 22.0;
                Detection::new(format!("im{im}"), c, d, b, score).with_calibrated(score)
            })
            .collect()
    })
}

fn rosters(n_det: usize, n_cls: usize) -> (Roster, Roster) {
    (
        Roster::detectors((0..n_det).map(|j| format!("d{j}"))).unwrap(),
        Roster::classes((0..n_cls).map(|c| format!("c{c}"))).unwrap(),
    )
}

fn arb_gts(n_cls: usize) -> impl Strategy<Value = Vec<GroundTruthObject>> {
    prop::collection::vec((0usize..2, 0..n_cls, arb_box()), 0..6).prop_map(|v| {
        v.into_iter()
            .map(|(im, c, b)| GroundTruthObject {
                image_id: format!("im{im}"),
                class_id: c,
                bbox: b,
                difficult: false,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // corpus

    #[test]
    fn detection_records_round_trip(dets in arb_dets(3, 2, 30)) {
        let (d, c) = rosters(3, 2);
        let corpus = DetectionCorpus::new(d.clone(), c.clone(), dets).unwrap();
        let text = format_detections(&corpus);
        let again = parse_detections(Path::new("x"), &text, &d, &c).unwrap();
        prop_assert_eq!(format_detections(&again), text);
        // order within each image survives
        for (image, range) in corpus.images() {
            let a: Vec<_> = corpus.detections()[range].iter().map(|d| (d.bbox, d.detector_id)).collect();
            let b: Vec<_> = again.image(image).iter().map(|d| (d.bbox, d.detector_id)).collect();
            prop_assert_eq!(a, b);
        }
    }

    // calibration

    #[test]
    fn platt_is_monotone(alpha in -5.0f64..-0.01, beta in -3.0f64..3.0, x in -10.0f64..10.0, dx in 0.001f64..5.0) {
        let p = PlattParams::new(alpha, beta);
        let (lo, hi) = (p.apply(x), p.apply(x + dx));
        prop_assert!(hi >= lo);
        // strict away from the saturated tails, where rounding flattens it
        if lo > 1e-9 && hi < 1.0 - 1e-9 {
            prop_assert!(hi > lo, "{lo} {hi}");
        }
        prop_assert!((p.apply(-beta / alpha) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn platt_gradient_matches_differences(
        data in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 4..40),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let scores: Vec<f64> = data.iter().map(|x| x.0).collect();
        let labels: Vec<bool> = data.iter().map(|x| x.1).collect();
        let t = smoothed_targets(&labels);
        let g = platt_gradient(&scores, &t, PlattParams::new(alpha, beta));
        let h = 1e-5;
        let f = |a: f64, b: f64| platt_objective(&scores, &t, PlattParams::new(a, b));
        let fd = [
            (f(alpha + h, beta) - f(alpha - h, beta)) / (2.0 * h),
            (f(alpha, beta + h) - f(alpha, beta - h)) / (2.0 * h),
        ];
        let diff = ((g[0] - fd[0]).powi(2) + (g[1] - fd[1]).powi(2)).sqrt();
        let scale = (g[0].powi(2) + g[1].powi(2)).sqrt().max(1e-8);
        prop_assert!(diff / scale < 1e-5, "{g:?} vs {fd:?}");
    }

    #[test]
    fn platt_fit_ignores_input_order(
        data in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 4..40),
        rot in 0usize..40,
    ) {
        let labels: Vec<bool> = data.iter().map(|x| x.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let scores: Vec<f64> = data.iter().map(|x| x.0).collect();
        let p = fit_platt(&scores, &labels).unwrap();
        let mut rotated = data.clone();
        rotated.rotate_left(rot % data.len());
        let s2: Vec<f64> = rotated.iter().map(|x| x.0).collect();
        let l2: Vec<bool> = rotated.iter().map(|x| x.1).collect();
        prop_assert_eq!(p, fit_platt(&s2, &l2).unwrap());
    }

    // features

    #[test]
    fn image_feature_invariants(dets in arb_dets(3, 3, 25)) {
        let dets: Vec<Detection> = dets.into_iter().map(|mut d| { d.image_id = "im".into(); d }).collect();
        let cfg = FeatureConfig::default();
        let f = image_features(&dets, None, 3, 3, &cfg).unwrap();
        for (d, v) in dets.iter().zip(&f) {
            // shared So per image
            prop_assert_eq!(&v.so, &f[0].so);
            // indicator is the detector's one-hot code
            for j in 0..3 {
                prop_assert_eq!(v.rs[j], if j == d.detector_id { 1.0 } else { 0.0 });
            }
            // own slot holds the detection's own score
            prop_assert_eq!(v.rs[3 + d.detector_id], d.calibrated_score.unwrap());
        }
        // without foreign detections every foreign R is zero
        for j in 0..3 {
            let own: Vec<Detection> = dets.iter().filter(|d| d.detector_id == j).cloned().collect();
            if own.is_empty() { continue; }
            let g = image_features(&own, None, 3, 3, &cfg).unwrap();
            for v in &g {
                for k in (0..3).filter(|&k| k != j) {
                    prop_assert_eq!(v.rs[3 + k], 0.0);
                }
            }
        }
    }

    // rankers

    #[test]
    fn objective_history_never_increases(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 6..30),
        seed in 0u64..1000,
    ) {
        let labels: Vec<f64> = rows.iter().map(|r| ((r[0] + 0.5 * r[1]).tanh() + 1.0) / 2.0).collect();
        let ts = TrainingSet::new(rows, labels).unwrap();
        for loss in LossKind::ALL {
            let cfg = TrainConfig { loss, ..TrainConfig::default() };
            let Ok((problem, _)) = build_problem(&ts, &cfg, 0) else { continue };
            let r = optimize(&problem, &cfg, 0, Init::Random(seed)).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{loss:?}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn score_is_affine_and_bias_shift_keeps_order(
        w in prop::collection::vec(-2.0f64..2.0, 4),
        b in -1.0f64..1.0,
        x in prop::collection::vec(-3.0f64..3.0, 4),
        y in prop::collection::vec(-3.0f64..3.0, 4),
        a in -2.0f64..2.0,
        c in -2.0f64..2.0,
        shift in -5.0f64..5.0,
    ) {
        let m = RankerModel::from_weights(0, w.clone(), b);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + c * q).collect();
        let lhs = m.score(&mix).unwrap() - b;
        let rhs = a * (m.score(&x).unwrap() - b) + c * (m.score(&y).unwrap() - b);
        prop_assert!((lhs - rhs).abs() < 1e-9);
        let shifted = RankerModel::from_weights(0, w, b + shift);
        let order = m.score(&x).unwrap().total_cmp(&m.score(&y).unwrap());
        let order2 = shifted.score(&x).unwrap().total_cmp(&shifted.score(&y).unwrap());
        prop_assert!(order == order2 || (m.score(&x).unwrap() - m.score(&y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn trained_model_ignores_row_order(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 8..24),
        rot in 0usize..24,
    ) {
        let labels: Vec<f64> = rows.iter().map(|r| if r[0] > 0.0 { 0.8 } else { 0.1 }).collect();
        prop_assume!(labels.iter().any(|&l| l > 0.5) && labels.iter().any(|&l| l < 0.5));
        let mut pairs: Vec<(Vec<f64>, f64)> = rows.into_iter().zip(labels).collect();
        let a = TrainingSet::new(pairs.iter().map(|p| p.0.clone()).collect(), pairs.iter().map(|p| p.1).collect()).unwrap();
        let n = pairs.len();
        pairs.rotate_left(rot % n);
        let b = TrainingSet::new(pairs.iter().map(|p| p.0.clone()).collect(), pairs.iter().map(|p| p.1).collect()).unwrap();
        for loss in LossKind::ALL {
            let cfg = TrainConfig { loss, ..TrainConfig::default() };
            prop_assert_eq!(train(&a, 0, &cfg).unwrap(), train(&b, 0, &cfg).unwrap());
        }
    }

    // fusion

    #[test]
    fn nms_keeps_the_top_and_ignores_input_order(dets in arb_dets(3, 1, 16), rot in 0usize..16) {
        let dets: Vec<Detection> = dets.into_iter().map(|mut d| { d.image_id = "im".into(); d }).collect();
        let group: Vec<ScoredDetection> = dets
            .into_iter()
            .enumerate()
            .map(|(i, d)| { let s = d.raw_score; ScoredDetection::new(d, s, i) })
            .collect();
        for cfg in [NmsConfig::default(), NmsConfig { scope: detfuse::fusion::NmsScope::AllPairs, ..NmsConfig::default() }] {
            let flags = cross_nms(&group, 3, &cfg);
            // some detection with the top score always survives
            let best = group.iter().map(|s| s.final_score).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(group.iter().zip(&flags).any(|(s, f)| s.final_score == best && !f));
            let mut rotated = group.clone();
            rotated.rotate_left(rot % group.len());
            let flags2 = cross_nms(&rotated, 3, &cfg);
            for (s, f) in rotated.iter().zip(flags2) {
                prop_assert_eq!(f, flags[s.source_index]);
            }
        }
    }

    #[test]
    fn naive_union_keeps_each_detector_order(dets in arb_dets(3, 2, 30)) {
        let (d, c) = rosters(3, 2);
        let corpus = DetectionCorpus::new(d, c, dets).unwrap();
        let no_nms = NmsConfig { threshold: f64::INFINITY, ..NmsConfig::default() };
        let list = naive_merge(&corpus, NaiveMode::ScoreUnion, &[0, 1, 2], &no_nms).unwrap();
        for class in 0..2 {
            for j in 0..3 {
                let scores: Vec<f64> = list.class(class).iter()
                    .filter(|s| s.detection.detector_id == j)
                    .map(|s| s.detection.raw_score)
                    .collect();
                prop_assert!(scores.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    // evaluation

    #[test]
    fn ap_ignores_monotone_rescoring(dets in arb_dets(1, 2, 20), gts in arb_gts(2), k in 0.1f64..5.0) {
        let rank = |f: &dyn Fn(f64) -> f64| -> Vec<Vec<&Detection>> {
            (0..2).map(|c| {
                let mut v: Vec<&Detection> = dets.iter().filter(|d| d.class_id == c).collect();
                v.sort_by(|a, b| f(b.raw_score).total_cmp(&f(a.raw_score)));
                v
            }).collect()
        };
        let a = evaluate(&rank(&|s| s), &gts, 0.5);
        let b = evaluate(&rank(&|s| (k * s).exp()), &gts, 0.5);
        for p in ApProtocol::BOTH {
            prop_assert_eq!(a.map(p), b.map(p));
        }
    }

    #[test]
    fn maximal_map_bounds_every_ranking(dets in arb_dets(2, 2, 20), gts in arb_gts(2), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let refs: Vec<&Detection> = dets.iter().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for p in ApProtocol::BOTH {
            let bound = maximal_map(&refs, &gts, 2, 0.5, Default::default(), p).map;
            let mut per_class: Vec<Vec<&Detection>> = (0..2)
                .map(|c| refs.iter().copied().filter(|d| d.class_id == c).collect())
                .collect();
            for l in &mut per_class { l.shuffle(&mut rng); }
            let achieved = evaluate(&per_class, &gts, 0.5).map(p);
            if let (Some(a), Some(b)) = (achieved, bound) {
                prop_assert!(a <= b + 1e-12);
            }
        }
    }

    #[test]
    fn average_precision_lies_in_unit_interval(tp in prop::collection::vec(any::<bool>(), 0..30), extra in 0usize..5) {
        let n_pos = tp.iter().filter(|&&t| t).count() + extra;
        for p in ApProtocol::BOTH {
            match average_precision(&tp, n_pos, p) {
                None => prop_assert_eq!(n_pos, 0),
                Some(ap) => prop_assert!((0.0..=1.0).contains(&ap)),
            }
        }
    }
}

// simulator

fn small_scenario(seed: u64) -> Scenario {
    let text = format!(
        "seed = {seed}\nclasses = a, b\ndetectors = x, y\n\
         detector.x.skill = 0.9, 0.0\ndetector.y.skill = 0.0, 0.9\n\
         detector.x.fp_rate = 0.3\ndetector.y.fp_rate = 0.3\n"
    );
    let kv = detfuse::config::KeyValues::parse(Path::new("scenario"), &text).unwrap();
    Scenario::from_key_values(&kv).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let sc = small_scenario(seed);
        let a = sc.simulate_fold("t", 15).unwrap();
        let b = sc.simulate_fold("t", 15).unwrap();
        prop_assert_eq!(format_detections(&a.corpus), format_detections(&b.corpus));
        prop_assert_eq!(a.scene.objects, b.scene.objects);
        prop_assert_eq!(
            detfuse::corpus::format_proposals(&a.proposals),
            detfuse::corpus::format_proposals(&b.proposals)
        );
    }

    #[test]
    fn disjoint_skills_are_complementary(seed in any::<u64>()) {
        let sc = small_scenario(seed);
        let fold = sc.simulate_fold("t", 40).unwrap();
        let gts = &fold.scene.objects;
        let all: Vec<&Detection> = fold.corpus.detections().iter().collect();
        let bound = |dets: &[&Detection]| {
            maximal_map(dets, gts, 2, 0.5, Default::default(), ApProtocol::AllPoints).map.unwrap_or(0.0)
        };
        let combined = bound(&all);
        for j in 0..2 {
            let single: Vec<&Detection> = all.iter().copied().filter(|d| d.detector_id == j).collect();
            prop_assert!(combined > bound(&single));
        }
    }
}

#[test]
fn perfect_profile_reaches_full_bound() {
    let mut sc = small_scenario(5);
    sc.detectors = vec![DetectorProfile::perfect("x", 2)];
    let fold = sc.simulate_fold("t", 20).unwrap();
    let refs: Vec<&Detection> = fold.corpus.detections().iter().collect();
    let m = maximal_map(&refs, &fold.scene.objects, 2, 0.5, Default::default(), ApProtocol::AllPoints);
    assert_eq!(m.map, Some(1.0));
}

#[test]
fn problem_objective_is_convex_along_lines() {
    // midpoint convexity on a fixed logistic problem
    let p = Problem {
        rows: vec![vec![1.0, 0.5, 1.0], vec![-0.3, 2.0, 1.0], vec![0.7, -1.2, 1.0]],
        targets: vec![1.0, -1.0, 1.0],
        loss: detfuse::rankers::problem::RowLoss::Logistic,
        c: 2.0,
    };
    let a = [0.3, -0.4, 0.1];
    let b = [-1.0, 0.8, 0.5];
    let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
    assert!(p.objective(&mid) <= (p.objective(&a) + p.objective(&b)) / 2.0);
}

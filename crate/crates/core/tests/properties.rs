use camsel_core::eval::{baseline_constant, cv_splits, evaluate_with};
use camsel_core::heatmap::{
    build_heatmap, contrastive_loss, point_weights, DetectionBox, GridGeometry, HeatmapConfig, Point, Summation,
};
use camsel_core::model::{load_dataset, save_dataset};
use camsel_core::pipeline::{segments, smooth_labels};
use camsel_core::synth::{generate, SynthConfig};
use camsel_core::{CameraId, Dataset, DatasetConfig, Exec, FeatureBlock, MultiViewSample};
use proptest::prelude::*;

fn sample_strategy(k: usize, f: usize) -> impl Strategy<Value = MultiViewSample> {
    (
        0..k,
        proptest::collection::vec(proptest::option::weighted(0.7, proptest::collection::vec(-1e6f64..1e6, f)), k),
        0i64..10_000,
        0usize..4,
    )
        .prop_map(move |(label, blocks, frame, seq)| {
            let mut blocks: Vec<FeatureBlock> = blocks.into_iter().map(Into::into).collect();
            if !blocks[label].is_present() {
                blocks[label] = FeatureBlock::Present(vec![0.5; f]);
            }
            MultiViewSample {
                game_id: "g".into(),
                sequence_id: format!("s{seq}"),
                frame_index: frame,
                label: CameraId(label),
                blocks,
            }
        })
}

fn interior_box() -> impl Strategy<Value = DetectionBox> {
    (0.0f64..1200.0, 0.0f64..680.0, 1.0f64..80.0, 1.0f64..40.0, proptest::collection::vec(-2.0f64..2.0, 3)).prop_map(
        |(x1, y1, w, h, appearance)| DetectionBox {
            x1,
            y1,
            x2: (x1 + w).min(1280.0),
            y2: (y1 + h).min(720.0),
            appearance,
        },
    )
}

fn stream_strategy() -> impl Strategy<Value = Vec<CameraId>> {
    proptest::collection::vec((0usize..3, 1usize..30), 1..60)
        .prop_map(|runs| runs.into_iter().flat_map(|(c, n)| std::iter::repeat_n(CameraId(c), n)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dataset_round_trip(samples in proptest::collection::vec(sample_strategy(3, 2), 1..40)) {
        let d = Dataset::new(DatasetConfig::new(3, 2), samples).unwrap();
        prop_assume!(d.require_ranges().is_ok());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(&p, &d).unwrap();
        let back = load_dataset(&p, d.config()).unwrap();
        prop_assert_eq!(&back, &d);
        let q = dir.path().join("e.jsonl");
        save_dataset(&q, &back).unwrap();
        prop_assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn interior_weights_sum_to_one(x in 0.0f64..=1280.0, y in 0.0f64..=720.0) {
        let w = point_weights(Point { x, y }, &GridGeometry::default()).unwrap();
        prop_assert!(w.len() <= 4);
        prop_assert!(w.iter().all(|p| p.1 > 0.0));
        prop_assert!((w.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn one_pitch_shift_moves_weights_one_cell(x in 80.0f64..1040.0, y in 40.0f64..600.0) {
        let g = GridGeometry::default();
        let a = point_weights(Point { x, y }, &g).unwrap();
        let b = point_weights(Point { x: x + 80.0, y: y + 80.0 }, &g).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for ((ca, wa), (cb, wb)) in a.iter().zip(&b) {
            prop_assert_eq!(*cb, ca + 1 + g.gx);
            prop_assert!((wa - wb).abs() <= 1e-9);
        }
    }

    #[test]
    fn exact_heatmaps_are_linear(boxes in proptest::collection::vec(interior_box(), 2..30), cut in 0usize..30) {
        let cfg = HeatmapConfig { summation: Summation::Exact, ..HeatmapConfig::new(3) };
        let cut = cut.min(boxes.len());
        let whole = build_heatmap(&boxes, &cfg).unwrap();
        let parts = build_heatmap(&boxes[..cut], &cfg).unwrap().add(&build_heatmap(&boxes[cut..], &cfg).unwrap()).unwrap();
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn heatmap_mass_is_five_per_box(boxes in proptest::collection::vec(interior_box(), 1..30)) {
        let mass = build_heatmap(&boxes, &HeatmapConfig::new(3)).unwrap().total_mass();
        for c in 0..3 {
            let expected = 5.0 * boxes.iter().map(|b| b.appearance[c]).sum::<f64>();
            prop_assert!((mass[c] - expected).abs() <= 1e-6);
        }
    }

    #[test]
    fn contrastive_loss_shape(xi in proptest::collection::vec(-3.0f64..3.0, 4), xj in proptest::collection::vec(-3.0f64..3.0, 4), t in 0.0f64..1.0) {
        let d2: f64 = xi.iter().zip(&xj).map(|(a, b)| (a - b) * (a - b)).sum();
        let similar = contrastive_loss(&xi, &xj, true, 1.0).unwrap();
        prop_assert!((similar - d2).abs() <= 1e-12 * d2.max(1.0));
        let mid: Vec<f64> = xi.iter().zip(&xj).map(|(a, b)| a + t * (b - a)).collect();
        let near = contrastive_loss(&xi, &mid, false, 1.0).unwrap();
        let far = contrastive_loss(&xi, &xj, false, 1.0).unwrap();
        prop_assert!(near >= 0.0 && far >= 0.0);
        prop_assert!(far <= near + 1e-12);
    }

    #[test]
    fn smoother_contract(raw in stream_strategy(), tau in 1usize..40) {
        let out = smooth_labels(&raw, tau);
        prop_assert_eq!(out.len(), raw.len());
        let segs = segments(&out);
        for s in &segs[..segs.len() - 1] {
            prop_assert!(s.1 >= tau);
        }
        prop_assert!(out.iter().all(|c| raw.contains(c)));
        if tau == 1 {
            prop_assert_eq!(&out, &raw);
        }
    }

    #[test]
    fn folds_partition_whole_sequences(seqs in 3usize..12, folds in 2usize..4, seed in 0u64..1000) {
        let (d, _) = generate(&SynthConfig { n_samples: 120, n_sequences: seqs, p_miss: 0.0, seed, ..SynthConfig::default() }).unwrap();
        prop_assume!(seqs >= folds);
        let f = cv_splits(&d, folds, seed).unwrap();
        let mut all: Vec<usize> = f.iter().flat_map(|x| x.test.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
        for fold in &f {
            for &i in &fold.test {
                prop_assert!(fold.test_sequences.contains(&d.samples()[i].sequence_id));
            }
            for &i in &fold.train {
                prop_assert!(!fold.test_sequences.contains(&d.samples()[i].sequence_id));
            }
        }
    }
}

#[test]
fn spike_is_removed() {
    let c = |i| CameraId(i);
    let raw = vec![c(1), c(1), c(1), c(2), c(1), c(1), c(1)];
    assert_eq!(smooth_labels(&raw, 3), vec![c(1); 7]);
}

#[test]
fn same_seed_same_data() {
    let cfg = SynthConfig {
        n_samples: 500,
        seed: 3,
        ..SynthConfig::default()
    };
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
}

#[test]
fn selected_view_always_visible() {
    let (v, _) = generate(&SynthConfig {
        n_samples: 1000,
        p_miss: 0.8,
        ..SynthConfig::default()
    })
    .unwrap();
    assert!(v.samples().iter().all(|s| s.blocks[s.label.index()].is_present()));
}

#[test]
fn labels_are_uniform() {
    let (v, _) = generate(&SynthConfig {
        n_samples: 10_000,
        n_sequences: 20,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut counts = [0f64; 3];
    v.samples().iter().for_each(|s| counts[s.label.index()] += 1.0);
    let e = v.len() as f64 / 3.0;
    let chi2: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
    // chi-square with 2 degrees of freedom, alpha = 0.01
    assert!(chi2 < 9.2103, "chi2 {chi2}, counts {counts:?}");
}

fn prior_dataset() -> Dataset {
    let labels = [0usize, 1, 1, 2];
    let samples = (0..400)
        .map(|i| MultiViewSample {
            game_id: "g".into(),
            sequence_id: format!("s{}", i % 4),
            frame_index: i as i64,
            label: CameraId(labels[(i / 4) % 4]),
            blocks: vec![FeatureBlock::Present(vec![i as f64]); 3],
        })
        .collect();
    Dataset::new(DatasetConfig::new(3, 1), samples).unwrap()
}

#[test]
fn constant_middle_scores_its_prior() {
    let d = prior_dataset();
    let folds = cv_splits(&d, 2, 0).unwrap();
    let r = evaluate_with(&d, &folds, Exec::Serial, 1, |train| Ok((baseline_constant(train)?, None))).unwrap();
    assert!((r.overall_accuracy - 0.5).abs() < 1e-12);
    assert_eq!(r.per_camera[1].accuracy, 1.0);

    let trace: u64 = (0..3).map(|c| r.confusion[c][c]).sum();
    assert_eq!(r.overall_accuracy, trace as f64 / r.total as f64);
    let recomposed: f64 = r.per_camera.iter().map(|c| c.accuracy * c.support as f64).sum::<f64>() / r.total as f64;
    assert!((recomposed - r.overall_accuracy).abs() < 1e-12);
    for (c, row) in r.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<u64>(), r.per_camera[c].support);
    }
}

#[test]
fn constant_baseline_breaks_ties_low() {
    let samples = (0..3)
        .map(|i| MultiViewSample {
            game_id: "g".into(),
            sequence_id: "s".into(),
            frame_index: i,
            label: CameraId(i as usize),
            blocks: vec![FeatureBlock::Present(vec![0.0]); 3],
        })
        .collect();
    let d = Dataset::new(DatasetConfig::new(3, 1), samples).unwrap();
    assert_eq!(baseline_constant(&d).unwrap().camera, CameraId(0));
}

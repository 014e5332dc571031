use camsel_core::forest::argmax;
use camsel_core::pipeline::{train_full, PipelineConfig};
use camsel_core::seed::stream;
use camsel_core::synth::{generate, SynthConfig};
use camsel_core::{train_forest, Classifier, Dataset, Exec, FeatureMatrix, Forest, ForestConfig};
use proptest::prelude::*;
use rand::Rng;

fn noisy(n: usize, dims: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
    let mut rng = stream(seed, "test.noisy", 0);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let c = rng.random_range(0..3usize);
        rows.push((0..dims).map(|d| c as f64 * (d % 2) as f64 + rng.random_range(-1.5..1.5)).collect());
        y.push(c);
    }
    (FeatureMatrix::from_rows(&rows).unwrap(), y)
}

fn complete_synth(n: usize, seed: u64) -> Dataset {
    generate(&SynthConfig {
        n_samples: n,
        p_miss: 0.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
    .0
}

#[test]
fn serial_and_parallel_forests_match() {
    let (x, y) = noisy(300, 6, 1);
    let cfg = ForestConfig {
        seed: 9,
        ..ForestConfig::default()
    };
    let par = train_forest(&x, &y, 3, &cfg).unwrap();
    let ser = train_forest(&x, &y, 3, &ForestConfig { exec: Exec::Serial, ..cfg }).unwrap();
    assert_eq!(par, ser);
}

#[test]
fn save_load_round_trip() {
    let d = complete_synth(200, 3);
    let f = Forest::fit(&d, &ForestConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    f.save(&p).unwrap();
    assert_eq!(Forest::load(&p).unwrap(), f);
}

#[test]
fn empty_aux_is_plain_training() {
    let d = complete_synth(300, 4);
    let cfg = PipelineConfig::default().with_root_seed(17);
    let (via_pipeline, report) = train_full(&d, &Dataset::empty(d.config().clone()), &cfg).unwrap();
    let direct = Forest::fit(&d, &cfg.forest).unwrap();
    assert_eq!(serde_json::to_vec(&via_pipeline).unwrap(), serde_json::to_vec(&direct).unwrap());
    assert_eq!(report.final_training, d.len());
}

#[test]
fn probabilities_sum_to_one() {
    let (x, y) = noisy(200, 4, 2);
    let f = train_forest(&x, &y, 3, &ForestConfig::default()).unwrap();
    for r in 0..x.rows() {
        let p = f.predict_proba(x.row(r)).unwrap();
        approx::assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(f.predict(x.row(r)).unwrap(), argmax(&p));
    }
}

#[test]
fn wrong_width_is_rejected() {
    let (x, y) = noisy(100, 4, 5);
    let f = train_forest(&x, &y, 3, &ForestConfig::default()).unwrap();
    assert!(f.predict_proba(&[0.0; 3]).is_err());
}

#[test]
fn dominant_contributors_need_tracking() {
    let (x, y) = noisy(100, 4, 6);
    let untracked = train_forest(&x, &y, 3, &ForestConfig::default()).unwrap();
    assert!(untracked.dominant_contributors(x.row(0)).is_err());
    let tracked = train_forest(
        &x,
        &y,
        3,
        &ForestConfig {
            track_members: true,
            ..ForestConfig::default()
        },
    )
    .unwrap();
    let c = tracked.dominant_contributors(x.row(0)).unwrap();
    assert!(!c.is_empty());
    assert!(c.windows(2).all(|w| w[0].trees >= w[1].trees));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// A strictly increasing transform of one dimension leaves training-point predictions unchanged.
    /// Trees see every row: a midpoint between two in-bag values can fall on either side of an
    /// out-of-bag row once the axis is warped.
    #[test]
    fn monotone_relabel_invariance(seed in 0u64..1000, dim in 0usize..5, scale in 0.1f64..3.0) {
        let (x, y) = noisy(150, 5, seed);
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .map(|r| {
                let mut v = x.row(r).to_vec();
                v[dim] = (scale * v[dim]).exp();
                v
            })
            .collect();
        let xt = FeatureMatrix::from_rows(&rows).unwrap();
        let cfg = ForestConfig { seed, bootstrap: false, ..ForestConfig::default() };
        let a = train_forest(&x, &y, 3, &cfg).unwrap().predict_batch(&x).unwrap();
        let b = train_forest(&xt, &y, 3, &cfg).unwrap().predict_batch(&xt).unwrap();
        prop_assert_eq!(a, b);
    }

    /// Extra copies of a sample never lower its class probability at its own location.
    #[test]
    fn duplicates_never_lower_own_class(seed in 0u64..1000, pick in 0usize..120, copies in 1usize..6) {
        let (x, y) = noisy(120, 4, seed);
        let f = train_forest(&x, &y, 3, &ForestConfig { seed, ..ForestConfig::default() }).unwrap();
        let base = f.with_leaf_counts(&x, &y).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
        let mut labels = y.clone();
        for _ in 0..copies {
            rows.push(x.row(pick).to_vec());
            labels.push(y[pick]);
        }
        let dup = f.with_leaf_counts(&FeatureMatrix::from_rows(&rows).unwrap(), &labels).unwrap();
        let before = base.predict_proba(x.row(pick)).unwrap()[y[pick]];
        let after = dup.predict_proba(x.row(pick)).unwrap()[y[pick]];
        prop_assert!(after >= before - 1e-12, "{} < {}", after, before);
    }
}

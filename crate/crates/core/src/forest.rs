//! Random forest classifier over flattened multi-view features.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CameraId, Dataset, FeatureMatrix};
use crate::par::{self, Exec};
use crate::seed;
use crate::tree::{GrowParams, Grower, MissingRouting, Tree, TreeNode};

pub const FOREST_FORMAT: &str = "camsel-forest";
pub const FOREST_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Dimensions scanned per node; `None` means `ceil(sqrt(dims))`.
    pub mtry: Option<usize>,
    pub seed: u64,
    #[serde(default = "yes")]
    pub bootstrap: bool,
    #[serde(default)]
    pub track_members: bool,
    #[serde(skip)]
    pub exec: Exec,
}

fn yes() -> bool {
    true
}

/// Equality ignores the execution policy, which never changes the result.
impl PartialEq for ForestConfig {
    fn eq(&self, o: &Self) -> bool {
        self.n_trees == o.n_trees
            && self.max_depth == o.max_depth
            && self.min_leaf == o.min_leaf
            && self.mtry == o.mtry
            && self.seed == o.seed
            && self.bootstrap == o.bootstrap
            && self.track_members == o.track_members
    }
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 20,
            max_depth: 20,
            min_leaf: 5,
            mtry: None,
            seed: 0,
            bootstrap: true,
            track_members: false,
            exec: Exec::default(),
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, dims: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (dims as f64).sqrt().ceil() as usize)
            .clamp(1, dims.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidInput("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidInput("min_leaf must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(Error::InvalidInput("mtry must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that maps a flattened feature vector to class probabilities.
pub trait Classifier: Sync {
    fn n_classes(&self) -> usize;

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Most probable camera; ties go to the lowest index.
    fn predict(&self, x: &[f64]) -> Result<CameraId> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

/// Index of the largest value, first one on ties.
pub fn argmax(p: &[f64]) -> CameraId {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    CameraId(best)
}

/// A training sample id with the number of trees whose reached leaf holds it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contributor {
    pub id: u32,
    pub trees: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    format: String,
    version: u32,
    config: ForestConfig,
    n_classes: usize,
    n_features: usize,
    trees: Vec<Tree>,
}

impl Forest {
    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Train on every sample of a dataset, which must be complete.
    pub fn fit(dataset: &Dataset, config: &ForestConfig) -> Result<Forest> {
        train_forest(&dataset.matrix(), &dataset.labels(), dataset.k(), config)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "feature vector of length {}, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        if let Some(d) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value in dimension {d}")));
        }
        Ok(())
    }

    pub fn predict_batch(&self, x: &FeatureMatrix) -> Result<Vec<CameraId>> {
        par::try_map_indexed(self.config.exec, x.rows(), |r| self.predict(x.row(r)))
    }

    /// Training ids in the leaves `x` reaches, most frequent first, then by id.
    pub fn dominant_contributors(&self, x: &[f64]) -> Result<Vec<Contributor>> {
        if !self.config.track_members {
            return Err(Error::TrackingDisabled);
        }
        self.check_input(x)?;
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for tree in &self.trees {
            if let TreeNode::Leaf { members, .. } = &tree.nodes()[tree.leaf_of(x)] {
                let mut prev = None;
                for &m in members {
                    if prev != Some(m) {
                        *counts.entry(m).or_default() += 1;
                        prev = Some(m);
                    }
                }
            }
        }
        let mut ranked: Vec<Contributor> = counts
            .into_iter()
            .map(|(id, trees)| Contributor { id, trees })
            .collect();
        ranked.sort_by(|a, b| b.trees.cmp(&a.trees).then(a.id.cmp(&b.id)));
        Ok(ranked)
    }

    /// Same structure, with leaf histograms recounted from `(x, y)`.
    pub fn with_leaf_counts(&self, x: &FeatureMatrix, y: &[usize]) -> Result<Forest> {
        check_training(x, y, self.n_classes, false)?;
        if x.cols() != self.n_features {
            return Err(Error::Shape(format!(
                "{} columns, model expects {}",
                x.cols(),
                self.n_features
            )));
        }
        let mut out = self.clone();
        for tree in &mut out.trees {
            let leaves: Vec<usize> = (0..x.rows()).map(|r| tree.leaf_of(x.row(r))).collect();
            for node in tree.nodes_mut() {
                if let TreeNode::Leaf { histogram, members } = node {
                    histogram.iter_mut().for_each(|c| *c = 0);
                    members.clear();
                }
            }
            for (r, &leaf) in leaves.iter().enumerate() {
                if let TreeNode::Leaf { histogram, members } = &mut tree.nodes_mut()[leaf] {
                    histogram[y[r]] += 1;
                    if self.config.track_members {
                        members.push(r as u32);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest> {
        let forest: Forest = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if forest.format != FOREST_FORMAT || forest.version != FOREST_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format {} v{}",
                forest.format, forest.version
            )));
        }
        Ok(forest)
    }
}

impl Classifier for Forest {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Mean over trees of the reached leaf's class frequencies. A leaf that
    /// holds no samples (possible after [`Forest::with_leaf_counts`]) votes
    /// uniformly.
    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut p = vec![0.0; self.n_classes];
        for tree in &self.trees {
            if let TreeNode::Leaf { histogram, .. } = &tree.nodes()[tree.leaf_of(x)] {
                let total: u32 = histogram.iter().sum();
                if total == 0 {
                    p.iter_mut().for_each(|v| *v += 1.0 / self.n_classes as f64);
                } else {
                    for (v, &c) in p.iter_mut().zip(histogram) {
                        *v += f64::from(c) / f64::from(total);
                    }
                }
            }
        }
        let t = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= t);
        Ok(p)
    }
}

fn check_training(x: &FeatureMatrix, y: &[usize], n_classes: usize, need_two: bool) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {n_classes} classes")));
    }
    if let Some((sample, dim)) = x.first_missing() {
        return Err(Error::MissingValues { sample, dim });
    }
    if need_two {
        let first = y[0];
        if y.iter().all(|&c| c == first) {
            return Err(Error::SingleClass);
        }
    }
    Ok(())
}

/// Grow `n_trees` trees, each on its own bootstrap sample and seeded stream.
pub fn train_forest(
    x: &FeatureMatrix,
    y: &[usize],
    n_classes: usize,
    config: &ForestConfig,
) -> Result<Forest> {
    config.validate()?;
    check_training(x, y, n_classes, true)?;
    let n = x.rows();
    let params = GrowParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        mtry: config.resolved_mtry(x.cols()),
        n_classes,
        split_pure: false,
        track_members: config.track_members,
        missing: MissingRouting::Forbid,
    };
    let trees = par::map_indexed(config.exec, config.n_trees, |t| {
        let mut rng = seed::stream(config.seed, "forest.tree", t as u64);
        let samples: Vec<u32> = if config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n as u32)).collect()
        } else {
            (0..n as u32).collect()
        };
        Grower::new(x, y, params).grow(samples, &mut rng)
    });
    Ok(Forest {
        format: FOREST_FORMAT.into(),
        version: FOREST_VERSION,
        config: config.clone(),
        n_classes,
        n_features: x.cols(),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per_class: usize, centers: &[[f64; 4]], seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = seed::Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..n_per_class {
                rows.push(center.iter().map(|m| m + noise.sample(&mut rng)).collect());
                y.push(c);
            }
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn default_hyperparameters() {
        let c = ForestConfig::default();
        assert_eq!((c.n_trees, c.max_depth, c.min_leaf), (20, 20, 5));
        assert_eq!(c.resolved_mtry(96), 10);
        assert_eq!(c.resolved_mtry(24), 5);
    }

    #[test]
    fn separable_gaussians_are_learned() {
        let (x, y) = blobs(100, &[[0.0; 4], [8.0; 4]], 3);
        let f = train_forest(&x, &y, 2, &ForestConfig::default()).unwrap();
        let pred = f.predict_batch(&x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(p, t)| p.index() == **t).count() as f64 / 200.0;
        assert!(acc >= 0.99, "training accuracy {acc}");
    }

    #[test]
    fn deterministic_given_seed_and_exec() {
        let (x, y) = blobs(50, &[[0.0; 4], [2.0; 4], [-2.0; 4]], 5);
        let cfg = ForestConfig {
            seed: 9,
            ..ForestConfig::default()
        };
        let a = train_forest(&x, &y, 3, &cfg).unwrap();
        let b = train_forest(
            &x,
            &y,
            3,
            &ForestConfig {
                exec: Exec::Serial,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn tree_limits_are_respected() {
        let (x, y) = blobs(60, &[[0.0; 4], [0.5; 4]], 8);
        let cfg = ForestConfig {
            max_depth: 3,
            min_leaf: 7,
            track_members: true,
            ..ForestConfig::default()
        };
        let f = train_forest(&x, &y, 2, &cfg).unwrap();
        for t in f.trees() {
            assert!(t.depth() <= 3);
            for n in t.nodes() {
                if let TreeNode::Leaf { histogram, members } = n {
                    assert!(members.len() >= 7);
                    assert_eq!(histogram.iter().sum::<u32>() as usize, members.len());
                }
            }
        }
    }

    #[test]
    fn single_class_and_missing_are_rejected() {
        let x = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            train_forest(&x, &[0, 0], 2, &ForestConfig::default()),
            Err(Error::SingleClass)
        ));
        let x = FeatureMatrix::new(2, 1, vec![1.0, f64::NAN], vec![true, false]).unwrap();
        assert!(matches!(
            train_forest(&x, &[0, 1], 2, &ForestConfig::default()),
            Err(Error::MissingValues { sample: 1, dim: 0 })
        ));
    }

    #[test]
    fn one_pure_tree_gives_one_hot() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]).unwrap();
        let cfg = ForestConfig {
            n_trees: 1,
            min_leaf: 1,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let f = train_forest(&x, &[0, 0, 1, 1], 2, &cfg).unwrap();
        assert_eq!(f.predict_proba(&[0.5]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(f.predict(&[10.5]).unwrap(), CameraId(1));
        assert!(f.predict_proba(&[0.5, 1.0]).is_err());
        assert!(f.predict_proba(&[f64::NAN]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), CameraId(0));
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), CameraId(1));
        assert_eq!(argmax(&[0.0, 0.0, 1.0]), CameraId(2));
    }

    #[test]
    fn contributors_of_single_tree_are_leaf_members() {
        let (x, y) = blobs(30, &[[0.0; 4], [3.0; 4]], 4);
        let cfg = ForestConfig {
            n_trees: 1,
            track_members: true,
            ..ForestConfig::default()
        };
        let f = train_forest(&x, &y, 2, &cfg).unwrap();
        let q = x.row(0);
        let tree = &f.trees()[0];
        let TreeNode::Leaf { members, .. } = &tree.nodes()[tree.leaf_of(q)] else {
            unreachable!()
        };
        let mut expected = members.clone();
        expected.dedup();
        let got: Vec<u32> = f.dominant_contributors(q).unwrap().iter().map(|c| c.id).collect();
        assert_eq!(got, expected);

        let untracked = train_forest(&x, &y, 2, &ForestConfig::default()).unwrap();
        assert!(matches!(untracked.dominant_contributors(q), Err(Error::TrackingDisabled)));
    }

    #[test]
    fn contributor_present_in_every_tree_ranks_first() {
        let (x, y) = blobs(30, &[[0.0; 4], [3.0; 4]], 4);
        let cfg = ForestConfig {
            track_members: true,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let f = train_forest(&x, &y, 2, &cfg).unwrap();
        // without bootstrap every training point lands in its own leaf in every tree
        let ranked = f.dominant_contributors(x.row(5)).unwrap();
        assert_eq!(ranked[0].trees, 20);
        assert!(ranked.iter().any(|c| c.id == 5 && c.trees == 20));
        assert_eq!(ranked, f.dominant_contributors(x.row(5)).unwrap());
    }

    #[test]
    fn save_and_load() {
        let (x, y) = blobs(20, &[[0.0; 4], [3.0; 4]], 1);
        let f = train_forest(&x, &y, 2, &ForestConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        f.save(&p).unwrap();
        assert_eq!(Forest::load(&p).unwrap(), f);
    }
}

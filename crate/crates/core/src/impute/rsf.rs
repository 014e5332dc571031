//! Random survival forest imputation.
//!
//! Each tree is grown on every sample, complete and incomplete alike, with
//! the camera label as the split target:
//!
//! 1. split search only sees observed values of the scanned dimension;
//! 2. a sample missing the chosen dimension goes left or right according to
//!    a value drawn from `U(a, b)`, the observed bounds of that dimension;
//! 3. the draw is thrown away once the sample is routed, so deeper nodes see
//!    the value as missing again;
//! 4. after growth, each missing scalar is replaced by the mean (majority for
//!    categorical dimensions) of the observed values of its dimension over the
//!    terminal nodes the sample reached in all trees.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_shapes, combined_ranges, ImputationResult};
use crate::error::{Error, Result};
use crate::model::{Dataset, DimRange, FeatureMatrix};
use crate::par::{self, Exec};
use crate::seed;
use crate::tree::{self, DrawBounds, GrowParams, Grower, MissingRouting, Tree, TreeNode};

/// How terminal-node values are combined across trees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over the union of observed values in all reached terminal nodes.
    #[default]
    PooledMean,
    /// Mean over trees of each terminal node's mean.
    MeanOfTreeMeans,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurvivalConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub mtry: Option<usize>,
    /// Passes of grow-and-impute. Passes after the first route missing
    /// values by the previous imputation instead of a draw.
    pub n_iterations: usize,
    pub seed: u64,
    #[serde(default)]
    pub bounds: DrawBounds,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Keep splitting single-label nodes so terminal nodes stay local.
    #[serde(default = "yes")]
    pub split_pure_nodes: bool,
    /// Dimensions imputed by majority vote instead of the mean.
    #[serde(default)]
    pub categorical: Vec<usize>,
    #[serde(skip)]
    pub exec: Exec,
}

fn yes() -> bool {
    true
}

/// Equality ignores the execution policy, which never changes the result.
impl PartialEq for SurvivalConfig {
    fn eq(&self, o: &Self) -> bool {
        self.n_trees == o.n_trees
            && self.max_depth == o.max_depth
            && self.min_leaf == o.min_leaf
            && self.mtry == o.mtry
            && self.n_iterations == o.n_iterations
            && self.seed == o.seed
            && self.bounds == o.bounds
            && self.aggregation == o.aggregation
            && self.split_pure_nodes == o.split_pure_nodes
            && self.categorical == o.categorical
    }
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        Self {
            n_trees: 20,
            max_depth: 20,
            min_leaf: 5,
            mtry: None,
            n_iterations: 1,
            seed: 0,
            bounds: DrawBounds::NodeLocal,
            aggregation: Aggregation::PooledMean,
            split_pure_nodes: true,
            categorical: Vec::new(),
            exec: Exec::default(),
        }
    }
}

impl SurvivalConfig {
    fn validate(&self, dims: usize) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 || self.n_iterations == 0 {
            return Err(Error::InvalidInput(
                "n_trees, min_leaf and n_iterations must be at least 1".into(),
            ));
        }
        if self.mtry == Some(0) {
            return Err(Error::InvalidInput("mtry must be at least 1".into()));
        }
        if let Some(&d) = self.categorical.iter().find(|&&d| d >= dims) {
            return Err(Error::InvalidInput(format!("categorical dimension {d} out of range")));
        }
        Ok(())
    }

    fn mtry(&self, dims: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (dims as f64).sqrt().ceil() as usize)
            .clamp(1, dims.max(1))
    }
}

/// Bounds of the uniform draw for `dim` at a node: observed min/max among
/// `node_samples`, or the global range if none of them observe `dim`.
pub fn node_draw_bounds(
    x: &FeatureMatrix,
    node_samples: &[u32],
    dim: usize,
    global: &[DimRange],
) -> DimRange {
    tree::node_bounds(x, node_samples, dim).unwrap_or(global[dim])
}

/// Survival trees plus the terminal node of every training sample in each.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalForest {
    config: SurvivalConfig,
    trees: Vec<Tree>,
    /// `terminals[t][row]` is the leaf of `row` in tree `t`.
    terminals: Vec<Vec<u32>>,
    global: Vec<DimRange>,
}

impl SurvivalForest {
    /// Grow on `complete` followed by `incomplete`; rows are numbered in that order.
    pub fn fit(complete: &Dataset, incomplete: &Dataset, config: &SurvivalConfig) -> Result<Self> {
        let global = combined_ranges(complete, incomplete)?;
        if complete.is_empty() {
            return Err(Error::InvalidInput("complete set is empty".into()));
        }
        config.validate(complete.dims())?;
        let all = complete.concat(incomplete)?;
        Ok(Self::grow(&all.matrix(), &all.labels(), all.k(), config, global, None, 0))
    }

    pub(crate) fn grow(
        x: &FeatureMatrix,
        y: &[usize],
        n_classes: usize,
        config: &SurvivalConfig,
        global: Vec<DimRange>,
        soft: Option<&FeatureMatrix>,
        pass: usize,
    ) -> Self {
        let missing = match soft {
            Some(filled) => MissingRouting::Soft { filled },
            None => MissingRouting::Draw {
                bounds: config.bounds,
                global: &global,
            },
        };
        let params = GrowParams {
            max_depth: config.max_depth,
            min_leaf: config.min_leaf,
            mtry: config.mtry(x.cols()),
            n_classes,
            split_pure: config.split_pure_nodes,
            track_members: true,
            missing,
        };
        let n = x.rows();
        let grown = par::map_indexed(config.exec, config.n_trees, |t| {
            let stream = (pass * config.n_trees + t) as u64;
            let mut rng = seed::stream(config.seed, "rsf.tree", stream);
            let tree = Grower::new(x, y, params).grow((0..n as u32).collect(), &mut rng);
            let mut terminal = vec![0u32; n];
            for (i, node) in tree.nodes().iter().enumerate() {
                if let TreeNode::Leaf { members, .. } = node {
                    for &m in members {
                        terminal[m as usize] = i as u32;
                    }
                }
            }
            (tree, terminal)
        });
        let (trees, terminals) = grown.into_iter().unzip();
        Self {
            config: config.clone(),
            trees,
            terminals,
            global,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Terminal node of training row `row` in every tree.
    pub fn terminal_nodes(&self, row: usize) -> Vec<usize> {
        self.terminals.iter().map(|t| t[row] as usize).collect()
    }

    /// Route a vector through every tree. Missing values are decided by fresh
    /// draws from the global range, seeded by `seed`.
    pub fn route(&self, values: &[f64], observed: &[bool], seed: u64) -> Vec<usize> {
        self.trees
            .iter()
            .enumerate()
            .map(|(t, tree)| {
                let mut rng = seed::stream(seed, "rsf.route", t as u64);
                let mut i = 0;
                loop {
                    match &tree.nodes()[i] {
                        TreeNode::Leaf { .. } => break i,
                        TreeNode::Split {
                            split_dim,
                            threshold,
                            left,
                            right,
                            ..
                        } => {
                            let v = if observed[*split_dim] {
                                values[*split_dim]
                            } else {
                                tree::draw_uniform(&mut rng, self.global[*split_dim])
                            };
                            i = if v <= *threshold { *left } else { *right };
                        }
                    }
                }
            })
            .collect()
    }

    /// Fill every missing scalar of `x` (the training matrix) from terminal
    /// node statistics.
    pub(crate) fn fill(&self, x: &FeatureMatrix, rows: std::ops::Range<usize>) -> FeatureMatrix {
        let dims = x.cols();
        // per tree, per node: (sum, count) of observed values per dimension
        let stats: Vec<Vec<Option<(Vec<f64>, Vec<u32>)>>> =
            par::map_indexed(self.config.exec, self.trees.len(), |t| {
                self.trees[t]
                    .nodes()
                    .iter()
                    .map(|node| match node {
                        TreeNode::Leaf { members, .. } => {
                            let mut sum = vec![0.0; dims];
                            let mut count = vec![0u32; dims];
                            for &m in members {
                                let m = m as usize;
                                for d in 0..dims {
                                    if x.is_observed(m, d) {
                                        sum[d] += x.get(m, d);
                                        count[d] += 1;
                                    }
                                }
                            }
                            Some((sum, count))
                        }
                        TreeNode::Split { .. } => None,
                    })
                    .collect()
            });
        let global_mean = column_means(x);

        let filled_rows = par::map_indexed(self.config.exec, rows.len(), |i| {
            let row = rows.start + i;
            let mut out = x.row(row).to_vec();
            for (d, slot) in out.iter_mut().enumerate() {
                if x.is_observed(row, d) {
                    continue;
                }
                let value = if self.config.categorical.contains(&d) {
                    self.majority(x, row, d)
                } else {
                    self.mean(&stats, row, d)
                };
                let r = self.global[d];
                *slot = value.unwrap_or(global_mean[d]).clamp(r.min, r.max);
            }
            out
        });
        let n = rows.len();
        let values: Vec<f64> = filled_rows.into_iter().flatten().collect();
        FeatureMatrix::new(n, dims, values, vec![true; n * dims]).expect("shape is consistent")
    }

    fn mean(&self, stats: &[Vec<Option<(Vec<f64>, Vec<u32>)>>], row: usize, d: usize) -> Option<f64> {
        let per_tree = self.terminals.iter().zip(stats).filter_map(|(terminal, nodes)| {
            nodes[terminal[row] as usize]
                .as_ref()
                .map(|(sum, count)| (sum[d], count[d]))
        });
        match self.config.aggregation {
            Aggregation::PooledMean => {
                let (s, c) = per_tree.fold((0.0, 0u64), |(s, c), (ts, tc)| (s + ts, c + u64::from(tc)));
                (c > 0).then(|| s / c as f64)
            }
            Aggregation::MeanOfTreeMeans => {
                let (s, c) = per_tree
                    .filter(|&(_, tc)| tc > 0)
                    .fold((0.0, 0u64), |(s, c), (ts, tc)| (s + ts / f64::from(tc), c + 1));
                (c > 0).then(|| s / c as f64)
            }
        }
    }

    /// Most frequent observed value across the reached terminal nodes; ties
    /// go to the smallest value.
    fn majority(&self, x: &FeatureMatrix, row: usize, d: usize) -> Option<f64> {
        let mut votes: BTreeMap<u64, (f64, u32)> = BTreeMap::new();
        for (t, tree) in self.trees.iter().enumerate() {
            if let TreeNode::Leaf { members, .. } = &tree.nodes()[self.terminals[t][row] as usize] {
                for &m in members {
                    let m = m as usize;
                    if x.is_observed(m, d) {
                        let v = x.get(m, d);
                        votes.entry(ordered_key(v)).or_insert((v, 0)).1 += 1;
                    }
                }
            }
        }
        votes
            .values()
            .fold(None, |best: Option<(f64, u32)>, &(v, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((v, c)),
            })
            .map(|(v, _)| v)
    }
}

/// Total-order key for an f64, so that ascending keys are ascending values.
fn ordered_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn column_means(x: &FeatureMatrix) -> Vec<f64> {
    (0..x.cols())
        .map(|d| {
            let (s, c) = (0..x.rows())
                .filter(|&r| x.is_observed(r, d))
                .fold((0.0, 0usize), |(s, c), r| (s + x.get(r, d), c + 1));
            if c > 0 {
                s / c as f64
            } else {
                0.0
            }
        })
        .collect()
}

/// Impute every missing scalar of `incomplete` with a random survival forest
/// grown on `complete ∪ incomplete`.
pub fn impute_rsf(
    complete: &Dataset,
    incomplete: &Dataset,
    config: &SurvivalConfig,
) -> Result<ImputationResult> {
    check_shapes(complete, incomplete)?;
    if complete.is_empty() {
        return Err(Error::InvalidInput(
            "complete set is empty; nothing to learn the feature distribution from".into(),
        ));
    }
    let global = combined_ranges(complete, incomplete)?;
    config.validate(complete.dims())?;
    let incomplete_matrix = incomplete.matrix();
    if incomplete_matrix.first_missing().is_none() {
        return ImputationResult::new(incomplete, &incomplete_matrix, &incomplete_matrix, global);
    }

    let all = complete.concat(incomplete)?;
    let x = all.matrix();
    let y = all.labels();
    let n = x.rows();
    let mut soft: Option<FeatureMatrix> = None;
    for pass in 0..config.n_iterations {
        let forest =
            SurvivalForest::grow(&x, &y, all.k(), config, global.clone(), soft.as_ref(), pass);
        soft = Some(forest.fill(&x, 0..n));
    }
    let filled = soft.expect("at least one pass");
    let offset = complete.len();
    let dims = x.cols();
    let tail: Vec<f64> = (offset..n).flat_map(|r| filled.row(r).to_vec()).collect();
    let tail = FeatureMatrix::new(n - offset, dims, tail, vec![true; (n - offset) * dims])?;
    ImputationResult::new(incomplete, &incomplete_matrix, &tail, global)
}

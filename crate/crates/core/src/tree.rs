//! Classification tree grower shared by the selection forest and the
//! survival forest used for imputation.
//!
//! Splits minimize the size-weighted cross-entropy of the two children over
//! the *observed* values of the scanned dimension. Candidate thresholds are
//! the midpoints between consecutive distinct sorted values. Samples missing
//! the split dimension, if allowed at all, are routed by a throwaway uniform
//! draw between the bounds of the observed values.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::model::{DimRange, FeatureMatrix};
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        split_dim: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Dimensions that were scanned when this split was chosen.
        scanned: Vec<usize>,
    },
    Leaf {
        histogram: Vec<u32>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        members: Vec<u32>,
    },
}

/// Flat node arena; the root is node 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Leaf reached by a fully observed vector.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    split_dim,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*split_dim] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Leaf members below `node`, in leaf order.
    pub fn subtree_members(&self, node: usize) -> Vec<u32> {
        match &self.nodes[node] {
            TreeNode::Leaf { members, .. } => members.clone(),
            TreeNode::Split { left, right, .. } => {
                let mut m = self.subtree_members(*left);
                m.extend(self.subtree_members(*right));
                m
            }
        }
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [TreeNode] {
        &mut self.nodes
    }
}

/// Where the uniform draw for a missing split value gets its bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawBounds {
    /// Observed values of the dimension among samples at the node.
    #[default]
    NodeLocal,
    /// Observed range of the dimension over the whole training set.
    Global,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum MissingRouting<'a> {
    /// Caller guarantees there is nothing missing.
    Forbid,
    Draw {
        bounds: DrawBounds,
        global: &'a [DimRange],
    },
    /// Route missing values by a previous imputation instead of a draw.
    Soft { filled: &'a FeatureMatrix },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowParams<'a> {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub mtry: usize,
    pub n_classes: usize,
    /// Keep splitting single-class nodes (ties then go to the most balanced split).
    pub split_pure: bool,
    pub track_members: bool,
    pub missing: MissingRouting<'a>,
}

/// Result of scanning one dimension at one node.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    dim: usize,
    threshold: f64,
    cross_entropy: f64,
    imbalance: usize,
}

/// `n ln n`, with `0 ln 0 = 0`.
#[inline]
fn nlogn(n: u32) -> f64 {
    if n == 0 {
        0.0
    } else {
        let n = f64::from(n);
        n * n.ln()
    }
}

/// `size * entropy` of a class histogram, in nats.
#[inline]
fn weighted_entropy(counts: &[u32]) -> f64 {
    let total: u32 = counts.iter().sum();
    nlogn(total) - counts.iter().map(|&c| nlogn(c)).sum::<f64>()
}

/// Size-weighted mean cross-entropy of a two-way partition.
pub(crate) fn split_cross_entropy(left: &[u32], right: &[u32]) -> f64 {
    let n: u32 = left.iter().chain(right).sum();
    (weighted_entropy(left) + weighted_entropy(right)) / f64::from(n)
}

pub(crate) struct Grower<'a> {
    x: &'a FeatureMatrix,
    y: &'a [usize],
    params: GrowParams<'a>,
    nodes: Vec<TreeNode>,
    scratch: Vec<(f64, usize)>,
}

impl<'a> Grower<'a> {
    pub fn new(x: &'a FeatureMatrix, y: &'a [usize], params: GrowParams<'a>) -> Self {
        Self {
            x,
            y,
            params,
            nodes: Vec::new(),
            scratch: Vec::new(),
        }
    }

    /// Grow a tree over `samples` (row indices, repeats allowed).
    pub fn grow(mut self, samples: Vec<u32>, rng: &mut Rng) -> Tree {
        self.nodes.push(placeholder());
        self.grow_node(0, samples, 0, rng);
        Tree { nodes: self.nodes }
    }

    fn histogram(&self, samples: &[u32]) -> Vec<u32> {
        let mut h = vec![0u32; self.params.n_classes];
        for &s in samples {
            h[self.y[s as usize]] += 1;
        }
        h
    }

    fn grow_node(&mut self, slot: usize, samples: Vec<u32>, depth: usize, rng: &mut Rng) {
        let histogram = self.histogram(&samples);
        let pure = histogram.iter().filter(|&&c| c > 0).count() <= 1;
        let stop = depth >= self.params.max_depth
            || samples.len() < 2 * self.params.min_leaf
            || (pure && !self.params.split_pure);
        let best = if stop { None } else { self.best_split(&samples, rng) };
        let Some((best, scanned)) = best else {
            self.nodes[slot] = self.leaf(histogram, samples);
            return;
        };

        let (left, right) = self.route(&samples, best.dim, best.threshold, rng);
        let l = self.nodes.len();
        self.nodes.push(placeholder());
        let r = self.nodes.len();
        self.nodes.push(placeholder());
        self.nodes[slot] = TreeNode::Split {
            split_dim: best.dim,
            threshold: best.threshold,
            left: l,
            right: r,
            scanned,
        };
        self.grow_node(l, left, depth + 1, rng);
        self.grow_node(r, right, depth + 1, rng);
    }

    fn leaf(&self, histogram: Vec<u32>, mut samples: Vec<u32>) -> TreeNode {
        let members = if self.params.track_members {
            samples.sort_unstable();
            samples
        } else {
            Vec::new()
        };
        TreeNode::Leaf { histogram, members }
    }

    fn best_split(&mut self, samples: &[u32], rng: &mut Rng) -> Option<(Candidate, Vec<usize>)> {
        let dims = self.x.cols();
        let mtry = self.params.mtry.clamp(1, dims);
        let scanned: Vec<usize> = index::sample(rng, dims, mtry).into_vec();
        let mut best: Option<Candidate> = None;
        for &dim in &scanned {
            if let Some(c) = self.scan_dim(samples, dim) {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        c.cross_entropy < b.cross_entropy
                            || (c.cross_entropy == b.cross_entropy && c.imbalance < b.imbalance)
                    }
                };
                if better {
                    best = Some(c);
                }
            }
        }
        best.map(|b| (b, scanned))
    }

    /// Best threshold of one dimension over the observed samples at the node.
    fn scan_dim(&mut self, samples: &[u32], dim: usize) -> Option<Candidate> {
        let min_leaf = self.params.min_leaf.max(1);
        self.scratch.clear();
        for &s in samples {
            let s = s as usize;
            if self.x.is_observed(s, dim) {
                self.scratch.push((self.x.get(s, dim), self.y[s]));
            }
        }
        let n = self.scratch.len();
        if n < 2 * min_leaf {
            return None;
        }
        self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut right = vec![0u32; self.params.n_classes];
        for &(_, c) in &self.scratch {
            right[c] += 1;
        }
        let mut left = vec![0u32; self.params.n_classes];
        let mut best: Option<Candidate> = None;
        for i in 0..n - 1 {
            let (v, c) = self.scratch[i];
            left[c] += 1;
            right[c] -= 1;
            let next = self.scratch[i + 1].0;
            let n_left = i + 1;
            if v == next || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let mut threshold = v + (next - v) / 2.0;
            if threshold >= next {
                threshold = v;
            }
            let cand = Candidate {
                dim,
                threshold,
                cross_entropy: split_cross_entropy(&left, &right),
                imbalance: n_left.abs_diff(n - n_left),
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    cand.cross_entropy < b.cross_entropy
                        || (cand.cross_entropy == b.cross_entropy && cand.imbalance < b.imbalance)
                }
            };
            if better {
                best = Some(cand);
            }
        }
        best
    }

    fn route(
        &self,
        samples: &[u32],
        dim: usize,
        threshold: f64,
        rng: &mut Rng,
    ) -> (Vec<u32>, Vec<u32>) {
        let bounds = match self.params.missing {
            MissingRouting::Forbid | MissingRouting::Soft { .. } => None,
            MissingRouting::Draw { bounds, global } => Some(match bounds {
                DrawBounds::NodeLocal => node_bounds(self.x, samples, dim).unwrap_or(global[dim]),
                DrawBounds::Global => global[dim],
            }),
        };
        let mut left = Vec::new();
        let mut right = Vec::new();
        for &s in samples {
            let row = s as usize;
            let value = if self.x.is_observed(row, dim) {
                self.x.get(row, dim)
            } else if let MissingRouting::Soft { filled } = self.params.missing {
                filled.get(row, dim)
            } else {
                let r = bounds.expect("missing value with MissingRouting::Forbid");
                // the draw only decides the branch and is not kept
                draw_uniform(rng, r)
            };
            if value <= threshold {
                left.push(s);
            } else {
                right.push(s);
            }
        }
        (left, right)
    }
}

fn placeholder() -> TreeNode {
    TreeNode::Leaf {
        histogram: Vec::new(),
        members: Vec::new(),
    }
}

pub(crate) fn draw_uniform(rng: &mut Rng, r: DimRange) -> f64 {
    if r.max > r.min {
        rng.random_range(r.min..=r.max)
    } else {
        r.min
    }
}

/// Observed min/max of `dim` among `samples`, if any are observed.
pub(crate) fn node_bounds(x: &FeatureMatrix, samples: &[u32], dim: usize) -> Option<DimRange> {
    samples
        .iter()
        .map(|&s| s as usize)
        .filter(|&s| x.is_observed(s, dim))
        .map(|s| x.get(s, dim))
        .fold(None, |acc: Option<DimRange>, v| {
            Some(match acc {
                None => DimRange { min: v, max: v },
                Some(r) => DimRange {
                    min: r.min.min(v),
                    max: r.max.max(v),
                },
            })
        })
}

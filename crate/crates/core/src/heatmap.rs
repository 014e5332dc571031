//! Spatial-appearance heatmaps: detection boxes splat their appearance
//! vectors onto a coarse grid, and the grid is pooled into a fixed-length
//! foreground feature.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Fixed-point scale of the exact accumulator (2^64 units per 1.0).
const EXACT_SCALE: f64 = 18_446_744_073_709_551_616.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// A detected object and its appearance embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub appearance: Vec<f64>,
}

/// Image size and grid resolution. Cell `(i, j)` has index `j * gx + i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub image_w: f64,
    pub image_h: f64,
    pub gx: usize,
    pub gy: usize,
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self {
            image_w: 1280.0,
            image_h: 720.0,
            gx: 16,
            gy: 9,
        }
    }
}

impl GridGeometry {
    pub fn cells(&self) -> usize {
        self.gx * self.gy
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point {
            x: (i as f64 + 0.5) * self.image_w / self.gx as f64,
            y: (j as f64 + 0.5) * self.image_h / self.gy as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.gx == 0 || self.gy == 0 || !(self.image_w > 0.0) || !(self.image_h > 0.0) {
            return Err(Error::InvalidInput(format!("bad grid geometry {self:?}")));
        }
        Ok(())
    }
}

/// Whether each of the five box points deposits its full appearance (mass 5
/// per box) or a fifth of it (mass 1 per box).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointMass {
    #[default]
    Sum,
    Mean,
}

/// Accumulator used for cell sums. `Exact` accumulates in 2^-64 fixed point
/// so that heatmaps add associatively.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summation {
    #[default]
    Float,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub geometry: GridGeometry,
    pub appearance_dim: usize,
    #[serde(default)]
    pub point_mass: PointMass,
    #[serde(default)]
    pub summation: Summation,
}

impl HeatmapConfig {
    pub fn new(appearance_dim: usize) -> Self {
        Self {
            geometry: GridGeometry::default(),
            appearance_dim,
            point_mass: PointMass::default(),
            summation: Summation::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Cells {
    Float(Vec<f64>),
    Exact(Vec<i128>),
}

/// Grid of accumulated appearance vectors, cell-major then component.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    geometry: GridGeometry,
    dim: usize,
    cells: Cells,
}

impl Heatmap {
    pub fn zeros(geometry: GridGeometry, dim: usize, summation: Summation) -> Self {
        let n = geometry.cells() * dim;
        let cells = match summation {
            Summation::Float => Cells::Float(vec![0.0; n]),
            Summation::Exact => Cells::Exact(vec![0; n]),
        };
        Self {
            geometry,
            dim,
            cells,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn appearance_dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, cell: usize, component: usize) -> f64 {
        let idx = cell * self.dim + component;
        match &self.cells {
            Cells::Float(v) => v[idx],
            Cells::Exact(v) => v[idx] as f64 / EXACT_SCALE,
        }
    }

    pub fn cell(&self, cell: usize) -> Vec<f64> {
        (0..self.dim).map(|c| self.get(cell, c)).collect()
    }

    /// Sum over all cells, per component.
    pub fn total_mass(&self) -> Vec<f64> {
        match &self.cells {
            Cells::Float(v) => {
                let mut total = vec![0.0; self.dim];
                for chunk in v.chunks(self.dim.max(1)) {
                    for (t, x) in total.iter_mut().zip(chunk) {
                        *t += x;
                    }
                }
                total
            }
            Cells::Exact(v) => {
                let mut total = vec![0i128; self.dim];
                for chunk in v.chunks(self.dim.max(1)) {
                    for (t, x) in total.iter_mut().zip(chunk) {
                        *t += x;
                    }
                }
                total.into_iter().map(|t| t as f64 / EXACT_SCALE).collect()
            }
        }
    }

    /// Elementwise sum of two heatmaps with the same shape and accumulator.
    pub fn add(&self, other: &Heatmap) -> Result<Heatmap> {
        if self.geometry != other.geometry || self.dim != other.dim {
            return Err(Error::Shape("heatmaps differ in geometry or dimension".into()));
        }
        let cells = match (&self.cells, &other.cells) {
            (Cells::Float(a), Cells::Float(b)) => {
                Cells::Float(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            (Cells::Exact(a), Cells::Exact(b)) => {
                Cells::Exact(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            _ => return Err(Error::Shape("heatmaps use different accumulators".into())),
        };
        Ok(Heatmap { cells, ..*self })
    }

    fn deposit(&mut self, cell: usize, weight: f64, appearance: &[f64]) -> Result<()> {
        let base = cell * self.dim;
        match &mut self.cells {
            Cells::Float(v) => {
                for (slot, a) in v[base..base + self.dim].iter_mut().zip(appearance) {
                    *slot += weight * a;
                }
            }
            Cells::Exact(v) => {
                for (slot, a) in v[base..base + self.dim].iter_mut().zip(appearance) {
                    let q = (weight * a * EXACT_SCALE).round();
                    if !q.is_finite() || q.abs() >= 2f64.powi(120) {
                        return Err(Error::InvalidInput(format!(
                            "appearance value {a} exceeds the exact accumulator range"
                        )));
                    }
                    *slot += q as i128;
                }
            }
        }
        Ok(())
    }
}

/// Corners `(x1,y1) (x2,y1) (x1,y2) (x2,y2)` followed by the center.
pub fn box_points(b: &DetectionBox) -> Result<[Point; 5]> {
    if !(b.x1 < b.x2 && b.y1 < b.y2) {
        return Err(Error::InvalidInput(format!(
            "degenerate box ({}, {}, {}, {})",
            b.x1, b.y1, b.x2, b.y2
        )));
    }
    Ok([
        Point { x: b.x1, y: b.y1 },
        Point { x: b.x2, y: b.y1 },
        Point { x: b.x1, y: b.y2 },
        Point { x: b.x2, y: b.y2 },
        Point {
            x: (b.x1 + b.x2) / 2.0,
            y: (b.y1 + b.y2) / 2.0,
        },
    ])
}

/// Lattice coordinate of `p` along one axis, clamped to the span of cell
/// centers. Returns the lower cell and the fractional offset toward the next.
fn axis_coord(p: f64, extent: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let u = (p * n as f64 / extent - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = (u.floor() as usize).min(n - 2);
    (lo, u - lo as f64)
}

/// Bilinear weights of `p` on the four surrounding cell centers. Zero
/// weights are dropped, so a point on a cell center yields a single pair.
pub fn point_weights(p: Point, g: &GridGeometry) -> Result<Vec<(usize, f64)>> {
    g.validate()?;
    if !(0.0..=g.image_w).contains(&p.x) || !(0.0..=g.image_h).contains(&p.y) {
        return Err(Error::InvalidInput(format!(
            "point ({}, {}) outside the {}x{} image",
            p.x, p.y, g.image_w, g.image_h
        )));
    }
    let (i, t) = axis_coord(p.x, g.image_w, g.gx);
    let (j, s) = axis_coord(p.y, g.image_h, g.gy);
    let candidates = [
        (i, j, (1.0 - t) * (1.0 - s)),
        (i + 1, j, t * (1.0 - s)),
        (i, j + 1, (1.0 - t) * s),
        (i + 1, j + 1, t * s),
    ];
    Ok(candidates
        .into_iter()
        .filter(|&(_, _, w)| w > 0.0)
        .map(|(ci, cj, w)| (cj * g.gx + ci, w))
        .collect())
}

/// Splat every box's five points onto the grid.
pub fn build_heatmap(boxes: &[DetectionBox], config: &HeatmapConfig) -> Result<Heatmap> {
    config.geometry.validate()?;
    let mut heatmap = Heatmap::zeros(config.geometry, config.appearance_dim, config.summation);
    let scale = match config.point_mass {
        PointMass::Sum => 1.0,
        PointMass::Mean => 0.2,
    };
    for b in boxes {
        if b.appearance.len() != config.appearance_dim {
            return Err(Error::Shape(format!(
                "appearance of length {}, expected {}",
                b.appearance.len(),
                config.appearance_dim
            )));
        }
        for p in box_points(b)? {
            for (cell, w) in point_weights(p, &config.geometry)? {
                heatmap.deposit(cell, w * scale, &b.appearance)?;
            }
        }
    }
    Ok(heatmap)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Average,
    Max,
    Flatten,
    /// Average pooling followed by max pooling (length `2A`).
    #[default]
    AverageMax,
}

impl Pooling {
    pub fn output_len(self, geometry: &GridGeometry, appearance_dim: usize) -> usize {
        match self {
            Pooling::Average | Pooling::Max => appearance_dim,
            Pooling::AverageMax => 2 * appearance_dim,
            Pooling::Flatten => geometry.cells() * appearance_dim,
        }
    }
}

pub fn pool_heatmap(h: &Heatmap, mode: Pooling) -> Vec<f64> {
    let n = h.geometry.cells();
    let average = || {
        let mut out = h.total_mass();
        out.iter_mut().for_each(|x| *x /= n as f64);
        out
    };
    let max = || {
        (0..h.dim)
            .map(|c| (0..n).map(|cell| h.get(cell, c)).fold(f64::NEG_INFINITY, f64::max))
            .collect::<Vec<_>>()
    };
    match mode {
        Pooling::Average => average(),
        Pooling::Max => max(),
        Pooling::AverageMax => {
            let mut out = average();
            out.extend(max());
            out
        }
        Pooling::Flatten => (0..n).flat_map(|cell| h.cell(cell)).collect(),
    }
}

/// Pairwise contrastive loss with margin `delta`: `D^2` for similar pairs,
/// `max(delta - D, 0)^2` for dissimilar ones, `D` the Euclidean distance.
pub fn contrastive_loss(xi: &[f64], xj: &[f64], similar: bool, delta: f64) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(Error::Shape(format!(
            "embedding lengths {} and {}",
            xi.len(),
            xj.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("margin must be positive, got {delta}")));
    }
    let sq: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if similar {
        sq
    } else {
        let hinge = (delta - sq.sqrt()).max(0.0);
        hinge * hinge
    })
}

/// Detections of one camera at one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: i64,
    pub camera: usize,
    pub boxes: Vec<DetectionBox>,
}

/// Pooled foreground feature of one camera at one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFeature {
    pub frame: i64,
    pub camera: usize,
    pub block: Vec<f64>,
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Heatmap + pooling for every record, in input order.
pub fn featurize(
    records: &[DetectionRecord],
    config: &HeatmapConfig,
    pooling: Pooling,
    exec: Exec,
) -> Result<Vec<FrameFeature>> {
    par::try_map_indexed(exec, records.len(), |i| {
        let r = &records[i];
        let h = build_heatmap(&r.boxes, config)?;
        Ok(FrameFeature {
            frame: r.frame,
            camera: r.camera,
            block: pool_heatmap(&h, pooling),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn geom() -> GridGeometry {
        GridGeometry::default()
    }

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64, appearance: Vec<f64>) -> DetectionBox {
        DetectionBox {
            x1,
            y1,
            x2,
            y2,
            appearance,
        }
    }

    /// Dense oracle: evaluate the tent basis of every cell center.
    fn dense_weights(p: Point, g: &GridGeometry) -> Vec<f64> {
        let cw = g.image_w / g.gx as f64;
        let ch = g.image_h / g.gy as f64;
        let lo = g.cell_center(0, 0);
        let hi = g.cell_center(g.gx - 1, g.gy - 1);
        let px = p.x.clamp(lo.x, hi.x);
        let py = p.y.clamp(lo.y, hi.y);
        let mut w = vec![0.0; g.cells()];
        for j in 0..g.gy {
            for i in 0..g.gx {
                let c = g.cell_center(i, j);
                let bx = (1.0 - (px - c.x).abs() / cw).max(0.0);
                let by = (1.0 - (py - c.y).abs() / ch).max(0.0);
                w[j * g.gx + i] = bx * by;
            }
        }
        w
    }

    #[test]
    fn box_points_corners_and_center() {
        let p = box_points(&bx(0.0, 0.0, 2.0, 2.0, vec![])).unwrap();
        let got: Vec<(f64, f64)> = p.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(got, vec![(0.0, 0.0), (2.0, 0.0), (0.0, 2.0), (2.0, 2.0), (1.0, 1.0)]);
        let c = box_points(&bx(10.0, 20.0, 30.0, 60.0, vec![])).unwrap()[4];
        assert_eq!((c.x, c.y), (20.0, 40.0));
        assert!(box_points(&bx(5.0, 0.0, 5.0, 2.0, vec![])).is_err());
    }

    #[test]
    fn weight_at_cell_center() {
        let g = geom();
        for (i, j) in [(0, 0), (3, 4), (15, 8), (15, 0)] {
            let w = point_weights(g.cell_center(i, j), &g).unwrap();
            assert_eq!(w, vec![(j * g.gx + i, 1.0)]);
        }
    }

    #[test]
    fn weight_between_two_centers() {
        let g = geom();
        let a = g.cell_center(2, 3);
        let b = g.cell_center(3, 3);
        let w = point_weights(Point { x: (a.x + b.x) / 2.0, y: a.y }, &g).unwrap();
        assert_eq!(w, vec![(3 * 16 + 2, 0.5), (3 * 16 + 3, 0.5)]);
    }

    #[test]
    fn weights_match_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let g = geom();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let p = Point {
                x: rng.random_range(0.0..=g.image_w),
                y: rng.random_range(0.0..=g.image_h),
            };
            let dense = dense_weights(p, &g);
            let sparse = point_weights(p, &g).unwrap();
            let mut expanded = vec![0.0; g.cells()];
            for (c, w) in sparse {
                expanded[c] += w;
            }
            for (a, b) in dense.iter().zip(&expanded) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn point_outside_image_is_rejected() {
        assert!(point_weights(Point { x: -1.0, y: 10.0 }, &geom()).is_err());
        assert!(point_weights(Point { x: 10.0, y: 721.0 }, &geom()).is_err());
    }

    #[test]
    fn border_points_are_clamped() {
        let g = geom();
        let w = point_weights(Point { x: 0.0, y: 0.0 }, &g).unwrap();
        assert_eq!(w, vec![(0, 1.0)]);
        let w = point_weights(Point { x: g.image_w, y: g.image_h }, &g).unwrap();
        assert_eq!(w, vec![(g.cells() - 1, 1.0)]);
    }

    #[test]
    fn shift_by_one_pitch_shifts_weights() {
        let g = geom();
        let p = Point { x: 333.3, y: 222.2 };
        let q = Point { x: p.x + 80.0, y: p.y + 80.0 };
        let wp = point_weights(p, &g).unwrap();
        let wq = point_weights(q, &g).unwrap();
        assert_eq!(wp.len(), wq.len());
        for ((cp, a), (cq, b)) in wp.iter().zip(&wq) {
            assert_eq!(*cq, cp + g.gx + 1);
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn empty_boxes_give_zero_heatmap() {
        let h = build_heatmap(&[], &HeatmapConfig::new(4)).unwrap();
        assert!(pool_heatmap(&h, Pooling::Flatten).iter().all(|&x| x == 0.0));
        assert_eq!(pool_heatmap(&h, Pooling::Average), vec![0.0; 4]);
    }

    #[test]
    fn single_box_mass_is_five() {
        let cfg = HeatmapConfig::new(3);
        let h = build_heatmap(&[bx(100.0, 100.0, 180.0, 260.0, vec![1.0, 0.0, 0.0])], &cfg).unwrap();
        let m = h.total_mass();
        assert_abs_diff_eq!(m[0], 5.0, epsilon = 1e-12);
        assert_eq!(&m[1..], &[0.0, 0.0]);

        let mean = HeatmapConfig {
            point_mass: PointMass::Mean,
            ..cfg
        };
        let h = build_heatmap(&[bx(100.0, 100.0, 180.0, 260.0, vec![1.0, 0.0, 0.0])], &mean).unwrap();
        assert_abs_diff_eq!(h.total_mass()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_boxes_sum() {
        let cfg = HeatmapConfig {
            summation: Summation::Exact,
            ..HeatmapConfig::new(2)
        };
        let a = bx(10.0, 10.0, 400.0, 300.0, vec![0.3, -1.7]);
        let b = bx(500.0, 50.0, 900.0, 700.0, vec![2.1, 0.9]);
        let both = build_heatmap(&[a.clone(), b.clone()], &cfg).unwrap();
        let sum = build_heatmap(&[a], &cfg)
            .unwrap()
            .add(&build_heatmap(&[b], &cfg).unwrap())
            .unwrap();
        assert_eq!(both, sum);
    }

    #[test]
    fn pooling_modes() {
        let g = GridGeometry {
            image_w: 4.0,
            image_h: 4.0,
            gx: 2,
            gy: 2,
        };
        let mut h = Heatmap::zeros(g, 2, Summation::Float);
        h.deposit(1, 1.0, &[4.0, -2.0]).unwrap();
        assert_eq!(pool_heatmap(&h, Pooling::Average), vec![1.0, -0.5]);
        assert_eq!(pool_heatmap(&h, Pooling::Max), vec![4.0, 0.0]);
        assert_eq!(pool_heatmap(&h, Pooling::AverageMax), vec![1.0, -0.5, 4.0, 0.0]);
        assert_eq!(
            pool_heatmap(&h, Pooling::Flatten),
            vec![0.0, 0.0, 4.0, -2.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(Pooling::Flatten.output_len(&g, 2), 8);
    }

    #[test]
    fn average_pooling_is_linear() {
        let cfg = HeatmapConfig::new(2);
        let a = build_heatmap(&[bx(10.0, 10.0, 400.0, 300.0, vec![0.3, -1.7])], &cfg).unwrap();
        let b = build_heatmap(&[bx(50.0, 50.0, 90.0, 70.0, vec![1.0, 2.0])], &cfg).unwrap();
        let lhs = pool_heatmap(&a.add(&b).unwrap(), Pooling::Average);
        let pa = pool_heatmap(&a, Pooling::Average);
        let pb = pool_heatmap(&b, Pooling::Average);
        for i in 0..2 {
            assert_abs_diff_eq!(lhs[i], pa[i] + pb[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn contrastive_cases() {
        assert_eq!(contrastive_loss(&[0.5, 1.0], &[0.5, 1.0], true, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&[0.0], &[2.0], false, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            contrastive_loss(&[0.0], &[0.4], false, 1.0).unwrap(),
            0.36,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            contrastive_loss(&[0.0, 0.0], &[0.3, 0.4], true, 1.0).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        assert!(contrastive_loss(&[0.0], &[0.0, 1.0], true, 1.0).is_err());
        assert!(contrastive_loss(&[0.0], &[0.0], true, 0.0).is_err());
    }

    #[test]
    fn featurize_preserves_order() {
        let cfg = HeatmapConfig::new(1);
        let records: Vec<DetectionRecord> = (0..20)
            .map(|i| DetectionRecord {
                frame: i / 3,
                camera: (i % 3) as usize,
                boxes: vec![bx(10.0, 10.0, 20.0 + i as f64, 40.0, vec![i as f64])],
            })
            .collect();
        let serial = featurize(&records, &cfg, Pooling::AverageMax, Exec::Serial).unwrap();
        let parallel = featurize(&records, &cfg, Pooling::AverageMax, Exec::Parallel).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial[7].frame, 2);
        assert_eq!(serial[7].block.len(), 2);
    }
}

//! Multi-view feature records, the dataset container and its JSON-lines format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a candidate camera, `0..K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(pub usize);

impl CameraId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Features of one camera view at one frame, or a marker that the view was
/// never recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<Vec<f64>>", into = "Option<Vec<f64>>")]
pub enum FeatureBlock {
    Present(Vec<f64>),
    Missing,
}

impl FeatureBlock {
    pub fn is_present(&self) -> bool {
        matches!(self, FeatureBlock::Present(_))
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            FeatureBlock::Present(v) => Some(v),
            FeatureBlock::Missing => None,
        }
    }
}

impl From<Option<Vec<f64>>> for FeatureBlock {
    fn from(v: Option<Vec<f64>>) -> Self {
        v.map_or(FeatureBlock::Missing, FeatureBlock::Present)
    }
}

impl From<FeatureBlock> for Option<Vec<f64>> {
    fn from(b: FeatureBlock) -> Self {
        match b {
            FeatureBlock::Present(v) => Some(v),
            FeatureBlock::Missing => None,
        }
    }
}

/// One frame: a feature block per camera plus the operator's selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiViewSample {
    pub game_id: String,
    pub sequence_id: String,
    #[serde(rename = "frame")]
    pub frame_index: i64,
    pub label: CameraId,
    pub blocks: Vec<FeatureBlock>,
}

impl MultiViewSample {
    pub fn is_complete(&self) -> bool {
        self.blocks.iter().all(FeatureBlock::is_present)
    }

    /// Concatenate the blocks in camera order. Missing dimensions hold NaN
    /// and are flagged `false` in the mask.
    pub fn flatten(&self, f: usize) -> (Vec<f64>, Vec<bool>) {
        let mut values = Vec::with_capacity(self.blocks.len() * f);
        let mut mask = Vec::with_capacity(self.blocks.len() * f);
        for block in &self.blocks {
            match block {
                FeatureBlock::Present(v) => {
                    values.extend_from_slice(v);
                    mask.extend(std::iter::repeat_n(true, v.len()));
                }
                FeatureBlock::Missing => {
                    values.extend(std::iter::repeat_n(f64::NAN, f));
                    mask.extend(std::iter::repeat_n(false, f));
                }
            }
        }
        (values, mask)
    }
}

/// Sidecar configuration describing the camera layout of a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "F")]
    pub f: usize,
    #[serde(default)]
    pub camera_names: Vec<String>,
}

impl DatasetConfig {
    /// Layout with `k` cameras; three cameras get the left/middle/right names.
    pub fn new(k: usize, f: usize) -> Self {
        let camera_names = if k == 3 {
            vec!["left".into(), "middle".into(), "right".into()]
        } else {
            (0..k).map(|i| format!("camera{i}")).collect()
        };
        Self { k, f, camera_names }
    }

    pub fn dims(&self) -> usize {
        self.k * self.f
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let config: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.f == 0 {
            return Err(Error::InvalidInput(format!(
                "need K >= 2 and F >= 1, got K={} F={}",
                self.k, self.f
            )));
        }
        if !self.camera_names.is_empty() {
            if self.camera_names.len() != self.k {
                return Err(Error::InvalidInput(format!(
                    "{} camera names for K={}",
                    self.camera_names.len(),
                    self.k
                )));
            }
            let mut names = self.camera_names.clone();
            names.sort();
            names.dedup();
            if names.len() != self.k {
                return Err(Error::InvalidInput("camera names must be unique".into()));
            }
        }
        Ok(())
    }

    pub fn camera_name(&self, camera: usize) -> String {
        self.camera_names
            .get(camera)
            .cloned()
            .unwrap_or_else(|| format!("camera{camera}"))
    }
}

/// Observed range of one flattened dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimRange {
    pub min: f64,
    pub max: f64,
}

impl DimRange {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    fn include(range: &mut Option<DimRange>, v: f64) {
        match range {
            Some(r) => {
                r.min = r.min.min(v);
                r.max = r.max.max(v);
            }
            None => *range = Some(DimRange { min: v, max: v }),
        }
    }
}

/// Dense row-major feature matrix with a per-scalar observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != rows * cols || observed.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values / {} mask bits for a {rows}x{cols} matrix",
                values.len(),
                observed.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            values,
            observed,
        })
    }

    /// Fully observed matrix from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Shape(format!("row {bad} has a different length")));
        }
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        let observed = vec![true; values.len()];
        Self::new(rows.len(), cols, values, observed)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mask(&self, row: usize) -> &[bool] {
        &self.observed[row * self.cols..(row + 1) * self.cols]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64, observed: bool) {
        self.values[row * self.cols + col] = value;
        self.observed[row * self.cols + col] = observed;
    }

    /// First (row, col) that is not observed, scanning row-major.
    pub fn first_missing(&self) -> Option<(usize, usize)> {
        self.observed
            .iter()
            .position(|o| !o)
            .map(|i| (i / self.cols, i % self.cols))
    }

    /// Per-column range over observed entries.
    pub fn observed_ranges(&self) -> Vec<Option<DimRange>> {
        let mut ranges = vec![None; self.cols];
        for r in 0..self.rows {
            for (c, range) in ranges.iter_mut().enumerate() {
                if self.is_observed(r, c) {
                    DimRange::include(range, self.get(r, c));
                }
            }
        }
        ranges
    }
}

/// Ordered collection of samples sharing one camera layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    config: DatasetConfig,
    samples: Vec<MultiViewSample>,
    ranges: Vec<Option<DimRange>>,
}

impl Dataset {
    /// Validate shapes and compute the observed per-dimension ranges.
    pub fn new(config: DatasetConfig, samples: Vec<MultiViewSample>) -> Result<Self> {
        config.validate()?;
        for (i, s) in samples.iter().enumerate() {
            check_sample(&config, s).map_err(|m| Error::Shape(format!("sample {i}: {m}")))?;
        }
        let ranges = compute_ranges(&config, &samples);
        Ok(Self {
            config,
            samples,
            ranges,
        })
    }

    pub fn empty(config: DatasetConfig) -> Self {
        let ranges = vec![None; config.dims()];
        Self {
            config,
            samples: Vec::new(),
            ranges,
        }
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn f(&self) -> usize {
        self.config.f
    }

    pub fn dims(&self) -> usize {
        self.config.dims()
    }

    pub fn samples(&self) -> &[MultiViewSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<MultiViewSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Observed `(min, max)` per flattened dimension; `None` where nothing was observed.
    pub fn dim_ranges(&self) -> &[Option<DimRange>] {
        &self.ranges
    }

    /// Ranges for every dimension, failing on the first unobserved one.
    pub fn require_ranges(&self) -> Result<Vec<DimRange>> {
        self.ranges
            .iter()
            .enumerate()
            .map(|(dim, r)| r.ok_or_else(|| self.unobserved(dim)))
            .collect()
    }

    pub(crate) fn unobserved(&self, dim: usize) -> Error {
        Error::UnobservedDimension {
            dim,
            camera: dim / self.config.f,
            feature: dim % self.config.f,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.index()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.samples.iter().all(MultiViewSample::is_complete)
    }

    pub fn matrix(&self) -> FeatureMatrix {
        let dims = self.dims();
        let mut values = Vec::with_capacity(self.len() * dims);
        let mut observed = Vec::with_capacity(self.len() * dims);
        for s in &self.samples {
            let (v, m) = s.flatten(self.config.f);
            values.extend(v);
            observed.extend(m);
        }
        FeatureMatrix {
            rows: self.len(),
            cols: dims,
            values,
            observed,
        }
    }

    /// Partition into (samples with every view present, the rest).
    pub fn split_complete_incomplete(&self) -> (Dataset, Dataset) {
        let (complete, incomplete): (Vec<_>, Vec<_>) = self
            .samples
            .iter()
            .cloned()
            .partition(MultiViewSample::is_complete);
        (
            self.with_samples_unchecked(complete),
            self.with_samples_unchecked(incomplete),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        self.with_samples_unchecked(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    /// Samples of `self` followed by those of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.k() != other.k() || self.f() != other.f() {
            return Err(Error::Shape(format!(
                "cannot concatenate K={} F={} with K={} F={}",
                self.k(),
                self.f(),
                other.k(),
                other.f()
            )));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Ok(self.with_samples_unchecked(samples))
    }

    /// Replace every sample's blocks with rows of a fully observed matrix.
    pub fn with_matrix(&self, m: &FeatureMatrix) -> Result<Dataset> {
        if m.rows() != self.len() || m.cols() != self.dims() {
            return Err(Error::Shape(format!(
                "{}x{} matrix for {} samples of {} dims",
                m.rows(),
                m.cols(),
                self.len(),
                self.dims()
            )));
        }
        let f = self.f();
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(r, s)| {
                let blocks = (0..self.k())
                    .map(|c| {
                        let cols = c * f..(c + 1) * f;
                        if cols.clone().all(|col| m.is_observed(r, col)) {
                            FeatureBlock::Present(m.row(r)[cols].to_vec())
                        } else {
                            FeatureBlock::Missing
                        }
                    })
                    .collect();
                MultiViewSample {
                    blocks,
                    ..s.clone()
                }
            })
            .collect();
        Ok(self.with_samples_unchecked(samples))
    }

    fn with_samples_unchecked(&self, samples: Vec<MultiViewSample>) -> Dataset {
        let ranges = compute_ranges(&self.config, &samples);
        Dataset {
            config: self.config.clone(),
            samples,
            ranges,
        }
    }
}

fn check_sample(config: &DatasetConfig, s: &MultiViewSample) -> std::result::Result<(), String> {
    if s.blocks.len() != config.k {
        return Err(format!("{} blocks, expected K={}", s.blocks.len(), config.k));
    }
    if s.label.index() >= config.k {
        return Err(format!("label {} out of range for K={}", s.label, config.k));
    }
    for (c, block) in s.blocks.iter().enumerate() {
        if let FeatureBlock::Present(v) = block {
            if v.len() != config.f {
                return Err(format!(
                    "camera {c} block has {} values, expected F={}",
                    v.len(),
                    config.f
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(format!("camera {c} block has a non-finite value"));
            }
        }
    }
    if !s.blocks[s.label.index()].is_present() {
        return Err(format!("selected camera {} has no features", s.label));
    }
    Ok(())
}

fn compute_ranges(config: &DatasetConfig, samples: &[MultiViewSample]) -> Vec<Option<DimRange>> {
    let mut ranges = vec![None; config.dims()];
    for s in samples {
        for (c, block) in s.blocks.iter().enumerate() {
            if let FeatureBlock::Present(v) = block {
                for (j, &x) in v.iter().enumerate() {
                    DimRange::include(&mut ranges[c * config.f + j], x);
                }
            }
        }
    }
    ranges
}

/// Read a JSON-lines dataset. Blank lines are skipped; any malformed record
/// rejects the whole file.
pub fn load_dataset(path: impl AsRef<Path>, config: &DatasetConfig) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let sample: MultiViewSample =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        check_sample(config, &sample).map_err(parse_err)?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::NoRecords(path.to_path_buf()));
    }
    let dataset = Dataset::new(config.clone(), samples)?;
    dataset.require_ranges()?;
    Ok(dataset)
}

/// Write one JSON record per line in sample order.
pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(w: &mut W, dataset: &Dataset) -> Result<()> {
    for s in dataset.samples() {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

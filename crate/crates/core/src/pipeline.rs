//! Training flow: impute the auxiliary games, keep the imputed samples a
//! complete-data model agrees with, train the final selector on main plus
//! accepted auxiliary data. Also per-frame prediction and a minimum-duration
//! smoother for the resulting selection timelines.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{argmax, Classifier, Forest, ForestConfig};
use crate::impute::{self, Method, SurvivalConfig};
use crate::model::{CameraId, Dataset, MultiViewSample};
use crate::par::{self, Exec};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationConfig {
    pub enabled: bool,
    /// Minimum predicted probability of the operator's camera.
    pub min_confidence: f64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            min_confidence: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    None,
    /// Downsample every class to the smallest nonzero class count.
    #[default]
    Downsample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub enabled: bool,
    /// Minimum segment length in frames.
    pub min_duration: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            min_duration: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub survival: SurvivalConfig,
    #[serde(default = "default_method")]
    pub imputation: Method,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default)]
    pub balance: Balance,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    /// Seed for class balancing.
    #[serde(default)]
    pub seed: u64,
}

fn default_method() -> Method {
    Method::Rsf
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        if !(0.0..=1.0).contains(&self.verification.min_confidence) {
            return Err(Error::InvalidInput(format!(
                "min_confidence must lie in [0, 1], got {}",
                self.verification.min_confidence
            )));
        }
        if self.smoothing.min_duration == 0 {
            return Err(Error::InvalidInput("min_duration must be at least 1 frame".into()));
        }
        Ok(())
    }

    /// Derive every stage seed from one root seed.
    pub fn with_root_seed(mut self, root: u64) -> Self {
        self.forest.seed = seed::derive_seed(root, "forest", 0);
        self.survival.seed = seed::derive_seed(root, "rsf", 0);
        self.seed = seed::derive_seed(root, "pipeline.balance", 0);
        self
    }

    /// Apply one execution policy to every stage.
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.forest.exec = exec;
        self.survival.exec = exec;
        self
    }
}

/// Disjoint split of imputed samples by agreement with a complete-data model.
#[derive(Clone, Debug, PartialEq)]
pub struct Verified {
    pub accepted: Dataset,
    pub rejected: Dataset,
}

/// Accept an imputed sample iff the model predicts its label with at least
/// `min_confidence` probability.
pub fn verify_imputed(imputed: &Dataset, model: &Forest, min_confidence: f64) -> Result<Verified> {
    if model.n_classes() != imputed.k() || model.n_features() != imputed.dims() {
        return Err(Error::Shape(format!(
            "model has {} classes over {} features, data K={} with {} dims",
            model.n_classes(),
            model.n_features(),
            imputed.k(),
            imputed.dims()
        )));
    }
    let x = imputed.matrix();
    if let Some((sample, dim)) = x.first_missing() {
        return Err(Error::MissingValues { sample, dim });
    }
    let keep = par::try_map_indexed(model.config().exec, x.rows(), |r| {
        let p = model.predict_proba(x.row(r))?;
        let label = imputed.samples()[r].label;
        Ok::<_, Error>(argmax(&p) == label && p[label.index()] >= min_confidence)
    })?;
    let (acc, rej): (Vec<usize>, Vec<usize>) = (0..x.rows()).partition(|&r| keep[r]);
    Ok(Verified {
        accepted: imputed.subset(&acc),
        rejected: imputed.subset(&rej),
    })
}

/// Keep `min_c count(c)` samples of every present class, preserving order.
pub fn balance_classes(d: &Dataset, seed: u64) -> Dataset {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.k()];
    for (i, s) in d.samples().iter().enumerate() {
        by_class[s.label.index()].push(i);
    }
    let Some(target) = by_class.iter().map(Vec::len).filter(|&n| n > 0).min() else {
        return d.clone();
    };
    let mut rng = seed::stream(seed, "pipeline.balance", 0);
    let mut keep: Vec<usize> = Vec::new();
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        idx.truncate(target);
        keep.extend(idx);
    }
    keep.sort_unstable();
    d.subset(&keep)
}

/// Sample counts at each training stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub main: usize,
    pub aux_sampled: usize,
    pub aux_incomplete: usize,
    pub imputed_scalars: usize,
    pub imputed: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub final_training: usize,
    pub final_class_counts: Vec<usize>,
    pub imputation: Option<Method>,
}

/// Train the selector on `main`, plus the complete rows of `aux` and those
/// imputed rows of `aux` that pass verification.
pub fn train_full(main: &Dataset, aux: &Dataset, config: &PipelineConfig) -> Result<(Forest, TrainingReport)> {
    config.validate()?;
    if main.is_empty() {
        return Err(Error::InvalidInput("main set is empty".into()));
    }
    if !main.is_complete() {
        return Err(Error::InvalidInput("main set has missing views".into()));
    }
    let counts = |d: &Dataset| {
        let mut c = vec![0; d.k()];
        d.samples().iter().for_each(|s| c[s.label.index()] += 1);
        c
    };
    let mut report = TrainingReport {
        main: main.len(),
        ..TrainingReport::default()
    };
    if aux.is_empty() {
        let forest = Forest::fit(main, &config.forest)?;
        report.final_training = main.len();
        report.final_class_counts = counts(main);
        return Ok((forest, report));
    }

    report.aux_sampled = aux.len();
    let (aux_complete, aux_incomplete) = aux.split_complete_incomplete();
    report.aux_incomplete = aux_incomplete.len();
    let pool = main.concat(&aux_complete)?;
    let accepted = if aux_incomplete.is_empty() {
        aux_incomplete
    } else {
        let result = impute::impute(config.imputation, &pool, &aux_incomplete, &config.survival)?;
        report.imputation = Some(config.imputation);
        report.imputed_scalars = result.imputed_count();
        report.imputed = result.dataset().len();
        let imputed = result.into_dataset();
        if config.verification.enabled {
            let complete_model = Forest::fit(&pool, &config.forest)?;
            let v = verify_imputed(&imputed, &complete_model, config.verification.min_confidence)?;
            report.rejected = v.rejected.len();
            v.accepted
        } else {
            imputed
        }
    };
    report.accepted = accepted.len();

    let mut combined = pool.concat(&accepted)?;
    if config.balance == Balance::Downsample {
        combined = balance_classes(&combined, config.seed);
    }
    report.final_training = combined.len();
    report.final_class_counts = counts(&combined);
    let forest = Forest::fit(&combined, &config.forest)?;
    Ok((forest, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineFrame {
    pub frame: i64,
    pub camera: CameraId,
    pub proba: Vec<f64>,
}

/// Per-frame selections of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTimeline {
    pub sequence_id: String,
    pub frames: Vec<TimelineFrame>,
}

impl SelectionTimeline {
    pub fn cameras(&self) -> Vec<CameraId> {
        self.frames.iter().map(|f| f.camera).collect()
    }
}

/// Independent single-frame predictions, in the given frame order.
pub fn predict_sequence<C: Classifier>(model: &C, frames: &[MultiViewSample], f: usize) -> Result<SelectionTimeline> {
    let frames_out = par::try_map_indexed(Exec::default(), frames.len(), |i| {
        let s = &frames[i];
        if !s.is_complete() {
            return Err(Error::InvalidInput(format!("frame {} has missing views", s.frame_index)));
        }
        if s.blocks.iter().any(|b| b.values().is_some_and(|v| v.len() != f)) {
            return Err(Error::Shape(format!("frame {} block length differs from F={f}", s.frame_index)));
        }
        let (x, _) = s.flatten(f);
        let proba = model.predict_proba(&x)?;
        Ok(TimelineFrame {
            frame: s.frame_index,
            camera: argmax(&proba),
            proba,
        })
    })?;
    Ok(SelectionTimeline {
        sequence_id: frames.first().map(|s| s.sequence_id.clone()).unwrap_or_default(),
        frames: frames_out,
    })
}

/// One timeline per sequence, in order of first appearance.
pub fn predict_sequences<C: Classifier>(model: &C, d: &Dataset) -> Result<Vec<SelectionTimeline>> {
    group_by_sequence(d.samples())
        .into_iter()
        .map(|frames| predict_sequence(model, &frames, d.f()))
        .collect()
}

pub(crate) fn group_by_sequence(samples: &[MultiViewSample]) -> Vec<Vec<MultiViewSample>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<MultiViewSample>> = Default::default();
    for s in samples {
        let g = groups.entry(s.sequence_id.as_str()).or_insert_with(|| {
            order.push(s.sequence_id.as_str());
            Vec::new()
        });
        g.push(s.clone());
    }
    order.into_iter().map(|k| groups.remove(k).unwrap()).collect()
}

/// Greedy minimum-duration filter on a label stream. A switch to a new
/// camera is committed only when that camera holds for `min_duration`
/// consecutive raw frames and the current segment is already at least
/// `min_duration` long, so only the final segment can be shorter.
pub fn smooth_labels(raw: &[CameraId], min_duration: usize) -> Vec<CameraId> {
    let tau = min_duration.max(1);
    let Some(&first) = raw.first() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(raw.len());
    let mut current = first;
    let mut segment_start = 0;
    for i in 0..raw.len() {
        let c = raw[i];
        if c != current
            && i - segment_start >= tau
            && i + tau <= raw.len()
            && raw[i..i + tau].iter().all(|&r| r == c)
        {
            current = c;
            segment_start = i;
        }
        out.push(current);
    }
    out
}

/// Smooth the camera choices of a timeline; probabilities pass through.
pub fn smooth_timeline(t: &SelectionTimeline, min_duration: usize) -> SelectionTimeline {
    let raw: Vec<CameraId> = t.frames.iter().map(|f| argmax(&f.proba)).collect();
    let smoothed = smooth_labels(&raw, min_duration);
    SelectionTimeline {
        sequence_id: t.sequence_id.clone(),
        frames: t
            .frames
            .iter()
            .zip(smoothed)
            .map(|(f, camera)| TimelineFrame {
                camera,
                ..f.clone()
            })
            .collect(),
    }
}

/// Run-length encoding of a label stream.
pub fn segments(labels: &[CameraId]) -> Vec<(CameraId, usize)> {
    let mut out: Vec<(CameraId, usize)> = Vec::new();
    for &c in labels {
        match out.last_mut() {
            Some((last, n)) if *last == c => *n += 1,
            _ => out.push((c, 1)),
        }
    }
    out
}

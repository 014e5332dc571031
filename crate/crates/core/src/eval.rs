//! Leave-sequences-out cross-validation, accuracy reports and the
//! constant-selection baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forest::{argmax, Classifier};
use crate::impute::{self, imputation_error, ImputationErrors, Method, SurvivalConfig};
use crate::model::{CameraId, Dataset, FeatureBlock};
use crate::par::{self, Exec};
use crate::pipeline::{segments, smooth_labels, train_full, PipelineConfig, TrainingReport};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Sample indices of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_sequences: Vec<String>,
}

fn sequence_key(seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

/// Whole sequences are assigned to test folds: sequences are ordered by a
/// seeded hash of their id and dealt round-robin, so fold sizes differ by at
/// most one sequence.
pub fn cv_splits(d: &Dataset, n_folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if n_folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {n_folds}")));
    }
    let mut ids: Vec<&str> = d.samples().iter().map(|s| s.sequence_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < n_folds {
        return Err(Error::InvalidInput(format!(
            "{} distinct sequences for {n_folds} folds",
            ids.len()
        )));
    }
    ids.sort_by_key(|id| (sequence_key(seed, id), *id));
    let fold_of: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(r, id)| (*id, r % n_folds)).collect();
    Ok((0..n_folds)
        .map(|k| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..d.len()).partition(|&i| fold_of[d.samples()[i].sequence_id.as_str()] == k);
            let test_sequences = ids
                .iter()
                .filter(|id| fold_of[**id] == k)
                .map(|s| s.to_string())
                .collect();
            Fold {
                train,
                test,
                test_sequences,
            }
        })
        .collect())
}

/// Always predicts one camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantPredictor {
    pub camera: CameraId,
    pub n_classes: usize,
}

impl Classifier for ConstantPredictor {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, _x: &[f64]) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.n_classes];
        p[self.camera.index()] = 1.0;
        Ok(p)
    }
}

/// Predictor of the most frequent training camera, lowest index on ties.
pub fn baseline_constant(d: &Dataset) -> Result<ConstantPredictor> {
    if d.is_empty() {
        return Err(Error::InvalidInput("no training labels".into()));
    }
    let mut counts = vec![0.0; d.k()];
    for s in d.samples() {
        counts[s.label.index()] += 1.0;
    }
    Ok(ConstantPredictor {
        camera: argmax(&counts),
        n_classes: d.k(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraAccuracy {
    pub camera: CameraId,
    pub name: String,
    /// Fraction of frames of this camera that were predicted correctly (recall).
    pub accuracy: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub segments: usize,
    pub min_length: usize,
    pub mean_length: f64,
}

impl SegmentStats {
    fn from_streams(streams: &[Vec<CameraId>]) -> Self {
        let lengths: Vec<usize> = streams
            .iter()
            .flat_map(|s| segments(s).into_iter().map(|(_, n)| n))
            .collect();
        Self {
            segments: lengths.len(),
            min_length: lengths.iter().copied().min().unwrap_or(0),
            mean_length: if lengths.is_empty() {
                0.0
            } else {
                lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchStats {
    pub raw: SegmentStats,
    pub smoothed: Option<SegmentStats>,
    pub min_duration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationCurve {
    pub method: Method,
    pub scored_scalars: usize,
    pub mean_error: f64,
    /// Fraction of imputed scalars with normalized error at most 0.2.
    pub within_0_2: f64,
    pub curve: Vec<(f64, f64)>,
    pub excluded_dims: Vec<usize>,
}

impl ImputationCurve {
    pub fn new(method: Method, e: &ImputationErrors) -> Self {
        Self {
            method,
            scored_scalars: e.errors.len(),
            mean_error: e.mean,
            within_0_2: e.fraction_within(0.2),
            curve: e.curve.clone(),
            excluded_dims: e.excluded_dims.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub n_folds: usize,
    pub total: u64,
    pub overall_accuracy: f64,
    pub per_camera: Vec<CameraAccuracy>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub fold_accuracies: Vec<f64>,
    pub switches: SwitchStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub training: Vec<TrainingReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputation: Option<ImputationCurve>,
}

impl EvalReport {
    /// Confusion matrix as CSV with a header row of predicted cameras.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut out = String::from("true\\pred");
        for c in 0..k {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

struct FoldOutcome {
    predictions: Vec<(usize, CameraId)>,
    streams: Vec<Vec<CameraId>>,
    training: Option<TrainingReport>,
}

/// Cross-validate whatever `trainer` builds from each fold's training set.
/// `min_duration > 1` also reports switch statistics after smoothing.
pub fn evaluate_with<C, T>(
    d: &Dataset,
    folds: &[Fold],
    exec: Exec,
    min_duration: usize,
    trainer: T,
) -> Result<EvalReport>
where
    C: Classifier,
    T: Fn(&Dataset) -> Result<(C, Option<TrainingReport>)> + Sync + Send,
{
    if let Some(i) = folds.iter().flat_map(|f| &f.test).find(|&&i| !d.samples()[i].is_complete()) {
        return Err(Error::InvalidInput(format!("test sample {i} has missing views")));
    }
    let outcomes = par::try_map_indexed(exec, folds.len(), |k| {
        let fold = &folds[k];
        let (model, training) = trainer(&d.subset(&fold.train))?;
        let mut predictions = Vec::with_capacity(fold.test.len());
        for &i in &fold.test {
            let (x, _) = d.samples()[i].flatten(d.f());
            predictions.push((i, model.predict(&x)?));
        }
        let mut order: Vec<&str> = Vec::new();
        let mut by_seq: BTreeMap<&str, Vec<CameraId>> = BTreeMap::new();
        for &(i, pred) in &predictions {
            let id = d.samples()[i].sequence_id.as_str();
            by_seq
                .entry(id)
                .or_insert_with(|| {
                    order.push(id);
                    Vec::new()
                })
                .push(pred);
        }
        let streams = order.iter().map(|id| by_seq.remove(id).unwrap()).collect();
        Ok::<_, Error>(FoldOutcome {
            predictions,
            streams,
            training,
        })
    })?;

    let k = d.k();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut fold_accuracies = Vec::with_capacity(folds.len());
    let mut streams = Vec::new();
    let mut training = Vec::new();
    for o in outcomes {
        let mut correct = 0;
        for &(i, pred) in &o.predictions {
            let truth = d.samples()[i].label;
            confusion[truth.index()][pred.index()] += 1;
            correct += usize::from(truth == pred);
        }
        fold_accuracies.push(if o.predictions.is_empty() {
            0.0
        } else {
            correct as f64 / o.predictions.len() as f64
        });
        streams.extend(o.streams);
        training.extend(o.training);
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let per_camera = (0..k)
        .map(|c| {
            let support: u64 = confusion[c].iter().sum();
            CameraAccuracy {
                camera: CameraId(c),
                name: d.config().camera_name(c),
                accuracy: if support == 0 {
                    0.0
                } else {
                    confusion[c][c] as f64 / support as f64
                },
                support,
            }
        })
        .collect();
    let smoothed = (min_duration > 1).then(|| {
        let s: Vec<Vec<CameraId>> = streams.iter().map(|s| smooth_labels(s, min_duration)).collect();
        SegmentStats::from_streams(&s)
    });
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n_folds: folds.len(),
        total,
        overall_accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
        per_camera,
        confusion,
        fold_accuracies,
        switches: SwitchStats {
            raw: SegmentStats::from_streams(&streams),
            smoothed,
            min_duration,
        },
        training,
        imputation: None,
    })
}

/// Cross-validate the full training pipeline on `main`, adding `aux` (which
/// never enters a test fold) to every training set.
pub fn evaluate_pipeline(
    config: &PipelineConfig,
    main: &Dataset,
    aux: &Dataset,
    folds: &[Fold],
) -> Result<EvalReport> {
    let min_duration = if config.smoothing.enabled {
        config.smoothing.min_duration
    } else {
        1
    };
    evaluate_with(main, folds, config.forest.exec, min_duration, |train| {
        let (forest, report) = train_full(train, aux, config)?;
        Ok((forest, Some(report)))
    })
}

/// Hold out the last `tail_fraction` of `d` (which must be complete), hide
/// every view except the selected one there, impute from the rest and score
/// the imputation against the hidden values.
pub fn imputation_holdout(
    d: &Dataset,
    tail_fraction: f64,
    method: Method,
    config: &SurvivalConfig,
) -> Result<ImputationErrors> {
    if !d.is_complete() {
        return Err(Error::InvalidInput("holdout needs a complete dataset".into()));
    }
    if !(0.0 < tail_fraction && tail_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("tail fraction {tail_fraction} outside (0, 1)")));
    }
    let cut = d.len() - ((d.len() as f64 * tail_fraction).round() as usize).clamp(1, d.len() - 1);
    let head: Vec<usize> = (0..cut).collect();
    let tail: Vec<usize> = (cut..d.len()).collect();
    let truth = d.subset(&tail);
    let masked: Vec<_> = truth
        .samples()
        .iter()
        .map(|s| {
            let mut m = s.clone();
            for (k, b) in m.blocks.iter_mut().enumerate() {
                if k != s.label.index() {
                    *b = FeatureBlock::Missing;
                }
            }
            m
        })
        .collect();
    let masked = Dataset::new(d.config().clone(), masked)?;
    let result = impute::impute(method, &d.subset(&head), &masked, config)?;
    imputation_error(&result, &truth)
}

use serde::{Deserialize, Serialize};

use super::{ImputationResult, Provenance};
use crate::error::{Error, Result};
use crate::model::Dataset;

/// Number of intervals in the threshold grid over `[0, 1]`.
pub const CURVE_STEPS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarError {
    pub sample: usize,
    pub dim: usize,
    pub error: f64,
}

/// Range-normalized absolute errors of every imputed scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationErrors {
    pub errors: Vec<ScalarError>,
    /// `(threshold, fraction of imputed scalars with error <= threshold)`.
    pub curve: Vec<(f64, f64)>,
    pub mean: f64,
    /// Dimensions left out because their true range is zero.
    pub excluded_dims: Vec<usize>,
}

impl ImputationErrors {
    /// Fraction of scored scalars with error at most `t`.
    pub fn fraction_within(&self, t: f64) -> f64 {
        if self.errors.is_empty() {
            return 1.0;
        }
        self.errors.iter().filter(|e| e.error <= t).count() as f64 / self.errors.len() as f64
    }
}

/// Score imputed scalars against `truth`, which must hold the same samples
/// in the same order with every view present.
pub fn imputation_error(result: &ImputationResult, truth: &Dataset) -> Result<ImputationErrors> {
    let imputed = result.dataset();
    if imputed.len() != truth.len() || imputed.k() != truth.k() || imputed.f() != truth.f() {
        return Err(Error::Shape(format!(
            "imputed set has {} samples (K={}, F={}), truth {} (K={}, F={})",
            imputed.len(),
            imputed.k(),
            imputed.f(),
            truth.len(),
            truth.k(),
            truth.f()
        )));
    }
    if !truth.is_complete() {
        return Err(Error::InvalidInput("truth has missing views".into()));
    }
    let ranges = truth.require_ranges()?;
    let a = imputed.matrix();
    let b = truth.matrix();
    let mut excluded = std::collections::BTreeSet::new();
    let mut errors = Vec::new();
    for r in 0..a.rows() {
        for (d, range) in ranges.iter().enumerate() {
            if result.provenance(r, d) != Provenance::Imputed {
                continue;
            }
            let w = range.width();
            if w > 0.0 {
                errors.push(ScalarError {
                    sample: r,
                    dim: d,
                    error: (a.get(r, d) - b.get(r, d)).abs() / w,
                });
            } else {
                excluded.insert(d);
            }
        }
    }
    let mean = if errors.is_empty() {
        0.0
    } else {
        errors.iter().map(|e| e.error).sum::<f64>() / errors.len() as f64
    };
    let mut out = ImputationErrors {
        errors,
        curve: Vec::new(),
        mean,
        excluded_dims: excluded.into_iter().collect(),
    };
    out.curve = (0..=CURVE_STEPS)
        .map(|i| {
            let t = i as f64 / CURVE_STEPS as f64;
            (t, out.fraction_within(t))
        })
        .collect();
    Ok(out)
}

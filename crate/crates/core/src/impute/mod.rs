//! Filling in unrecorded camera views.
//!
//! Three imputers share one result type: the random survival forest
//! ([`impute_rsf`]), nearest-neighbour copy ([`impute_nn`]) and per-dimension
//! mean ([`impute_mean`]). [`imputation_error`] scores any of them against
//! withheld ground truth.

mod baseline;
mod metrics;
mod rsf;

pub use baseline::{impute_mean, impute_nn};
pub use metrics::{imputation_error, ImputationErrors, ScalarError, CURVE_STEPS};
pub use rsf::{
    impute_rsf, node_draw_bounds, Aggregation, SurvivalConfig, SurvivalForest,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, DimRange, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Observed,
    Imputed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rsf,
    Nn,
    Mean,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rsf" => Ok(Method::Rsf),
            "nn" => Ok(Method::Nn),
            "mean" => Ok(Method::Mean),
            other => Err(Error::InvalidInput(format!("unknown imputation method {other}"))),
        }
    }
}

/// Run the chosen imputer on `incomplete`, learning from `complete`.
pub fn impute(
    method: Method,
    complete: &Dataset,
    incomplete: &Dataset,
    config: &SurvivalConfig,
) -> Result<ImputationResult> {
    match method {
        Method::Rsf => impute_rsf(complete, incomplete, config),
        Method::Nn => impute_nn(complete, incomplete),
        Method::Mean => impute_mean(complete, incomplete),
    }
}

/// Imputed copy of the incomplete input, in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputationResult {
    dataset: Dataset,
    imputed: Vec<bool>,
    draw_bounds: Vec<DimRange>,
}

impl ImputationResult {
    /// `filled` must be fully observed; `source` supplies the original mask.
    pub(crate) fn new(
        source: &Dataset,
        source_matrix: &FeatureMatrix,
        filled: &FeatureMatrix,
        draw_bounds: Vec<DimRange>,
    ) -> Result<Self> {
        debug_assert!(filled.first_missing().is_none());
        let dims = source.dims();
        let imputed = (0..source.len())
            .flat_map(|r| (0..dims).map(move |d| (r, d)))
            .map(|(r, d)| !source_matrix.is_observed(r, d))
            .collect();
        Ok(Self {
            dataset: source.with_matrix(filled)?,
            imputed,
            draw_bounds,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn into_dataset(self) -> Dataset {
        self.dataset
    }

    pub fn provenance(&self, sample: usize, dim: usize) -> Provenance {
        if self.imputed[sample * self.dataset.dims() + dim] {
            Provenance::Imputed
        } else {
            Provenance::Observed
        }
    }

    pub fn imputed_count(&self) -> usize {
        self.imputed.iter().filter(|&&b| b).count()
    }

    /// Per-dimension bounds available to the imputer (global observed ranges).
    pub fn draw_bounds(&self) -> &[DimRange] {
        &self.draw_bounds
    }
}

/// Global observed ranges of `complete ∪ incomplete`, failing on a dimension
/// that is never observed.
pub(crate) fn combined_ranges(complete: &Dataset, incomplete: &Dataset) -> Result<Vec<DimRange>> {
    check_shapes(complete, incomplete)?;
    complete
        .dim_ranges()
        .iter()
        .zip(incomplete.dim_ranges())
        .enumerate()
        .map(|(d, (a, b))| match (a, b) {
            (Some(a), Some(b)) => Ok(DimRange {
                min: a.min.min(b.min),
                max: a.max.max(b.max),
            }),
            (Some(r), None) | (None, Some(r)) => Ok(*r),
            (None, None) => Err(complete.unobserved(d)),
        })
        .collect()
}

pub(crate) fn check_shapes(complete: &Dataset, incomplete: &Dataset) -> Result<()> {
    if complete.k() != incomplete.k() || complete.f() != incomplete.f() {
        return Err(Error::Shape(format!(
            "complete set has K={} F={}, incomplete set K={} F={}",
            complete.k(),
            complete.f(),
            incomplete.k(),
            incomplete.f()
        )));
    }
    if !complete.is_complete() {
        return Err(Error::InvalidInput(
            "the complete set contains samples with missing views".into(),
        ));
    }
    Ok(())
}

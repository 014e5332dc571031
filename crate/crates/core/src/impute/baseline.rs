use super::{check_shapes, combined_ranges, ImputationResult};
use crate::error::{Error, Result};
use crate::model::{Dataset, FeatureMatrix};
use crate::par::{self, Exec};

/// Copy missing values from the complete sample nearest on the mutually
/// observed dimensions, each scaled by its observed range. Ties go to the
/// earlier complete sample.
pub fn impute_nn(complete: &Dataset, incomplete: &Dataset) -> Result<ImputationResult> {
    check_shapes(complete, incomplete)?;
    if complete.is_empty() {
        return Err(Error::InvalidInput("complete set is empty".into()));
    }
    let global = combined_ranges(complete, incomplete)?;
    let scale: Vec<f64> = global
        .iter()
        .map(|r| if r.width() > 0.0 { 1.0 / r.width() } else { 1.0 })
        .collect();
    let reference = complete.matrix();
    let x = incomplete.matrix();
    let dims = x.cols();

    let rows = par::try_map_indexed(Exec::default(), x.rows(), |r| {
        let mask = x.row_mask(r);
        let shared: Vec<usize> = (0..dims).filter(|&d| mask[d]).collect();
        if shared.is_empty() {
            return Err(Error::NoSharedDimensions(r));
        }
        let mut out = x.row(r).to_vec();
        if shared.len() == dims {
            return Ok(out);
        }
        let mut best = (f64::INFINITY, 0);
        for c in 0..reference.rows() {
            let dist: f64 = shared
                .iter()
                .map(|&d| {
                    let z = (x.get(r, d) - reference.get(c, d)) * scale[d];
                    z * z
                })
                .sum();
            if dist < best.0 {
                best = (dist, c);
            }
        }
        for (d, slot) in out.iter_mut().enumerate() {
            if !mask[d] {
                *slot = reference.get(best.1, d);
            }
        }
        Ok(out)
    })?;
    let filled = FeatureMatrix::new(
        x.rows(),
        dims,
        rows.into_iter().flatten().collect(),
        vec![true; x.rows() * dims],
    )?;
    ImputationResult::new(incomplete, &x, &filled, global)
}

/// Replace each missing scalar by the mean of its dimension over `complete`.
pub fn impute_mean(complete: &Dataset, incomplete: &Dataset) -> Result<ImputationResult> {
    check_shapes(complete, incomplete)?;
    if complete.is_empty() {
        return Err(Error::InvalidInput("complete set is empty".into()));
    }
    let global = combined_ranges(complete, incomplete)?;
    let reference = complete.matrix();
    let dims = reference.cols();
    let means: Vec<f64> = (0..dims)
        .map(|d| (0..reference.rows()).map(|r| reference.get(r, d)).sum::<f64>() / reference.rows() as f64)
        .collect();
    let x = incomplete.matrix();
    let mut filled = x.clone();
    for r in 0..x.rows() {
        for (d, &m) in means.iter().enumerate() {
            if !x.is_observed(r, d) {
                filled.set(r, d, m, true);
            }
        }
    }
    ImputationResult::new(incomplete, &x, &filled, global)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CameraId, DatasetConfig, FeatureBlock, MultiViewSample};

    fn sample(label: usize, blocks: Vec<Option<Vec<f64>>>) -> MultiViewSample {
        MultiViewSample {
            game_id: "g".into(),
            sequence_id: "s".into(),
            frame_index: 0,
            label: CameraId(label),
            blocks: blocks.into_iter().map(FeatureBlock::from).collect(),
        }
    }

    fn ds(samples: Vec<MultiViewSample>) -> Dataset {
        Dataset::new(DatasetConfig::new(2, 2), samples).unwrap()
    }

    #[test]
    fn nn_copies_exact_match() {
        let complete = ds(vec![
            sample(0, vec![Some(vec![0.0, 0.0]), Some(vec![1.0, 1.0])]),
            sample(0, vec![Some(vec![5.0, 5.0]), Some(vec![9.0, 8.0])]),
        ]);
        let incomplete = ds(vec![sample(0, vec![Some(vec![5.0, 5.0]), None])]);
        let r = impute_nn(&complete, &incomplete).unwrap();
        assert_eq!(
            r.dataset().samples()[0].blocks[1],
            FeatureBlock::Present(vec![9.0, 8.0])
        );
        assert_eq!(r.imputed_count(), 2);
    }

    #[test]
    fn nn_single_reference_is_always_copied() {
        let complete = ds(vec![sample(1, vec![Some(vec![3.0, 4.0]), Some(vec![1.0, 2.0])])]);
        let incomplete = ds(vec![
            sample(0, vec![Some(vec![-5.0, 5.0]), None]),
            sample(1, vec![None, Some(vec![7.0, 7.0])]),
        ]);
        let r = impute_nn(&complete, &incomplete).unwrap();
        assert_eq!(r.dataset().samples()[0].blocks[1], FeatureBlock::Present(vec![1.0, 2.0]));
        assert_eq!(r.dataset().samples()[1].blocks[0], FeatureBlock::Present(vec![3.0, 4.0]));
        assert_eq!(r.dataset().samples()[1].blocks[1], FeatureBlock::Present(vec![7.0, 7.0]));
    }

    #[test]
    fn nn_ties_go_to_first_reference() {
        let complete = ds(vec![
            sample(0, vec![Some(vec![1.0, 0.0]), Some(vec![10.0, 10.0])]),
            sample(0, vec![Some(vec![-1.0, 0.0]), Some(vec![20.0, 20.0])]),
        ]);
        let incomplete = ds(vec![sample(0, vec![Some(vec![0.0, 0.0]), None])]);
        let r = impute_nn(&complete, &incomplete).unwrap();
        assert_eq!(r.dataset().samples()[0].blocks[1], FeatureBlock::Present(vec![10.0, 10.0]));
    }

    #[test]
    fn mean_fills_midpoint_and_keeps_observed() {
        let complete = ds(vec![
            sample(0, vec![Some(vec![0.0, 1.0]), Some(vec![0.0, 4.0])]),
            sample(0, vec![Some(vec![2.0, 3.0]), Some(vec![2.0, 6.0])]),
        ]);
        let incomplete = ds(vec![sample(0, vec![Some(vec![0.3, 0.7]), None])]);
        let r = impute_mean(&complete, &incomplete).unwrap();
        let s = &r.dataset().samples()[0];
        assert_eq!(s.blocks[0], FeatureBlock::Present(vec![0.3, 0.7]));
        assert_eq!(s.blocks[1], FeatureBlock::Present(vec![1.0, 5.0]));
        assert_eq!(r.provenance(0, 0), super::super::Provenance::Observed);
        assert_eq!(r.provenance(0, 3), super::super::Provenance::Imputed);
    }

    #[test]
    fn empty_complete_set_is_rejected() {
        let complete = Dataset::empty(DatasetConfig::new(2, 2));
        let incomplete = ds(vec![sample(0, vec![Some(vec![0.3, 0.7]), Some(vec![1.0, 1.0])])]);
        assert!(impute_nn(&complete, &incomplete).is_err());
        assert!(impute_mean(&complete, &incomplete).is_err());
    }
}

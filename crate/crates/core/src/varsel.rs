//! Online variance-ratio variable selection.
//!
//! For each retained variable the within-cluster sum of squares of its latent
//! values is compared with the overall sum of squares. A ratio near one means
//! the clusters do not separate on that variable and it is dropped for good.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::MixedDataset;
use crate::error::{Error, Result};
use crate::model::McmcState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarSelConfig {
    pub epsilon_continuous: f64,
    pub epsilon_categorical: f64,
    /// Weight squared deviations by membership probabilities instead of the
    /// sampled allocation.
    pub fuzzy: bool,
}

impl Default for VarSelConfig {
    fn default() -> Self {
        VarSelConfig {
            epsilon_continuous: 0.95,
            epsilon_categorical: 0.99,
            fuzzy: false,
        }
    }
}

impl VarSelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, eps) in [
            ("epsilon_continuous", self.epsilon_continuous),
            ("epsilon_categorical", self.epsilon_categorical),
        ] {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::Config(format!("varsel.{name} = {eps} is not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Within-cluster over overall sum of squares, pooled across the columns of
/// one variable.
pub fn variance_ratio(columns: &[&[f64]], alloc: &[usize], groups: usize) -> Result<f64> {
    let n = alloc.len();
    let mut within = 0.0;
    let mut overall = 0.0;
    let mut sums = vec![0.0; groups];
    let mut counts = vec![0usize; groups];
    for &g in alloc {
        counts[g] += 1;
    }
    for col in columns {
        debug_assert_eq!(col.len(), n);
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (&x, &g) in col.iter().zip(alloc) {
            sums[g] += x;
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        overall += col.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        within += col
            .iter()
            .zip(alloc)
            .map(|(&x, &g)| (x - sums[g] / counts[g] as f64).powi(2))
            .sum::<f64>();
    }
    if !(overall > 0.0) {
        return Err(Error::ZeroOverallVariance(String::new()));
    }
    Ok(within / overall)
}

/// Variance ratio with soft memberships: `weights` is `G × N`, columns sum to
/// one; cluster means are weighted means.
pub fn fuzzy_variance_ratio(columns: &[&[f64]], weights: &DMatrix<f64>) -> Result<f64> {
    let n = weights.ncols();
    let groups = weights.nrows();
    let mut within = 0.0;
    let mut overall = 0.0;
    for col in columns {
        let mean = col.iter().sum::<f64>() / n as f64;
        overall += col.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        for g in 0..groups {
            let mass: f64 = weights.row(g).sum();
            if mass <= 0.0 {
                continue;
            }
            let center = col.iter().enumerate().map(|(i, x)| weights[(g, i)] * x).sum::<f64>() / mass;
            within += col
                .iter()
                .enumerate()
                .map(|(i, x)| weights[(g, i)] * (x - center).powi(2))
                .sum::<f64>();
        }
    }
    if !(overall > 0.0) {
        return Err(Error::ZeroOverallVariance(String::new()));
    }
    Ok(within / overall)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarSelAction {
    Retained,
    Removed,
}

/// One row of the per-check trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarSelRecord {
    pub iteration: u64,
    pub variable: String,
    pub vr: f64,
    pub action: VarSelAction,
}

/// Variance ratio of every retained variable under the current latent data
/// and allocation. Zero-variance variables report `NaN`.
pub fn variance_ratios(state: &McmcState, ds: &MixedDataset, fuzzy: bool) -> Vec<(usize, f64)> {
    let layout = ds.layout();
    let n = state.n_obs();
    let mut out = Vec::new();
    for j in state.active_variables() {
        let cols: Vec<Vec<f64>> = layout
            .slot(j)
            .range()
            .map(|d| (0..n).map(|i| state.z[(d, i)]).collect())
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let vr = if fuzzy {
            fuzzy_variance_ratio(&refs, &state.membership)
        } else {
            variance_ratio(&refs, &state.alloc, state.groups())
        };
        out.push((j, vr.unwrap_or(f64::NAN)));
    }
    out
}

/// Drops every retained variable whose variance ratio exceeds its threshold
/// and returns the trace rows of this check.
pub fn selection_step(
    state: &mut McmcState,
    ds: &MixedDataset,
    config: &VarSelConfig,
    iteration: u64,
) -> Vec<VarSelRecord> {
    let ratios = variance_ratios(state, ds, config.fuzzy);
    let mut removed = Vec::new();
    let mut trace = Vec::with_capacity(ratios.len());
    for (j, vr) in ratios {
        let eps = if ds.variable(j).is_categorical() {
            config.epsilon_categorical
        } else {
            config.epsilon_continuous
        };
        let action = if vr.is_nan() || vr > eps {
            if vr.is_nan() {
                log::warn!("`{}` has zero overall variance; removing", ds.variable(j).name);
            }
            removed.push(j);
            VarSelAction::Removed
        } else {
            VarSelAction::Retained
        };
        trace.push(VarSelRecord {
            iteration,
            variable: ds.variable(j).name.clone(),
            vr,
            action,
        });
    }
    state.remove_variables(ds, &removed);
    trace
}

pub fn write_trace<W: Write>(trace: &[VarSelRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for rec in trace {
        out.serialize(rec)?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_ratio_is_one() {
        let x = [1.0, 4.0, 2.0, 8.0];
        assert_eq!(variance_ratio(&[&x], &[0, 0, 0, 0], 1).unwrap(), 1.0);
    }

    #[test]
    fn perfect_separation_is_zero() {
        let x = [1.0, 1.0, 5.0, 5.0];
        assert_eq!(variance_ratio(&[&x], &[0, 0, 1, 1], 2).unwrap(), 0.0);
    }

    #[test]
    fn arithmetic_case() {
        // Within: 0.5 + 0.5; overall: 2.25 + 0.25 + 0.25 + 2.25.
        let x = [1.0, 2.0, 3.0, 4.0];
        let vr = variance_ratio(&[&x], &[0, 0, 1, 1], 2).unwrap();
        assert!((vr - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pooled_columns() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 0.0, 0.0, 1.0];
        // y: within 0 + 0.5, overall 0.75
        let vr = variance_ratio(&[&x, &y], &[0, 0, 1, 1], 2).unwrap();
        assert!((vr - 1.5 / 5.75).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_is_flagged() {
        let x = [3.0; 4];
        assert!(matches!(
            variance_ratio(&[&x], &[0, 1, 0, 1], 2),
            Err(Error::ZeroOverallVariance(_))
        ));
    }

    #[test]
    fn empty_cluster_is_ignored() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let vr = variance_ratio(&[&x], &[0, 0, 2, 2], 3).unwrap();
        assert!((vr - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fuzzy_with_hard_weights_matches_hard() {
        let x = [1.0, 2.0, 3.0, 4.0, 0.5];
        let alloc = [0, 0, 1, 1, 1];
        let w = DMatrix::from_fn(2, 5, |g, i| if alloc[i] == g { 1.0 } else { 0.0 });
        let hard = variance_ratio(&[&x], &alloc, 2).unwrap();
        let soft = fuzzy_variance_ratio(&[&x], &w).unwrap();
        assert!((hard - soft).abs() < 1e-14);
    }

    #[test]
    fn thresholds_validate() {
        assert!(VarSelConfig::default().validate().is_ok());
        let bad = VarSelConfig {
            epsilon_continuous: 1.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ratio_in_unit_interval(
                xs in proptest::collection::vec(-50.0f64..50.0, 4..60),
                seed in 0u64..1000,
            ) {
                let alloc: Vec<usize> = (0..xs.len()).map(|i| ((i as u64 * 2654435761 + seed) % 3) as usize).collect();
                if let Ok(vr) = variance_ratio(&[&xs], &alloc, 3) {
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&vr));
                }
            }
        }
    }
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dgp::CovariateTable;
use crate::error::{Error, Result};
use crate::panel::UnitEffectEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitLabel {
    pub unit_id: u64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub unit_id: u64,
    pub features: Vec<f64>,
    pub label: u8,
}

/// Label the `ceil(q * n)` largest slopes 1 and the rest 0, breaking ties at
/// the cut by ascending unit id. Output follows input order.
pub fn make_labels(estimates: &[UnitEffectEstimate], q: f64) -> Result<Vec<UnitLabel>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::validation("quantile", "must lie strictly between 0 and 1"));
    }
    if estimates.is_empty() {
        return Err(Error::validation("estimates", "must be nonempty"));
    }
    if estimates.iter().any(|e| e.beta_hat.is_nan()) {
        return Err(Error::validation("estimates", "beta_hat contains NaN"));
    }
    let n = estimates.len();
    // guard against q * n landing a hair above an integer
    let k = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        estimates[b]
            .beta_hat
            .total_cmp(&estimates[a].beta_hat)
            .then(estimates[a].unit_id.cmp(&estimates[b].unit_id))
    });
    let mut labels: Vec<UnitLabel> = estimates
        .iter()
        .map(|e| UnitLabel {
            unit_id: e.unit_id,
            label: 0,
        })
        .collect();
    for &i in order.iter().take(k) {
        labels[i].label = 1;
    }
    Ok(labels)
}

/// Join labels with covariate rows by unit id.
pub fn build_examples(labels: &[UnitLabel], covariates: &CovariateTable) -> Result<Vec<LabeledExample>> {
    let rows: HashMap<u64, &Vec<f64>> = covariates.unit_ids.iter().copied().zip(&covariates.rows).collect();
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        match rows.get(&l.unit_id) {
            Some(r) => {
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(
                        "covariates",
                        format!("unit {} has a non-finite feature", l.unit_id),
                    ));
                }
                out.push(LabeledExample {
                    unit_id: l.unit_id,
                    features: (*r).clone(),
                    label: l.label,
                })
            }
            None => missing.push(l.unit_id),
        }
    }
    if !missing.is_empty() {
        return Err(Error::IdMismatch { missing });
    }
    Ok(out)
}

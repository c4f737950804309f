//! Checking and calibrating observational scores against a randomized
//! experiment: outcome preprocessing, score-stratified effects, the
//! treatment x score interaction regression, a monotone score-to-effect map
//! and budget-constrained targeting.

mod isotonic;
mod regression;
mod strata;
mod targeting;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dgp::ExperimentDataset;
use crate::error::{Error, Result};

pub use isotonic::{fit_monotone_map, isotonic_regression, Interpolation, MonotoneMap};
pub use regression::{interaction_regression, RegressionFit, Term, TERM_NAMES};
pub use strata::{pooled_effect, stratified_effects, stratified_effects_with, StratumReport};
pub use targeting::{select_targets, Target};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub unit_id: u64,
    pub score: f64,
}

/// `log(1 + y_post) - log(1 + y_pre)`. The `+1` keeps zero outcomes finite.
pub fn preprocess_outcome(y_post: f64, y_pre: f64) -> Result<f64> {
    if !(y_post >= 0.0 && y_pre >= 0.0) {
        return Err(Error::validation(
            "outcome",
            format!("outcomes must be nonnegative, got y_post={y_post} y_pre={y_pre}"),
        ));
    }
    Ok(y_post.ln_1p() - y_pre.ln_1p())
}

/// Outcome used for stratum effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeForm {
    /// `log(1 + y_post) - log(1 + y_pre)`
    #[default]
    DeltaLog,
    /// `log(1 + y_post)` alone
    LogPost,
}

impl OutcomeForm {
    fn apply(self, y_post: f64, y_pre: f64) -> Result<f64> {
        match self {
            OutcomeForm::DeltaLog => preprocess_outcome(y_post, y_pre),
            OutcomeForm::LogPost => {
                preprocess_outcome(y_post, y_pre)?;
                Ok(y_post.ln_1p())
            }
        }
    }
}

/// Score of every experimental record, in record order.
fn scores_for(exp: &ExperimentDataset, scores: &[UnitScore]) -> Result<Vec<f64>> {
    let by_id: HashMap<u64, f64> = scores.iter().map(|s| (s.unit_id, s.score)).collect();
    let mut missing = Vec::new();
    let out: Vec<f64> = exp
        .records
        .iter()
        .map(|r| match by_id.get(&r.unit_id) {
            Some(&s) => s,
            None => {
                missing.push(r.unit_id);
                f64::NAN
            }
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::IdMismatch { missing });
    }
    if out.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("scores", "scores must be finite"));
    }
    Ok(out)
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{scores_for, OutcomeForm, UnitScore};
use crate::dgp::ExperimentDataset;
use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

/// Treated-minus-control effect within one score bin. `ate` and `stderr` are
/// absent when the bin lacks an arm (or, for `stderr`, has no residual
/// degrees of freedom).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    /// 1-based, ascending in score.
    pub stratum_index: usize,
    pub score_low: f64,
    pub score_high: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub ate: Option<f64>,
    pub stderr: Option<f64>,
}

impl StratumReport {
    pub fn missing_arm(&self) -> bool {
        self.n_treated == 0 || self.n_control == 0
    }

    pub fn score_mid(&self) -> f64 {
        0.5 * (self.score_low + self.score_high)
    }

    pub fn n(&self) -> usize {
        self.n_treated + self.n_control
    }
}

struct ArmStats {
    n: usize,
    mean: f64,
    ss: f64,
}

fn arm_stats(values: &[f64]) -> ArmStats {
    let n = values.len();
    if n == 0 {
        return ArmStats {
            n,
            mean: f64::NAN,
            ss: 0.0,
        };
    }
    let mean = values.iter().copied().collect::<CompensatedSum>().value() / n as f64;
    let ss = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .collect::<CompensatedSum>()
        .value();
    ArmStats { n, mean, ss }
}

/// Difference in means with the pooled two-sample standard error.
fn two_sample(treated: &[f64], control: &[f64]) -> (Option<f64>, Option<f64>) {
    let (t, c) = (arm_stats(treated), arm_stats(control));
    if t.n == 0 || c.n == 0 {
        return (None, None);
    }
    let ate = t.mean - c.mean;
    let dof = t.n + c.n - 2;
    if dof == 0 {
        return (Some(ate), None);
    }
    let pooled = (t.ss + c.ss) / dof as f64;
    let se = (pooled * (1.0 / t.n as f64 + 1.0 / c.n as f64)).sqrt();
    (Some(ate), Some(se))
}

/// Pooled effect over the whole experiment.
pub fn pooled_effect(exp: &ExperimentDataset, form: OutcomeForm) -> Result<(f64, f64)> {
    let mut t = Vec::new();
    let mut c = Vec::new();
    for r in &exp.records {
        let v = form.apply(r.y_post, r.y_pre)?;
        if r.treated {
            t.push(v);
        } else {
            c.push(v);
        }
    }
    match two_sample(&t, &c) {
        (Some(ate), Some(se)) => Ok((ate, se)),
        _ => Err(Error::validation(
            "experiment",
            "needs both arms and at least three units",
        )),
    }
}

pub fn stratified_effects(
    exp: &ExperimentDataset,
    scores: &[UnitScore],
    n_strata: usize,
) -> Result<Vec<StratumReport>> {
    stratified_effects_with(exp, scores, n_strata, OutcomeForm::DeltaLog)
}

/// Split units into `n_strata` score-quantile bins whose sizes differ by at
/// most one (ties ordered by unit id) and estimate the effect in each.
pub fn stratified_effects_with(
    exp: &ExperimentDataset,
    scores: &[UnitScore],
    n_strata: usize,
    form: OutcomeForm,
) -> Result<Vec<StratumReport>> {
    if n_strata < 2 {
        return Err(Error::validation("n_strata", "must be at least 2"));
    }
    let n = exp.records.len();
    if n_strata > n {
        return Err(Error::validation(
            "n_strata",
            format!("{n_strata} strata for {n} units"),
        ));
    }
    let unit_scores = scores_for(exp, scores)?;
    let outcomes: Vec<f64> = exp
        .records
        .iter()
        .map(|r| form.apply(r.y_post, r.y_pre))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        unit_scores[a]
            .total_cmp(&unit_scores[b])
            .then(exp.records[a].unit_id.cmp(&exp.records[b].unit_id))
    });
    let base = n / n_strata;
    let extra = n % n_strata;
    let mut bounds = Vec::with_capacity(n_strata);
    let mut start = 0;
    for k in 0..n_strata {
        let len = base + usize::from(k < extra);
        bounds.push((start, start + len));
        start += len;
    }
    Ok(bounds
        .par_iter()
        .enumerate()
        .map(|(k, &(lo, hi))| {
            let members = &order[lo..hi];
            let mut t = Vec::new();
            let mut c = Vec::new();
            for &i in members {
                if exp.records[i].treated {
                    t.push(outcomes[i]);
                } else {
                    c.push(outcomes[i]);
                }
            }
            let (ate, stderr) = two_sample(&t, &c);
            StratumReport {
                stratum_index: k + 1,
                score_low: unit_scores[members[0]],
                score_high: unit_scores[members[members.len() - 1]],
                n_treated: t.len(),
                n_control: c.len(),
                ate,
                stderr,
            }
        })
        .collect())
}

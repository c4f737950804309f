use serde::{Deserialize, Serialize};

use super::{scores_for, UnitScore};
use crate::dgp::ExperimentDataset;
use crate::error::{Error, Result};
use crate::linalg::Qr;
use crate::stats::{t_two_sided_p, CompensatedSum};

/// Regressors in design order. The outcome is `log(1 + y_post)`.
pub const TERM_NAMES: [&str; 5] = ["intercept", "treatment", "score", "treatment_x_score", "log_y_pre"];

const MIN_RECORDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub terms: Vec<Term>,
    pub n: usize,
    pub dof: usize,
    pub residual_sd: f64,
}

impl RegressionFit {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// The treatment x score coefficient.
    pub fn interaction(&self) -> &Term {
        &self.terms[3]
    }
}

/// OLS of `log(1 + y_post)` on treatment, score, their product and
/// `log(1 + y_pre)`, with classical standard errors.
pub fn interaction_regression(exp: &ExperimentDataset, scores: &[UnitScore]) -> Result<RegressionFit> {
    let fit = fit_design(exp, scores)?;
    Ok(fit.0)
}

fn fit_design(exp: &ExperimentDataset, scores: &[UnitScore]) -> Result<(RegressionFit, Vec<Vec<f64>>, Vec<f64>)> {
    let n = exp.records.len();
    if n < MIN_RECORDS {
        return Err(Error::InsufficientData {
            needed: MIN_RECORDS,
            got: n,
        });
    }
    let s = scores_for(exp, scores)?;
    let mut cols = vec![Vec::with_capacity(n); TERM_NAMES.len()];
    let mut y = Vec::with_capacity(n);
    for (r, &score) in exp.records.iter().zip(&s) {
        super::preprocess_outcome(r.y_post, r.y_pre)?;
        let d = f64::from(u8::from(r.treated));
        cols[0].push(1.0);
        cols[1].push(d);
        cols[2].push(score);
        cols[3].push(d * score);
        cols[4].push(r.y_pre.ln_1p());
        y.push(r.y_post.ln_1p());
    }
    let qr = Qr::factor(&cols).map_err(|dep| Error::Collinear {
        columns: dep.into_iter().map(|j| TERM_NAMES[j].to_string()).collect(),
    })?;
    let (coef, resid) = qr.solve(&y);
    let dof = n - TERM_NAMES.len();
    let ssr = resid.iter().map(|e| e * e).collect::<CompensatedSum>().value();
    let sigma2 = ssr / dof as f64;
    let terms = TERM_NAMES
        .iter()
        .zip(coef)
        .zip(qr.gram_inverse_diag())
        .map(|((name, estimate), g)| {
            let stderr = (sigma2 * g).sqrt();
            let t_stat = if stderr > 0.0 {
                estimate / stderr
            } else if estimate == 0.0 {
                0.0
            } else {
                estimate.signum() * f64::INFINITY
            };
            Term {
                name: (*name).to_string(),
                estimate,
                stderr,
                t_stat,
                p_value: t_two_sided_p(t_stat, dof as u64),
            }
        })
        .collect();
    let fit = RegressionFit {
        terms,
        n,
        dof,
        residual_sd: sigma2.sqrt(),
    };
    Ok((fit, cols, resid))
}

//! Per-unit time-series regressions.
//!
//! Each unit gets its own `y ~ 1 + x` fit. Unit fixed effects land in the
//! intercept, so only the slope is carried forward as the unit's
//! observationally estimated effect. When observed per-period covariates are
//! present, x and y are first replaced by their residuals on `(1, V)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{PanelDataset, UnitSeries};
use crate::error::{Error, Result};
use crate::linalg::Qr;
use crate::stats::CompensatedSum;

/// Relative sample-variance floor for the regressor.
pub const DEGENERATE_VARIANCE_TOL: f64 = 1e-12;

/// Default minimum number of observations per unit.
pub const DEFAULT_MIN_OBS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitEffectEstimate {
    pub unit_id: u64,
    pub beta_hat: f64,
    pub intercept: f64,
    pub stderr_beta: f64,
    pub n_obs: usize,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on an intercept and `x`.
pub fn fit_unit(unit_id: u64, x: &[f64], y: &[f64]) -> Result<UnitEffectEstimate> {
    fit_with_dof(unit_id, x, y, 0)
}

/// `absorbed` counts regressors already partialled out of x and y, which the
/// residual degrees of freedom must account for.
fn fit_with_dof(unit_id: u64, x: &[f64], y: &[f64], absorbed: usize) -> Result<UnitEffectEstimate> {
    if x.len() != y.len() {
        return Err(Error::validation("series", "x and y lengths differ"));
    }
    let n = x.len();
    let needed = 3 + absorbed;
    if n < needed {
        return Err(Error::InsufficientData { needed, got: n });
    }
    let nf = n as f64;
    let x_mean = x.iter().copied().collect::<CompensatedSum>().value() / nf;
    let y_mean = y.iter().copied().collect::<CompensatedSum>().value() / nf;

    let mut sxx = CompensatedSum::new();
    let mut sxy = CompensatedSum::new();
    let mut syy = CompensatedSum::new();
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - x_mean;
        let dy = yi - y_mean;
        sxx.add(dx * dx);
        sxy.add(dx * dy);
        syy.add(dy * dy);
    }
    let (sxx, sxy, syy) = (sxx.value(), sxy.value(), syy.value());
    let variance = sxx / nf;
    if !(variance > DEGENERATE_VARIANCE_TOL * (1.0 + x_mean * x_mean)) {
        return Err(Error::DegenerateRegressor { variance });
    }
    let beta_hat = sxy / sxx;
    let intercept = y_mean - beta_hat * x_mean;

    let mut ssr = CompensatedSum::new();
    for (&xi, &yi) in x.iter().zip(y) {
        let r = (yi - y_mean) - beta_hat * (xi - x_mean);
        ssr.add(r * r);
    }
    let ssr = ssr.value();
    let dof = (n - 2 - absorbed) as f64;
    let stderr_beta = (ssr / dof / sxx).sqrt();
    let r_squared = if syy > 0.0 {
        (1.0 - ssr / syy).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(UnitEffectEstimate {
        unit_id,
        beta_hat,
        intercept,
        stderr_beta,
        n_obs: n,
        r_squared,
    })
}

/// Residuals of x and y from separate least-squares fits on `(1, V)`, where
/// `v` is row-major with `v_dim` columns. With no V columns this demeans.
pub fn residualize(x: &[f64], y: &[f64], v: &[f64], v_dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    if y.len() != n || v.len() != n * v_dim {
        return Err(Error::validation("series", "x, y and V have inconsistent lengths"));
    }
    if v_dim == 0 {
        let demean = |s: &[f64]| {
            let m = s.iter().copied().collect::<CompensatedSum>().value() / n as f64;
            s.iter().map(|a| a - m).collect::<Vec<f64>>()
        };
        return Ok((demean(x), demean(y)));
    }
    if n < v_dim + 2 {
        return Err(Error::InsufficientData {
            needed: v_dim + 2,
            got: n,
        });
    }
    let mut columns = Vec::with_capacity(v_dim + 1);
    columns.push(vec![1.0; n]);
    for j in 0..v_dim {
        columns.push(v.iter().skip(j).step_by(v_dim).copied().collect());
    }
    let qr = Qr::factor(&columns).map_err(|dep| Error::Collinear {
        columns: dep
            .into_iter()
            .map(|j| {
                if j == 0 {
                    "intercept".to_string()
                } else {
                    format!("v{j}")
                }
            })
            .collect(),
    })?;
    let (_, x_resid) = qr.solve(x);
    let (_, y_resid) = qr.solve(y);
    Ok((x_resid, y_resid))
}

/// Why a unit was left out of [`fit_all`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    InsufficientData { n_obs: usize, min_obs: usize },
    DegenerateRegressor { variance: f64 },
    Collinear { columns: Vec<String> },
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::InsufficientData { n_obs, min_obs } => {
                write!(f, "insufficient_data: {n_obs} observations, need {min_obs}")
            }
            SkipReason::DegenerateRegressor { variance } => {
                write!(f, "degenerate_regressor: var(x) = {variance:e}")
            }
            SkipReason::Collinear { columns } => write!(f, "collinear: {}", columns.join(" ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub unit_id: u64,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelFit {
    pub estimates: Vec<UnitEffectEstimate>,
    pub skips: Vec<Skip>,
}

fn fit_series(
    series: &UnitSeries,
    v_dim: usize,
    min_obs: usize,
) -> std::result::Result<UnitEffectEstimate, SkipReason> {
    let required = min_obs.max(3 + v_dim);
    if series.len() < required {
        return Err(SkipReason::InsufficientData {
            n_obs: series.len(),
            min_obs: required,
        });
    }
    let to_skip = |e: Error| match e {
        Error::DegenerateRegressor { variance } => SkipReason::DegenerateRegressor { variance },
        Error::Collinear { columns } => SkipReason::Collinear { columns },
        Error::InsufficientData { needed, got } => SkipReason::InsufficientData {
            n_obs: got,
            min_obs: needed,
        },
        other => unreachable!("unexpected per-unit fit error: {other}"),
    };
    if v_dim == 0 {
        return fit_unit(series.unit_id, &series.x, &series.y).map_err(to_skip);
    }
    let (xr, yr) = residualize(&series.x, &series.y, &series.v, v_dim).map_err(to_skip)?;
    fit_with_dof(series.unit_id, &xr, &yr, v_dim).map_err(to_skip)
}

/// Fit every unit independently; output order follows input order.
pub fn fit_all(dataset: &PanelDataset, min_obs: usize) -> Result<PanelFit> {
    if dataset.units.is_empty() {
        return Err(Error::validation("panel", "dataset has no units"));
    }
    dataset.validate()?;
    let results: Vec<_> = dataset
        .units
        .par_iter()
        .map(|s| (s.unit_id, fit_series(s, dataset.v_dim, min_obs)))
        .collect();
    let mut out = PanelFit::default();
    for (unit_id, r) in results {
        match r {
            Ok(est) => out.estimates.push(est),
            Err(reason) => out.skips.push(Skip { unit_id, reason }),
        }
    }
    Ok(out)
}

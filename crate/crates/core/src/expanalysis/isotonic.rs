use serde::{Deserialize, Serialize};

use super::StratumReport;
use crate::error::{Error, Result};

/// Weighted least-squares nondecreasing fit (pool adjacent violators).
/// Weights must be positive and finite.
pub fn isotonic_regression(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (v, w, 1);
        while let Some(&(m, bw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = bw + cur.1;
            cur = ((m * bw + cur.0 * cur.1) / tw, tw, len + cur.2);
        }
        blocks.push(cur);
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, len)| std::iter::repeat_n(m, len))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Value of the nearest breakpoint at or below the score.
    #[default]
    Step,
    Linear,
}

/// Nondecreasing map from score to effect, defined on stratum midpoints and
/// held constant beyond the outermost breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneMap {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub interpolation: Interpolation,
}

impl MonotoneMap {
    pub fn eval(&self, score: f64) -> f64 {
        let b = &self.breakpoints;
        let upper = b.partition_point(|&x| x <= score);
        if upper == 0 {
            return self.values[0];
        }
        if upper == b.len() {
            return self.values[b.len() - 1];
        }
        let i = upper - 1;
        match self.interpolation {
            Interpolation::Step => self.values[i],
            Interpolation::Linear => {
                let f = (score - b[i]) / (b[i + 1] - b[i]);
                self.values[i] + f * (self.values[i + 1] - self.values[i])
            }
        }
    }
}

/// Relative weight given to a stratum whose standard error is zero when the
/// others' are not, so the fit passes through it.
const ZERO_SE_WEIGHT_FACTOR: f64 = 1e6;

/// Isotonic fit of stratum effects on stratum score midpoints, weighted by
/// inverse variance. Strata missing an arm or a standard error are skipped.
pub fn fit_monotone_map(strata: &[StratumReport], interpolation: Interpolation) -> Result<MonotoneMap> {
    let mut usable: Vec<(f64, f64, f64)> = strata
        .iter()
        .filter_map(|s| Some((s.score_mid(), s.ate?, s.stderr?)))
        .filter(|(x, y, se)| x.is_finite() && y.is_finite() && se.is_finite())
        .collect();
    usable.sort_by(|a, b| a.0.total_cmp(&b.0));

    let max_w = usable
        .iter()
        .filter(|u| u.2 > 0.0)
        .map(|u| 1.0 / (u.2 * u.2))
        .fold(0.0, f64::max);
    let weight = |se: f64| {
        if se > 0.0 {
            1.0 / (se * se)
        } else if max_w > 0.0 {
            ZERO_SE_WEIGHT_FACTOR * max_w
        } else {
            1.0
        }
    };

    // merge strata sharing a midpoint so breakpoints are strictly increasing
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for (x, y, se) in usable {
        let w = weight(se);
        if xs.last() == Some(&x) {
            let k = xs.len() - 1;
            ys[k] = (ys[k] * ws[k] + y * w) / (ws[k] + w);
            ws[k] += w;
        } else {
            xs.push(x);
            ys.push(y);
            ws.push(w);
        }
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientStrata { usable: xs.len() });
    }
    Ok(MonotoneMap {
        values: isotonic_regression(&ys, &ws),
        breakpoints: xs,
        interpolation,
    })
}

//! Synthetic observational panels and randomized experiments.
//!
//! Units draw a latent affinity `a`; link functions map it to the structural
//! parameters
//!
//! ```text
//! x[i,t] = theta_i + eps[i,t] + U[t] * psi_i
//! y[i,t] = mu_i + x[i,t] * beta_i + U[t] * gamma_i + eta[i,t]
//! ```
//!
//! where `U` is an unobserved shock (shared by all units within a period by
//! default). Ground truth is kept so estimators can be checked against it.
//!
//! Randomness is keyed by `(seed, stream, unit_id)` or `(seed, stream, period)`
//! so output does not depend on how work is scheduled across threads.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};
use crate::stats;

/// A monotone scalar function of affinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkFn {
    Affine {
        intercept: f64,
        slope: f64,
    },
    /// Linear interpolation between `(a, value)` knots, flat outside them.
    PiecewiseLinear {
        knots: Vec<[f64; 2]>,
    },
}

impl LinkFn {
    pub fn constant(value: f64) -> Self {
        LinkFn::Affine {
            intercept: value,
            slope: 0.0,
        }
    }

    pub fn affine(intercept: f64, slope: f64) -> Self {
        LinkFn::Affine { intercept, slope }
    }

    pub fn identity() -> Self {
        Self::affine(0.0, 1.0)
    }

    pub fn eval(&self, a: f64) -> f64 {
        match self {
            LinkFn::Affine { intercept, slope } => intercept + slope * a,
            LinkFn::PiecewiseLinear { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if a <= first[0] {
                    return first[1];
                }
                if a >= last[0] {
                    return last[1];
                }
                let hi = knots.partition_point(|k| k[0] <= a);
                let [a0, v0] = knots[hi - 1];
                let [a1, v1] = knots[hi];
                v0 + (v1 - v0) * (a - a0) / (a1 - a0)
            }
        }
    }

    /// True when the function is strictly increasing everywhere on `[lo, hi]`.
    pub fn strictly_increasing_on(&self, lo: f64, hi: f64) -> bool {
        match self {
            LinkFn::Affine { slope, .. } => *slope > 0.0,
            LinkFn::PiecewiseLinear { knots } => {
                knots.first().is_some_and(|k| k[0] <= lo)
                    && knots.last().is_some_and(|k| k[0] >= hi)
                    && knots.windows(2).all(|w| w[1][1] > w[0][1])
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match self {
            LinkFn::Affine { intercept, slope } => {
                if !intercept.is_finite() || !slope.is_finite() {
                    return Err(Error::validation(name, "affine coefficients must be finite"));
                }
            }
            LinkFn::PiecewiseLinear { knots } => {
                if knots.is_empty() {
                    return Err(Error::validation(name, "piecewise-linear link needs at least one knot"));
                }
                if knots.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::validation(name, "knots must be finite"));
                }
                if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::validation(name, "knot positions must be strictly ascending"));
                }
                let up = knots.windows(2).all(|w| w[1][1] >= w[0][1]);
                let down = knots.windows(2).all(|w| w[1][1] <= w[0][1]);
                if !up && !down {
                    return Err(Error::validation(name, "knot values must be monotone"));
                }
            }
        }
        Ok(())
    }
}

/// Maps from affinity to each structural parameter. Defaults are the
/// sufficient-condition regime's links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkFunctions {
    /// `D(a)`, the baseline level of x (theta).
    pub baseline_supply: LinkFn,
    /// `mu(a)`, the baseline level of y.
    pub baseline_demand: LinkFn,
    /// `beta(a)`, the causal effect of x on y.
    pub effect: LinkFn,
    /// `psi(a)`, loading of the unobserved shock on x.
    pub supply_load: LinkFn,
    /// `gamma(a)`, loading of the unobserved shock on y.
    pub demand_load: LinkFn,
}

impl Default for LinkFunctions {
    fn default() -> Self {
        LinkFunctions {
            baseline_supply: LinkFn::affine(3.0, 1.0),
            baseline_demand: LinkFn::affine(4.0, 2.0),
            effect: LinkFn::affine(0.2, 1.0),
            supply_load: LinkFn::affine(0.5, 0.5),
            demand_load: LinkFn::affine(0.5, 2.0),
        }
    }
}

impl LinkFunctions {
    fn validate(&self) -> Result<()> {
        self.baseline_supply.validate("links.baseline_supply")?;
        self.baseline_demand.validate("links.baseline_demand")?;
        self.effect.validate("links.effect")?;
        self.supply_load.validate("links.supply_load")?;
        self.demand_load.validate("links.demand_load")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AffinityDist {
    Uniform {
        low: f64,
        high: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Unit `i` gets `values[i % values.len()]`.
    Grid {
        values: Vec<f64>,
    },
}

impl Default for AffinityDist {
    fn default() -> Self {
        AffinityDist::Uniform { low: 0.0, high: 1.0 }
    }
}

impl AffinityDist {
    fn validate(&self) -> Result<()> {
        match self {
            AffinityDist::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::validation("affinity", "uniform bounds must satisfy low < high"));
                }
            }
            AffinityDist::Normal { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) {
                    return Err(Error::validation("affinity", "normal sd must be positive"));
                }
            }
            AffinityDist::Grid { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation("affinity", "grid must be nonempty and finite"));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, index: usize, rng: &mut StreamRng) -> f64 {
        match self {
            AffinityDist::Uniform { low, high } => rng.random_range(*low..*high),
            AffinityDist::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            AffinityDist::Grid { values } => values[index % values.len()],
        }
    }
}

/// Learner-facing covariates: noisy transforms of affinity plus distractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateSpec {
    /// How many of the transforms `a`, `a^2`, `tanh(2a)` to emit (1..=3).
    pub signal_columns: usize,
    /// Sd of the Gaussian noise added to every signal column.
    pub noise_sd: f64,
    /// Number of pure-noise N(0, 1) columns appended after the signal.
    pub distractors: usize,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        CovariateSpec {
            signal_columns: 3,
            noise_sd: 0.3,
            distractors: 5,
        }
    }
}

impl CovariateSpec {
    pub fn dim(&self) -> usize {
        self.signal_columns + self.distractors
    }
}

/// Observed per-period covariates `V` entering both x and y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ObservedSpec {
    pub dim: usize,
    /// Coefficient of each V column in the x equation.
    pub load_x: f64,
    /// Coefficient of each V column in the y equation.
    pub load_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShockMode {
    /// One draw of U per period, common to every unit.
    #[default]
    Shared,
    /// Independent U per unit and period.
    PerUnit,
}

/// Full description of a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub n_units: usize,
    pub t_periods: usize,
    pub var_eps: f64,
    pub var_eta: f64,
    pub var_u: f64,
    pub affinity: AffinityDist,
    pub links: LinkFunctions,
    pub covariates: CovariateSpec,
    pub observed: ObservedSpec,
    pub shock_mode: ShockMode,
    /// Periods averaged into each of `y_pre` and `y_post`.
    pub experiment_window: usize,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec::sufficient_regime(1000, 60, 0)
    }
}

impl DgpSpec {
    /// Effects, shock loadings and bias all increase with affinity, with the
    /// demand loading growing faster than the supply loading.
    pub fn sufficient_regime(n_units: usize, t_periods: usize, seed: u64) -> Self {
        DgpSpec {
            n_units,
            t_periods,
            var_eps: 1.0,
            var_eta: 1.0,
            var_u: 1.0,
            affinity: AffinityDist::default(),
            links: LinkFunctions::default(),
            covariates: CovariateSpec::default(),
            observed: ObservedSpec::default(),
            shock_mode: ShockMode::Shared,
            experiment_window: 7,
            seed,
        }
    }

    /// Bias falls with the effect at slope -2.5, so the observational
    /// ordering of effects is reversed.
    pub fn violating_regime(n_units: usize, t_periods: usize, seed: u64) -> Self {
        let mut spec = Self::sufficient_regime(n_units, t_periods, seed);
        spec.links = LinkFunctions {
            baseline_supply: LinkFn::constant(3.0),
            baseline_demand: LinkFn::constant(5.0),
            effect: LinkFn::identity(),
            supply_load: LinkFn::constant(1.0),
            demand_load: LinkFn::affine(3.0, -5.0),
        };
        spec
    }

    /// Homogeneous effect and outcome level; only the confounding channel
    /// varies with affinity. Shocks are per unit so no realized common shock
    /// induces effect heterogeneity on the log scale.
    pub fn constant_effect_regime(n_units: usize, t_periods: usize, seed: u64) -> Self {
        let mut spec = Self::sufficient_regime(n_units, t_periods, seed);
        spec.links.baseline_supply = LinkFn::constant(3.0);
        spec.links.baseline_demand = LinkFn::constant(5.0);
        spec.links.effect = LinkFn::constant(0.5);
        spec.shock_mode = ShockMode::PerUnit;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units < 1 {
            return Err(Error::validation("n_units", "must be at least 1"));
        }
        if self.t_periods < 3 {
            return Err(Error::validation("t_periods", "must be at least 3"));
        }
        for (name, v) in [
            ("var_eps", self.var_eps),
            ("var_eta", self.var_eta),
            ("var_u", self.var_u),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(
                    name,
                    format!("variance must be finite and >= 0, got {v}"),
                ));
            }
        }
        self.affinity.validate()?;
        self.links.validate()?;
        let c = &self.covariates;
        if !(1..=3).contains(&c.signal_columns) {
            return Err(Error::validation("covariates.signal_columns", "must be 1, 2 or 3"));
        }
        if !(c.noise_sd.is_finite() && c.noise_sd >= 0.0) {
            return Err(Error::validation("covariates.noise_sd", "must be finite and >= 0"));
        }
        if !(self.observed.load_x.is_finite() && self.observed.load_y.is_finite()) {
            return Err(Error::validation("observed", "loads must be finite"));
        }
        if self.experiment_window < 1 {
            return Err(Error::validation("experiment_window", "must be at least 1"));
        }
        Ok(())
    }
}

/// Ground-truth structural parameters of one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitParams {
    pub unit_id: u64,
    pub affinity: f64,
    pub theta: f64,
    pub mu: f64,
    pub beta: f64,
    pub psi: f64,
    pub gamma: f64,
}

/// Time series of one unit. `v` is row-major, `t.len() x v_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSeries {
    pub unit_id: u64,
    pub t: Vec<u32>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
}

impl UnitSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Column `j` of V.
    pub fn v_column(&self, j: usize, v_dim: usize) -> Vec<f64> {
        self.v.iter().skip(j).step_by(v_dim).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub v_dim: usize,
    pub units: Vec<UnitSeries>,
}

impl PanelDataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.units.len());
        for u in &self.units {
            if !seen.insert(u.unit_id) {
                return Err(Error::validation("panel", format!("duplicate unit_id {}", u.unit_id)));
            }
            if u.x.len() != u.t.len() || u.y.len() != u.t.len() || u.v.len() != u.t.len() * self.v_dim {
                return Err(Error::validation(
                    "panel",
                    format!("unit {} has ragged columns", u.unit_id),
                ));
            }
            if u.t.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::validation(
                    "panel",
                    format!("unit {} periods are not strictly increasing", u.unit_id),
                ));
            }
        }
        Ok(())
    }
}

/// Learner features, one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub dim: usize,
    pub unit_ids: Vec<u64>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub unit_id: u64,
    pub treated: bool,
    pub y_pre: f64,
    pub y_post: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDataset {
    pub records: Vec<ExperimentRecord>,
}

impl ExperimentDataset {
    pub fn new(records: Vec<ExperimentRecord>) -> Result<Self> {
        let ds = ExperimentDataset { records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let treated = self.records.iter().filter(|r| r.treated).count();
        if treated == 0 || treated == self.records.len() {
            return Err(Error::validation(
                "experiment",
                "needs at least one treated and one control unit",
            ));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.unit_id) {
                return Err(Error::validation(
                    "experiment",
                    format!("duplicate unit_id {}", r.unit_id),
                ));
            }
            if !(r.y_pre >= 0.0 && r.y_post >= 0.0) {
                return Err(Error::validation(
                    "experiment",
                    format!("unit {} has a negative or missing outcome", r.unit_id),
                ));
            }
        }
        Ok(())
    }

    pub fn n_treated(&self) -> usize {
        self.records.iter().filter(|r| r.treated).count()
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Draw affinities and apply the link functions.
pub fn sample_units(spec: &DgpSpec) -> Result<Vec<UnitParams>> {
    spec.validate()?;
    let links = &spec.links;
    Ok((0..spec.n_units)
        .map(|i| {
            let mut rng = substream(spec.seed, "affinity", i as u64);
            let a = spec.affinity.draw(i, &mut rng);
            UnitParams {
                unit_id: i as u64,
                affinity: a,
                theta: links.baseline_supply.eval(a),
                mu: links.baseline_demand.eval(a),
                beta: links.effect.eval(a),
                psi: links.supply_load.eval(a),
                gamma: links.demand_load.eval(a),
            }
        })
        .collect())
}

fn shared_shocks(spec: &DgpSpec, stream: &str, periods: usize) -> Option<Vec<f64>> {
    match spec.shock_mode {
        ShockMode::Shared => {
            let sd = spec.var_u.sqrt();
            Some(
                (0..periods)
                    .map(|t| sd * normal(&mut substream(spec.seed, stream, t as u64)))
                    .collect(),
            )
        }
        ShockMode::PerUnit => None,
    }
}

/// One period for one unit: x, and y without the causal `x * beta` term.
struct PeriodDraw {
    x: f64,
    y_rest: f64,
}

struct NoiseScales {
    eps: f64,
    eta: f64,
    u: f64,
}

impl NoiseScales {
    fn of(spec: &DgpSpec) -> Self {
        NoiseScales {
            eps: spec.var_eps.sqrt(),
            eta: spec.var_eta.sqrt(),
            u: spec.var_u.sqrt(),
        }
    }
}

fn draw_period(
    unit: &UnitParams,
    spec: &DgpSpec,
    scales: &NoiseScales,
    shared_u: Option<f64>,
    rng: &mut StreamRng,
    v_out: &mut Vec<f64>,
) -> PeriodDraw {
    let eps = scales.eps * normal(rng);
    let u = match shared_u {
        Some(u) => u,
        None => scales.u * normal(rng),
    };
    let eta = scales.eta * normal(rng);
    let mut v_sum = 0.0;
    for _ in 0..spec.observed.dim {
        let v = normal(rng);
        v_sum += v;
        v_out.push(v);
    }
    PeriodDraw {
        x: unit.theta + eps + u * unit.psi + spec.observed.load_x * v_sum,
        y_rest: unit.mu + u * unit.gamma + eta + spec.observed.load_y * v_sum,
    }
}

/// Observational panel for `units` over `spec.t_periods` periods.
pub fn simulate_panel(units: &[UnitParams], spec: &DgpSpec) -> Result<PanelDataset> {
    spec.validate()?;
    if units.is_empty() {
        return Err(Error::validation("units", "must be nonempty"));
    }
    let periods = spec.t_periods;
    let shocks = shared_shocks(spec, "panel_shock", periods);
    let scales = NoiseScales::of(spec);
    let series = units
        .par_iter()
        .map(|unit| {
            let mut rng = substream(spec.seed, "panel", unit.unit_id);
            let mut s = UnitSeries {
                unit_id: unit.unit_id,
                t: Vec::with_capacity(periods),
                x: Vec::with_capacity(periods),
                y: Vec::with_capacity(periods),
                v: Vec::with_capacity(periods * spec.observed.dim),
            };
            for t in 0..periods {
                let u = shocks.as_ref().map(|s| s[t]);
                let d = draw_period(unit, spec, &scales, u, &mut rng, &mut s.v);
                s.t.push(t as u32);
                s.x.push(d.x);
                s.y.push(d.y_rest + d.x * unit.beta);
            }
            s
        })
        .collect();
    Ok(PanelDataset {
        v_dim: spec.observed.dim,
        units: series,
    })
}

/// Noisy transforms of each unit's affinity followed by distractor columns.
pub fn simulate_covariates(units: &[UnitParams], spec: &DgpSpec) -> Result<CovariateTable> {
    spec.validate()?;
    let c = &spec.covariates;
    let rows = units
        .par_iter()
        .map(|unit| {
            let mut rng = substream(spec.seed, "covariates", unit.unit_id);
            let a = unit.affinity;
            let signal = [a, a * a, (2.0 * a).tanh()];
            let mut row = Vec::with_capacity(c.dim());
            for s in signal.iter().take(c.signal_columns) {
                row.push(s + c.noise_sd * normal(&mut rng));
            }
            for _ in 0..c.distractors {
                row.push(normal(&mut rng));
            }
            row
        })
        .collect();
    Ok(CovariateTable {
        dim: c.dim(),
        unit_ids: units.iter().map(|u| u.unit_id).collect(),
        rows,
    })
}

/// Experiment-window outcomes for one unit under both arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialOutcomes {
    pub y_pre: f64,
    pub y_post_control: f64,
    pub y_post_treated: f64,
}

fn potential_outcomes_with(
    unit: &UnitParams,
    spec: &DgpSpec,
    scales: &NoiseScales,
    shocks: Option<&[f64]>,
) -> PotentialOutcomes {
    let w = spec.experiment_window;
    let mut rng = substream(spec.seed, "experiment", unit.unit_id);
    let mut scratch = Vec::with_capacity(spec.observed.dim);
    let mut pre = stats::CompensatedSum::new();
    let mut post = stats::CompensatedSum::new();
    for t in 0..2 * w {
        scratch.clear();
        let u = shocks.map(|s| s[t]);
        let d = draw_period(unit, spec, scales, u, &mut rng, &mut scratch);
        let y = d.y_rest + d.x * unit.beta;
        if t < w {
            pre.add(y);
        } else {
            post.add(y);
        }
    }
    let y_pre = pre.value() / w as f64;
    let y_post = post.value() / w as f64;
    // outcomes are nonnegative quantities (time spent); floor at zero
    PotentialOutcomes {
        y_pre: y_pre.max(0.0),
        y_post_control: y_post.max(0.0),
        y_post_treated: (y_post + unit.beta).max(0.0),
    }
}

/// Outcomes a unit would show in the experiment under control and treatment.
/// Treatment raises x by exactly one in every post period, so the two post
/// outcomes differ by `beta` whenever neither is floored at zero.
pub fn potential_outcomes(unit: &UnitParams, spec: &DgpSpec) -> PotentialOutcomes {
    let shocks = shared_shocks(spec, "experiment_shock", 2 * spec.experiment_window);
    potential_outcomes_with(unit, spec, &NoiseScales::of(spec), shocks.as_deref())
}

/// Bernoulli(`treated_fraction`) assignment with outcomes from the structural
/// equations over a pre window and a post window.
pub fn simulate_experiment(units: &[UnitParams], spec: &DgpSpec, treated_fraction: f64) -> Result<ExperimentDataset> {
    spec.validate()?;
    if !(treated_fraction > 0.0 && treated_fraction < 1.0) {
        return Err(Error::validation(
            "treated_fraction",
            "must lie strictly between 0 and 1",
        ));
    }
    if units.is_empty() {
        return Err(Error::validation("units", "must be nonempty"));
    }
    let shocks = shared_shocks(spec, "experiment_shock", 2 * spec.experiment_window);
    let scales = NoiseScales::of(spec);
    let records: Vec<ExperimentRecord> = units
        .par_iter()
        .map(|unit| {
            let treated = substream(spec.seed, "assign", unit.unit_id).random::<f64>() < treated_fraction;
            let po = potential_outcomes_with(unit, spec, &scales, shocks.as_deref());
            ExperimentRecord {
                unit_id: unit.unit_id,
                treated,
                y_pre: po.y_pre,
                y_post: if treated { po.y_post_treated } else { po.y_post_control },
            }
        })
        .collect();
    let treated = records.iter().filter(|r| r.treated).count();
    if treated == 0 || treated == records.len() {
        return Err(Error::DegenerateAssignment {
            treated,
            n: records.len(),
        });
    }
    ExperimentDataset::new(records)
}

/// Population omitted-variable bias of the unit-level OLS slope,
/// `gamma * psi * var_u / (psi^2 * var_u + var_eps)`.
pub fn theoretical_bias(unit: &UnitParams, spec: &DgpSpec) -> Result<f64> {
    let var_x = unit.psi * unit.psi * spec.var_u + spec.var_eps;
    if !(var_x > 0.0) {
        return Err(Error::DegenerateVariance { variance: var_x });
    }
    Ok(unit.gamma * unit.psi * spec.var_u / var_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn constant_spec() -> DgpSpec {
        let mut spec = DgpSpec::sufficient_regime(20, 10, 3);
        spec.links = LinkFunctions {
            baseline_supply: LinkFn::constant(2.0),
            baseline_demand: LinkFn::constant(1.0),
            effect: LinkFn::constant(1.0),
            supply_load: LinkFn::constant(0.0),
            demand_load: LinkFn::constant(0.0),
        };
        spec
    }

    fn noiseless(mut spec: DgpSpec) -> DgpSpec {
        spec.var_eps = 0.0;
        spec.var_eta = 0.0;
        spec.var_u = 0.0;
        spec
    }

    #[test]
    fn constant_links_give_constant_units() {
        let units = sample_units(&constant_spec()).unwrap();
        assert_eq!(units.len(), 20);
        assert!(units.iter().all(|u| u.beta == 1.0 && u.psi == 0.0 && u.gamma == 0.0));
    }

    #[test]
    fn identity_link_on_grid() {
        let mut spec = constant_spec();
        spec.n_units = 2;
        spec.affinity = AffinityDist::Grid { values: vec![0.1, 0.9] };
        spec.links.effect = LinkFn::identity();
        let betas: Vec<f64> = sample_units(&spec).unwrap().iter().map(|u| u.beta).collect();
        assert_eq!(betas, vec![0.1, 0.9]);
    }

    #[test]
    fn sufficient_preset_orders_beta_by_affinity() {
        let spec = DgpSpec::sufficient_regime(1000, 60, 11);
        let units = sample_units(&spec).unwrap();
        // pairwise check that affinity and beta agree on every pair
        let mut discordant = 0usize;
        for i in 0..units.len() {
            for j in i + 1..units.len() {
                let da = units[i].affinity - units[j].affinity;
                let db = units[i].beta - units[j].beta;
                if da * db <= 0.0 {
                    discordant += 1;
                }
            }
        }
        assert_eq!(discordant, 0);
        let l = &spec.links;
        assert!(l.effect.strictly_increasing_on(0.0, 1.0));
        assert!(l.supply_load.strictly_increasing_on(0.0, 1.0));
        assert!(l.demand_load.strictly_increasing_on(0.0, 1.0));
    }

    #[test]
    fn invalid_spec_names_field() {
        let mut spec = DgpSpec {
            var_eta: -1.0,
            ..DgpSpec::default()
        };
        match sample_units(&spec) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "var_eta"),
            other => panic!("unexpected {other:?}"),
        }
        spec.var_eta = 1.0;
        spec.t_periods = 2;
        assert!(matches!(sample_units(&spec), Err(Error::Validation { field, .. }) if field == "t_periods"));
    }

    #[test]
    fn piecewise_links_interpolate_and_clamp() {
        let f = LinkFn::PiecewiseLinear {
            knots: vec![[0.0, 1.0], [0.5, 2.0], [1.0, 4.0]],
        };
        assert_eq!(f.eval(-1.0), 1.0);
        assert_eq!(f.eval(0.25), 1.5);
        assert_eq!(f.eval(0.75), 3.0);
        assert_eq!(f.eval(2.0), 4.0);
        assert!(f.strictly_increasing_on(0.0, 1.0));
        let bad = LinkFn::PiecewiseLinear {
            knots: vec![[0.0, 1.0], [0.5, 2.0], [1.0, 0.0]],
        };
        assert!(bad.validate("f").is_err());
    }

    #[test]
    fn noiseless_panel_is_exact() {
        let spec = noiseless(constant_spec());
        let mut units = sample_units(&spec).unwrap();
        for u in &mut units {
            u.beta = 3.0;
        }
        let panel = simulate_panel(&units, &spec).unwrap();
        for s in &panel.units {
            assert!(s.x.iter().all(|&x| x == 2.0));
            assert!(s.y.iter().all(|&y| y == 7.0));
        }
    }

    #[test]
    fn shared_shock_is_common_within_period() {
        let mut spec = constant_spec();
        spec.var_eps = 0.0;
        spec.var_eta = 0.0;
        spec.links.supply_load = LinkFn::constant(1.0);
        let units = sample_units(&spec).unwrap();
        let panel = simulate_panel(&units, &spec).unwrap();
        // x = theta + U[t] with every unit sharing theta
        for t in 0..spec.t_periods {
            let first = panel.units[0].x[t];
            assert!(panel.units.iter().all(|s| s.x[t] == first));
        }
        spec.shock_mode = ShockMode::PerUnit;
        let panel = simulate_panel(&units, &spec).unwrap();
        assert_ne!(panel.units[0].x[0], panel.units[1].x[0]);
    }

    #[test]
    fn uncorrelated_when_no_effect_and_no_confounding() {
        let mut spec = constant_spec();
        spec.n_units = 1;
        spec.t_periods = 100_000;
        spec.links.effect = LinkFn::constant(0.0);
        spec.links.supply_load = LinkFn::constant(1.0);
        let units = sample_units(&spec).unwrap();
        let s = &simulate_panel(&units, &spec).unwrap().units[0];
        let n = s.x.len() as f64;
        let mx = stats::mean(&s.x);
        let my = stats::mean(&s.y);
        let prods: Vec<f64> = s.x.iter().zip(&s.y).map(|(x, y)| (x - mx) * (y - my)).collect();
        let cov = stats::mean(&prods);
        let se = (stats::sample_variance(&prods) / n).sqrt();
        assert!(cov.abs() <= 3.0 * se, "cov {cov} se {se}");
    }

    #[test]
    fn slope_includes_omitted_variable_bias() {
        let mut spec = constant_spec();
        spec.n_units = 1;
        spec.t_periods = 100_000;
        spec.var_u = 1.0;
        spec.var_eps = 1.0;
        spec.links.supply_load = LinkFn::constant(1.0);
        spec.links.demand_load = LinkFn::constant(1.0);
        let units = sample_units(&spec).unwrap();
        assert_abs_diff_eq!(theoretical_bias(&units[0], &spec).unwrap(), 0.5);
        let s = &simulate_panel(&units, &spec).unwrap().units[0];
        let fit = crate::panel::fit_unit(0, &s.x, &s.y).unwrap();
        assert!((fit.beta_hat - 1.5).abs() <= 3.0 * fit.stderr_beta + 0.01, "{fit:?}");
    }

    #[test]
    fn bias_vanishes_without_a_confounding_channel() {
        let spec = DgpSpec::default();
        let mut u = sample_units(&spec).unwrap()[0];
        u.gamma = 0.0;
        assert_eq!(theoretical_bias(&u, &spec).unwrap(), 0.0);
        u.gamma = 2.0;
        u.psi = 0.0;
        assert_eq!(theoretical_bias(&u, &spec).unwrap(), 0.0);
        let mut degenerate = spec.clone();
        degenerate.var_eps = 0.0;
        assert!(matches!(
            theoretical_bias(&u, &degenerate),
            Err(Error::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn noiseless_treatment_effect_is_beta() {
        let spec = noiseless(constant_spec());
        let mut unit = sample_units(&spec).unwrap()[0];
        unit.beta = 3.0;
        let po = potential_outcomes(&unit, &spec);
        assert_eq!(po.y_post_treated - po.y_post_control, 3.0);
        assert_eq!(po.y_pre, po.y_post_control);
    }

    #[test]
    fn difference_in_means_recovers_average_effect() {
        let mut spec = DgpSpec::sufficient_regime(100_000, 60, 5);
        spec.var_eta = 1.0;
        let units = sample_units(&spec).unwrap();
        let exp = simulate_experiment(&units, &spec, 0.5).unwrap();
        let (t, c): (Vec<&ExperimentRecord>, Vec<&ExperimentRecord>) = exp.records.iter().partition(|r| r.treated);
        let t: Vec<f64> = t.iter().map(|r| r.y_post).collect();
        let c: Vec<f64> = c.iter().map(|r| r.y_post).collect();
        let ate = stats::mean(&t) - stats::mean(&c);
        let se = (stats::sample_variance(&t) / t.len() as f64 + stats::sample_variance(&c) / c.len() as f64).sqrt();
        let truth = stats::mean(&units.iter().map(|u| u.beta).collect::<Vec<_>>());
        assert!((ate - truth).abs() <= 3.0 * se, "ate {ate} truth {truth} se {se}");
    }

    #[test]
    fn small_treated_fraction_is_accepted() {
        let fraction = 0.05;
        let spec = DgpSpec::sufficient_regime(2000, 60, 1);
        let units = sample_units(&spec).unwrap();
        let exp = simulate_experiment(&units, &spec, fraction).unwrap();
        let share = exp.n_treated() as f64 / exp.records.len() as f64;
        assert!((share - 0.05).abs() < 0.02);
    }

    #[test]
    fn degenerate_assignment_is_reported() {
        let spec = DgpSpec::sufficient_regime(1, 60, 1);
        let units = sample_units(&spec).unwrap();
        assert!(matches!(
            simulate_experiment(&units, &spec, 0.5),
            Err(Error::DegenerateAssignment { n: 1, .. })
        ));
        assert!(simulate_experiment(&units, &spec, 1.0).is_err());
    }

    #[test]
    fn generation_is_deterministic_across_thread_counts() {
        let spec = DgpSpec::sufficient_regime(300, 60, 9);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let units = sample_units(&spec).unwrap();
                    (
                        simulate_panel(&units, &spec).unwrap(),
                        simulate_experiment(&units, &spec, 0.3).unwrap(),
                        simulate_covariates(&units, &spec).unwrap(),
                    )
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn observed_covariates_are_emitted() {
        let mut spec = DgpSpec::sufficient_regime(3, 10, 2);
        spec.observed = ObservedSpec {
            dim: 2,
            load_x: 1.0,
            load_y: 0.5,
        };
        let units = sample_units(&spec).unwrap();
        let panel = simulate_panel(&units, &spec).unwrap();
        assert_eq!(panel.v_dim, 2);
        assert!(panel.units.iter().all(|s| s.v.len() == 20));
        panel.validate().unwrap();
    }
}

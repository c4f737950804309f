//! Fixtures shared by the benchmarks.

use obshte::dgp::{sample_units, simulate_covariates, simulate_panel, DgpSpec};
use obshte::learner::{build_examples, make_labels, LabeledExample};
use obshte::panel::fit_all;
use obshte::PanelDataset;

pub fn panel(n_units: usize, t_periods: usize) -> PanelDataset {
    let spec = DgpSpec::sufficient_regime(n_units, t_periods, 1);
    let units = sample_units(&spec).expect("valid spec");
    simulate_panel(&units, &spec).expect("valid spec")
}

pub fn examples(n_units: usize) -> Vec<LabeledExample> {
    let spec = DgpSpec::sufficient_regime(n_units, 60, 2);
    let units = sample_units(&spec).expect("valid spec");
    let fit = fit_all(&simulate_panel(&units, &spec).expect("valid spec"), 30).expect("fit");
    let labels = make_labels(&fit.estimates, 0.2).expect("labels");
    let cov = simulate_covariates(&units, &spec).expect("valid spec");
    build_examples(&labels, &cov).expect("aligned ids")
}

//! Unit-level treatment effects estimated from observational panels, checked
//! for rank preservation, generalized with a boosted classifier and
//! calibrated against a randomized experiment.

// `!(a > b)` guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dgp;
pub mod error;
pub mod expanalysis;
pub mod io;
pub mod learner;
pub mod linalg;
pub mod panel;
pub mod rankcheck;
pub mod rng;
pub mod stats;

pub use dgp::{CovariateTable, DgpSpec, ExperimentDataset, ExperimentRecord, PanelDataset, UnitParams, UnitSeries};
pub use error::{Error, Result};
pub use expanalysis::{MonotoneMap, RegressionFit, StratumReport, Target, UnitScore};
pub use learner::{GbdtModel, TrainConfig, TrainingLog, UnitLabel};
pub use panel::{PanelFit, Skip, SkipReason, UnitEffectEstimate};
pub use rankcheck::RankReport;

//! Covariates to predicted top-quantile membership of the observational effect.
//!
//! Noisy per-unit slopes are turned into a binary target (top `q` share gets
//! label 1), a gradient-boosted tree ensemble with logistic loss is trained on
//! it, and the predicted probability serves as the unit's score.

mod gbdt;
mod labels;
mod metrics;
mod tree;

pub use gbdt::{predict_score, train, GbdtModel, LinearHead, TrainConfig, TrainingLog, MODEL_FORMAT_VERSION};
pub use labels::{build_examples, make_labels, LabeledExample, UnitLabel};
pub use metrics::auc;
pub use tree::{Node, Tree};

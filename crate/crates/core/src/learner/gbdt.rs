//! Gradient boosting with logistic loss, plus an optional logistic layer over
//! one-hot leaf indicators.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labels::LabeledExample;
use super::metrics::auc;
use super::tree::{grow, ColumnData, GrowParams, Tree};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::stats::CompensatedSum;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Passes of block-coordinate Newton over the trees when fitting the head.
const HEAD_PASSES: usize = 5;
/// Ridge penalty on head weights.
const HEAD_L2: f64 = 1.0;
/// Halvings tried before a tree that fails to reduce the loss is zeroed.
const MAX_BACKTRACK: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Share of units labeled positive.
    pub quantile: f64,
    pub holdout_fraction: f64,
    pub use_linear_head: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 20,
            quantile: 0.2,
            holdout_fraction: 0.2,
            use_linear_head: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::validation("train.max_depth", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::validation("train.learning_rate", "must lie in (0, 1]"));
        }
        if self.min_leaf < 1 {
            return Err(Error::validation("train.min_leaf", "must be at least 1"));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::validation("train.quantile", "must lie in (0, 1)"));
        }
        if !(self.holdout_fraction >= 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::validation("train.holdout_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Logistic layer over leaf indicators: `weights[t][leaf]` plus `bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub bias: f64,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format_version: u32,
    pub n_features: usize,
    pub learning_rate: f64,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub linear_head: Option<LinearHead>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean training log-loss before the first tree and after each round.
    pub round_losses: Vec<f64>,
    /// Training log-loss after each head pass, when a head is fitted.
    pub head_losses: Vec<f64>,
    pub n_train: usize,
    pub n_holdout: usize,
    pub train_auc: Option<f64>,
    pub holdout_auc: Option<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z) - y z`, computed without overflow.
fn log_loss(margin: f64, label: f64) -> f64 {
    let softplus = if margin > 0.0 {
        margin + (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    };
    softplus - label * margin
}

fn mean_loss(margins: &[f64], labels: &[f64]) -> f64 {
    let s: CompensatedSum = margins.iter().zip(labels).map(|(&m, &y)| log_loss(m, y)).collect();
    s.value() / margins.len() as f64
}

impl GbdtModel {
    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.n_features {
            return Err(Error::validation(
                "features",
                format!("expected {} features, got {}", self.n_features, features.len()),
            ));
        }
        Ok(())
    }

    /// Raw log-odds.
    pub fn margin(&self, features: &[f64]) -> Result<f64> {
        self.check_dim(features)?;
        Ok(match &self.linear_head {
            Some(head) => {
                let mut z = CompensatedSum::new();
                z.add(head.bias);
                for (tree, w) in self.trees.iter().zip(&head.weights) {
                    z.add(w[tree.route(features).0]);
                }
                z.value()
            }
            None => {
                let mut z = CompensatedSum::new();
                for tree in &self.trees {
                    z.add(tree.route(features).1);
                }
                self.base_score + self.learning_rate * z.value()
            }
        })
    }

    pub fn predict_score(&self, features: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.margin(features)?))
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.par_iter().map(|r| self.predict_score(r)).collect()
    }
}

/// Probability that a unit with these covariates falls in the top quantile.
pub fn predict_score(model: &GbdtModel, features: &[f64]) -> Result<f64> {
    model.predict_score(features)
}

/// Boost `cfg.n_trees` trees on the training split. The holdout split, drawn
/// with the config seed, is only used for the reported holdout AUC.
pub fn train(examples: &[LabeledExample], cfg: &TrainConfig) -> Result<(GbdtModel, TrainingLog)> {
    cfg.validate()?;
    let n_features = match examples.first() {
        Some(e) => e.features.len(),
        None => return Err(Error::validation("examples", "must be nonempty")),
    };
    for e in examples {
        if e.features.len() != n_features {
            return Err(Error::validation(
                "features",
                format!(
                    "unit {} has {} features, expected {n_features}",
                    e.unit_id,
                    e.features.len()
                ),
            ));
        }
        if e.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(
                "features",
                format!("unit {} has a non-finite feature", e.unit_id),
            ));
        }
        if e.label > 1 {
            return Err(Error::validation(
                "label",
                format!("unit {} label is not 0/1", e.unit_id),
            ));
        }
    }

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut substream(cfg.seed, "holdout", 0));
    let n_holdout = (cfg.holdout_fraction * examples.len() as f64).round() as usize;
    let (holdout_idx, train_idx) = order.split_at(n_holdout);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();

    let needed = 2 * cfg.min_leaf;
    if train_idx.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: train_idx.len(),
        });
    }
    let labels: Vec<f64> = train_idx.iter().map(|&i| f64::from(examples[i].label)).collect();
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateLabels {
            class: u8::from(positives > 0),
        });
    }
    let rows: Vec<&[f64]> = train_idx.iter().map(|&i| examples[i].features.as_slice()).collect();
    let data = ColumnData::new(&rows, n_features);

    let rate = positives as f64 / labels.len() as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let n = labels.len();
    let mut margins = vec![base_score; n];
    let mut loss = mean_loss(&margins, &labels);
    let mut round_losses = vec![loss];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut leaf_rows: Vec<Vec<u32>> = Vec::with_capacity(cfg.n_trees);
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
    };
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut candidate = vec![0.0; n];

    for _ in 0..cfg.n_trees {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = labels[i] - p;
            hess[i] = p * (1.0 - p);
        }
        let (mut tree, leaves) = grow(&data, &grad, &hess, &params);
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACK {
            let values = tree.leaf_values();
            for i in 0..n {
                candidate[i] = margins[i] + cfg.learning_rate * values[leaves[i] as usize];
            }
            let new_loss = mean_loss(&candidate, &labels);
            if new_loss <= loss {
                loss = new_loss;
                std::mem::swap(&mut margins, &mut candidate);
                accepted = true;
                break;
            }
            tree.scale_leaves(0.5);
        }
        if !accepted {
            tree.scale_leaves(0.0);
        }
        round_losses.push(loss);
        trees.push(tree);
        leaf_rows.push(leaves);
    }

    let mut head_losses = Vec::new();
    let linear_head = if cfg.use_linear_head {
        let head = fit_head(
            &trees,
            &leaf_rows,
            cfg.learning_rate,
            base_score,
            &labels,
            &mut head_losses,
        );
        Some(head)
    } else {
        None
    };

    let model = GbdtModel {
        format_version: MODEL_FORMAT_VERSION,
        n_features,
        learning_rate: cfg.learning_rate,
        base_score,
        trees,
        linear_head,
        config: cfg.clone(),
    };

    let score_and_auc = |idx: &[usize]| -> Result<Option<f64>> {
        let scores: Vec<f64> = idx
            .par_iter()
            .map(|&i| model.predict_score(&examples[i].features))
            .collect::<Result<_>>()?;
        let labels: Vec<u8> = idx.iter().map(|&i| examples[i].label).collect();
        match auc(&scores, &labels) {
            Ok(a) => Ok(Some(a)),
            Err(Error::UndefinedAuc { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let log = TrainingLog {
        round_losses,
        head_losses,
        n_train: n,
        n_holdout,
        train_auc: score_and_auc(&train_idx)?,
        holdout_auc: score_and_auc(holdout_idx)?,
    };
    Ok((model, log))
}

/// Block-coordinate Newton on the leaf-indicator logistic model. Leaves of one
/// tree are mutually exclusive, so each block's Hessian is diagonal and the
/// per-leaf update is exact for the current margins.
fn fit_head(
    trees: &[Tree],
    leaf_rows: &[Vec<u32>],
    learning_rate: f64,
    base_score: f64,
    labels: &[f64],
    losses: &mut Vec<f64>,
) -> LinearHead {
    let n = labels.len();
    let mut weights: Vec<Vec<f64>> = trees
        .iter()
        .map(|t| t.leaf_values().iter().map(|v| learning_rate * v).collect())
        .collect();
    let mut bias = base_score;
    let mut margins: Vec<f64> = (0..n)
        .map(|i| {
            let mut z = CompensatedSum::new();
            z.add(bias);
            for (w, rows) in weights.iter().zip(leaf_rows) {
                z.add(w[rows[i] as usize]);
            }
            z.value()
        })
        .collect();

    for _ in 0..HEAD_PASSES {
        for (w, rows) in weights.iter_mut().zip(leaf_rows) {
            let mut g = vec![0.0; w.len()];
            let mut h = vec![0.0; w.len()];
            for i in 0..n {
                let p = sigmoid(margins[i]);
                let l = rows[i] as usize;
                g[l] += labels[i] - p;
                h[l] += p * (1.0 - p);
            }
            let steps: Vec<f64> = (0..w.len())
                .map(|l| (g[l] - HEAD_L2 * w[l]) / (h[l] + HEAD_L2))
                .collect();
            for (wl, s) in w.iter_mut().zip(&steps) {
                *wl += s;
            }
            for i in 0..n {
                margins[i] += steps[rows[i] as usize];
            }
        }
        let (mut g, mut h) = (0.0, 0.0);
        for i in 0..n {
            let p = sigmoid(margins[i]);
            g += labels[i] - p;
            h += p * (1.0 - p);
        }
        let step = g / h.max(1e-12);
        bias += step;
        for m in &mut margins {
            *m += step;
        }
        losses.push(mean_loss(&margins, labels));
    }
    LinearHead { bias, weights }
}
